"""Graphs, artifacts, instances and the longitudinal corpus, with JSON-lines I/O."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

from ._util import atomic_write_text, canonical_json
from .ontology import SchemaDef, validate_graph
from .triplets import Node, Triplet, canonical_triplet_text, triplet_line

__all__ = [
    "Node",
    "Triplet",
    "canonical_triplet_text",
    "triplet_line",
    "SituationGraph",
    "Artifact",
    "Instance",
    "Corpus",
    "CorpusError",
    "FingerprintMismatch",
    "MODALITIES",
    "DEFAULT_DOMAINS",
    "write_corpus",
    "read_corpus",
    "dumps_corpus",
]

MODALITIES = ("text", "image", "audio")
DEFAULT_DOMAINS = ("professional", "personal_lifestyle", "health_physical", "social_relational")


class CorpusError(ValueError):
    pass


class FingerprintMismatch(CorpusError):
    pass


@dataclass(frozen=True)
class SituationGraph:
    instance_id: str
    time_index: int
    triplets: frozenset[Triplet]

    def __post_init__(self) -> None:
        if self.time_index < 0:
            raise CorpusError(f"time_index must be >= 0, got {self.time_index}")
        object.__setattr__(self, "triplets", frozenset(self.triplets))

    def sorted_triplets(self) -> list[Triplet]:
        return sorted(self.triplets, key=canonical_triplet_text)

    def __len__(self) -> int:
        return len(self.triplets)


@dataclass(frozen=True)
class Artifact:
    artifact_id: str
    modality: str
    content: str
    meta: Mapping[str, str] = field(default_factory=dict)
    file_ref: str | None = None

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise CorpusError(f"unknown modality {self.modality!r}")
        if not self.content or not self.content.strip():
            raise CorpusError(f"artifact {self.artifact_id!r} has empty content")

    @property
    def genre(self) -> str:
        return self.meta.get("genre", "unknown")

    def to_dict(self) -> dict:
        d = {
            "artifact_id": self.artifact_id,
            "modality": self.modality,
            "content": self.content,
            "meta": dict(self.meta),
        }
        if self.file_ref is not None:
            d["file_ref"] = self.file_ref
        return d


@dataclass(frozen=True)
class Instance:
    instance_id: str
    time_index: int
    domain: str
    artifacts: tuple[Artifact, ...]
    gold: SituationGraph

    def __post_init__(self) -> None:
        object.__setattr__(self, "artifacts", tuple(self.artifacts))
        if self.gold.instance_id != self.instance_id or self.gold.time_index != self.time_index:
            raise CorpusError(f"gold graph metadata does not match instance {self.instance_id!r}")


@dataclass(frozen=True)
class Corpus:
    persona: Mapping[str, str]
    instances: tuple[Instance, ...]
    schema_ref: str
    domains: tuple[str, ...] = DEFAULT_DOMAINS

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "domains", tuple(self.domains))
        prev = -1
        ids = set()
        for inst in self.instances:
            if inst.time_index <= prev:
                raise CorpusError(f"time_index must be strictly increasing at {inst.instance_id!r}")
            prev = inst.time_index
            if inst.instance_id in ids:
                raise CorpusError(f"duplicate instance_id {inst.instance_id!r}")
            ids.add(inst.instance_id)
            if inst.domain not in self.domains:
                raise CorpusError(f"instance {inst.instance_id!r}: unknown domain {inst.domain!r}")

    def __len__(self) -> int:
        return len(self.instances)

    def by_id(self) -> dict[str, Instance]:
        return {i.instance_id: i for i in self.instances}

    @property
    def n_artifacts(self) -> int:
        return sum(len(i.artifacts) for i in self.instances)

    def validate(self, schema: SchemaDef) -> dict[str, list]:
        """Violations per instance id (only instances with findings are listed)."""
        out = {}
        for inst in self.instances:
            v = validate_graph(schema, inst.gold)
            if v:
                out[inst.instance_id] = v
        return out


def _instance_record(inst: Instance) -> dict:
    return {
        "instance_id": inst.instance_id,
        "time_index": inst.time_index,
        "domain": inst.domain,
        "artifacts": [a.to_dict() for a in inst.artifacts],
        "gold": [t.as_row() for t in inst.gold.sorted_triplets()],
    }


def dumps_corpus(c: Corpus) -> str:
    header = {"persona": dict(c.persona), "schema_fingerprint": c.schema_ref, "domain_list": list(c.domains)}
    lines = [canonical_json(header)]
    lines.extend(canonical_json(_instance_record(i)) for i in c.instances)
    return "\n".join(lines) + "\n"


def write_corpus(c: Corpus, sink: str | os.PathLike | IO[str], schema: SchemaDef | None = None) -> None:
    if schema is not None:
        if schema.fingerprint != c.schema_ref:
            raise FingerprintMismatch("corpus schema_ref does not match the supplied schema")
        bad = c.validate(schema)
        if bad:
            first = next(iter(bad))
            raise CorpusError(f"{len(bad)} gold graphs violate the schema, first: {first}: {bad[first][0]}")
    text = dumps_corpus(c)
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        atomic_write_text(sink, text)


def _require(rec: Mapping, key: str, typ, lineno: int):
    if key not in rec:
        raise CorpusError(f"line {lineno}: missing field {key!r}")
    val = rec[key]
    if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
        raise CorpusError(f"line {lineno}: field {key!r} has wrong type")
    return val


def _parse_instance(rec: Mapping, lineno: int, domains: Iterable[str]) -> Instance:
    iid = _require(rec, "instance_id", str, lineno)
    t = _require(rec, "time_index", int, lineno)
    domain = _require(rec, "domain", str, lineno)
    if domain not in domains:
        raise CorpusError(f"line {lineno}: field 'domain' has unknown value {domain!r}")
    arts = []
    for j, a in enumerate(_require(rec, "artifacts", list, lineno)):
        try:
            arts.append(
                Artifact(
                    artifact_id=a["artifact_id"],
                    modality=a["modality"],
                    content=a["content"],
                    meta=dict(a.get("meta") or {}),
                    file_ref=a.get("file_ref"),
                )
            )
        except (KeyError, TypeError, CorpusError) as exc:
            raise CorpusError(f"line {lineno}: artifacts[{j}]: {exc}") from exc
    triplets = []
    for j, row in enumerate(_require(rec, "gold", list, lineno)):
        if not (isinstance(row, list) and len(row) == 5 and all(isinstance(x, str) and x.strip() for x in row)):
            raise CorpusError(f"line {lineno}: field 'gold[{j}]' must be 5 non-empty strings")
        triplets.append(Triplet.of(*row))
    return Instance(iid, t, domain, tuple(arts), SituationGraph(iid, t, frozenset(triplets)))


def read_corpus(source: str | os.PathLike | IO[str], schema: SchemaDef | None = None) -> Corpus:
    """Parse a corpus file; with ``schema`` given the fingerprint must match."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise CorpusError("line 1: missing header record")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line 1: malformed header: {exc.msg}") from exc
    if not isinstance(header, dict):
        raise CorpusError("line 1: header must be an object")
    persona = _require(header, "persona", dict, 1)
    fp = _require(header, "schema_fingerprint", str, 1)
    domains = tuple(_require(header, "domain_list", list, 1))
    if schema is not None and schema.fingerprint != fp:
        raise FingerprintMismatch(
            f"corpus was generated for schema {fp[:12]}..., supplied schema is {schema.fingerprint[:12]}..."
        )
    instances = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed record: {exc.msg}") from exc
        if not isinstance(rec, dict):
            raise CorpusError(f"line {lineno}: record must be an object")
        instances.append(_parse_instance(rec, lineno, domains))
    try:
        return Corpus(dict(persona), tuple(instances), fp, domains)
    except CorpusError as exc:
        raise CorpusError(f"invalid corpus: {exc}") from exc
