"""Situation-graph schema: node kinds, typed predicates, arity map and structural checks."""
from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Iterable, Mapping, Sequence

from ._util import canonical_json, sha256_text
from .triplets import Triplet, canon, has_reserved_chars

STRATA = ("participants", "spatio_temporal", "contextual_atmosphere", "psychological")
PSYCHOLOGICAL = "psychological"

VIOLATION_KINDS = (
    "unknown_predicate",
    "unknown_node_kind",
    "name_not_in_vocabulary",
    "arity_violation",
    "size_below_min",
    "size_above_max",
    "completeness_unmet",
    "duplicate_triplet",
)

# Violations that make a predicted triplet count towards the predicate violation rate.
PREDICATE_VIOLATIONS = frozenset({"unknown_predicate", "arity_violation"})


class SchemaError(ValueError):
    """Raised by :func:`load_schema`; ``issues`` holds ``(path, message)`` pairs."""

    def __init__(self, issues: Sequence[tuple[str, str]]):
        self.issues = list(issues)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.issues))


@dataclass(frozen=True)
class NodeKind:
    id: str
    stratum: str
    vocabulary: tuple[str, ...]

    @cached_property
    def names(self) -> frozenset[str]:
        return frozenset(canon(v) for v in self.vocabulary)


@dataclass(frozen=True)
class Predicate:
    id: str
    arity: tuple[tuple[str, str], ...]
    latent: bool = False

    @cached_property
    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((canon(s), canon(o)) for s, o in self.arity)


@dataclass(frozen=True)
class CompletenessRule:
    """At least one triplet must use one of ``ids`` (a predicate or an object kind)."""

    type: str
    ids: tuple[str, ...]

    @property
    def label(self) -> str:
        return f"{self.type}:{'|'.join(self.ids)}"

    def satisfied_by(self, t: Triplet) -> bool:
        target = t.predicate if self.type == "predicate" else t.object.kind
        return target in {canon(i) for i in self.ids}


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: object
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.subject}: {self.message}"


@dataclass(frozen=True)
class SchemaDef:
    kinds: tuple[NodeKind, ...]
    predicates: tuple[Predicate, ...]
    min_triplets: int
    max_triplets: int
    completeness_rules: tuple[CompletenessRule, ...] = field(default=())

    @cached_property
    def _kind_index(self) -> dict[str, NodeKind]:
        return {canon(k.id): k for k in self.kinds}

    @cached_property
    def _pred_index(self) -> dict[str, Predicate]:
        return {canon(p.id): p for p in self.predicates}

    def kind(self, kind_id: str) -> NodeKind | None:
        return self._kind_index.get(canon(kind_id))

    def predicate(self, pred_id: str) -> Predicate | None:
        return self._pred_index.get(canon(pred_id))

    def stratum_of(self, kind_id: str) -> str | None:
        k = self.kind(kind_id)
        return k.stratum if k else None

    @cached_property
    def latent_predicates(self) -> frozenset[str]:
        return frozenset(canon(p.id) for p in self.predicates if p.latent)

    @cached_property
    def psychological_kinds(self) -> frozenset[str]:
        return frozenset(canon(k.id) for k in self.kinds if k.stratum == PSYCHOLOGICAL)

    @property
    def strata(self) -> list[str]:
        return [s for s in STRATA if any(k.stratum == s for k in self.kinds)]

    def to_dict(self) -> dict:
        return {
            "kinds": [
                {"id": k.id, "stratum": k.stratum, "vocabulary": list(k.vocabulary)} for k in self.kinds
            ],
            "predicates": [
                {"id": p.id, "latent": p.latent, "arity": [list(a) for a in p.arity]}
                for p in self.predicates
            ],
            "min_triplets": self.min_triplets,
            "max_triplets": self.max_triplets,
            "completeness_rules": [
                {"type": r.type, "id": r.ids[0] if len(r.ids) == 1 else list(r.ids)}
                for r in self.completeness_rules
            ],
        }

    @cached_property
    def fingerprint(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))


def serialize_schema(schema: SchemaDef) -> str:
    return canonical_json(schema.to_dict(), indent=2) + "\n"


def _parse(doc: object) -> SchemaDef:
    issues: list[tuple[str, str]] = []
    if not isinstance(doc, Mapping):
        raise SchemaError([("$", "top level must be an object")])
    for key in ("kinds", "predicates", "min_triplets", "max_triplets"):
        if key not in doc:
            issues.append((f"$.{key}", "missing"))
    if issues:
        raise SchemaError(issues)

    kinds: list[NodeKind] = []
    seen_kinds: set[str] = set()
    for i, raw in enumerate(doc["kinds"] or []):
        path = f"$.kinds[{i}]"
        if not isinstance(raw, Mapping):
            issues.append((path, "must be an object"))
            continue
        kid, stratum, vocab = raw.get("id"), raw.get("stratum"), raw.get("vocabulary")
        if not isinstance(kid, str) or not kid.strip() or has_reserved_chars(kid):
            issues.append((f"{path}.id", f"invalid kind id {kid!r}"))
            continue
        if canon(kid) in seen_kinds:
            issues.append((f"{path}.id", f"duplicate kind id {kid!r}"))
        seen_kinds.add(canon(kid))
        if stratum not in STRATA:
            issues.append((f"{path}.stratum", f"unknown stratum {stratum!r}"))
        if not isinstance(vocab, list) or not vocab:
            issues.append((f"{path}.vocabulary", "empty vocabulary"))
            vocab = []
        names: set[str] = set()
        for j, name in enumerate(vocab):
            if not isinstance(name, str) or not name.strip() or has_reserved_chars(name):
                issues.append((f"{path}.vocabulary[{j}]", f"invalid name {name!r}"))
            elif canon(name) in names:
                issues.append((f"{path}.vocabulary[{j}]", f"duplicate name {name!r}"))
            else:
                names.add(canon(name))
        kinds.append(NodeKind(kid, stratum, tuple(v for v in vocab if isinstance(v, str))))

    preds: list[Predicate] = []
    seen_preds: set[str] = set()
    for i, raw in enumerate(doc["predicates"] or []):
        path = f"$.predicates[{i}]"
        if not isinstance(raw, Mapping):
            issues.append((path, "must be an object"))
            continue
        pid, arity, latent = raw.get("id"), raw.get("arity"), raw.get("latent", False)
        if not isinstance(pid, str) or not pid.strip() or has_reserved_chars(pid):
            issues.append((f"{path}.id", f"invalid predicate id {pid!r}"))
            continue
        if canon(pid) in seen_preds:
            issues.append((f"{path}.id", f"duplicate predicate id {pid!r}"))
        seen_preds.add(canon(pid))
        if not isinstance(latent, bool):
            issues.append((f"{path}.latent", "must be a boolean"))
        if not isinstance(arity, list) or not arity:
            issues.append((f"{path}.arity", "empty arity"))
            arity = []
        pairs = []
        for j, pair in enumerate(arity):
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, str) for x in pair)):
                issues.append((f"{path}.arity[{j}]", "must be [subject_kind, object_kind]"))
                continue
            for x in pair:
                if canon(x) not in seen_kinds:
                    issues.append((f"{path}.arity[{j}]", f"dangling kind reference {x!r}"))
            pairs.append((pair[0], pair[1]))
        preds.append(Predicate(pid, tuple(pairs), bool(latent)))

    rules: list[CompletenessRule] = []
    for i, raw in enumerate(doc.get("completeness_rules") or []):
        path = f"$.completeness_rules[{i}]"
        rtype = raw.get("type") if isinstance(raw, Mapping) else None
        rid = raw.get("id") if isinstance(raw, Mapping) else None
        ids = (rid,) if isinstance(rid, str) else tuple(rid) if isinstance(rid, list) and rid else ()
        if rtype not in ("predicate", "object_kind") or not ids or not all(isinstance(x, str) for x in ids):
            issues.append((path, "must be {type: predicate|object_kind, id}"))
            continue
        known = seen_preds if rtype == "predicate" else seen_kinds
        for x in ids:
            if canon(x) not in known:
                issues.append((f"{path}.id", f"dangling {rtype} reference {x!r}"))
        rules.append(CompletenessRule(rtype, ids))

    lo, hi = doc["min_triplets"], doc["max_triplets"]
    if not (isinstance(lo, int) and isinstance(hi, int) and 0 < lo <= hi):
        issues.append(("$.min_triplets", f"need 0 < min_triplets <= max_triplets, got {lo!r}, {hi!r}"))
    if issues:
        raise SchemaError(issues)
    return SchemaDef(tuple(kinds), tuple(preds), lo, hi, tuple(rules))


def load_schema(source: str | os.PathLike | Mapping) -> SchemaDef:
    """Load a schema from JSON text, a file path, or an already-parsed mapping."""
    if isinstance(source, Mapping):
        return _parse(source)
    text = str(source)
    if isinstance(source, os.PathLike) or not text.lstrip().startswith("{"):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError([(f"line {exc.lineno} col {exc.colno}", exc.msg)]) from exc
    return _parse(doc)


def default_schema_text() -> str:
    return resources.files("sgp.data").joinpath("default_schema.json").read_text(encoding="utf-8")


def default_schema() -> SchemaDef:
    return load_schema(default_schema_text())


def check_triplet(schema: SchemaDef, t: Triplet) -> list[Violation]:
    out: list[Violation] = []
    pred = schema.predicate(t.predicate)
    if pred is None:
        out.append(Violation("unknown_predicate", t, f"predicate {t.predicate!r} is not in the schema"))
    for role, node in (("subject", t.subject), ("object", t.object)):
        kind = schema.kind(node.kind)
        if kind is None:
            out.append(Violation("unknown_node_kind", t, f"{role} kind {node.kind!r} is not in the schema"))
        elif node.name not in kind.names:
            out.append(
                Violation("name_not_in_vocabulary", t, f"{role} name {node.name!r} not in {kind.id} vocabulary")
            )
    if pred is not None and (t.subject.kind, t.object.kind) not in pred.pairs:
        out.append(
            Violation(
                "arity_violation",
                t,
                f"({t.subject.kind}, {t.object.kind}) is not a permitted pair for {pred.id}",
            )
        )
    return out


def validate_graph(schema: SchemaDef, g) -> list[Violation]:
    """Per-triplet checks plus size bounds, completeness rules and duplicates.

    ``g`` may be a :class:`~sgp.corpus.SituationGraph` or any iterable of triplets;
    duplicates can only be reported for the latter.
    """
    triplets = list(getattr(g, "triplets", g))
    out: list[Violation] = []
    for t in triplets:
        out.extend(check_triplet(schema, t))
    for t, n in Counter(triplets).items():
        if n > 1:
            out.append(Violation("duplicate_triplet", t, f"appears {n} times"))
    n = len(set(triplets))
    if n < schema.min_triplets:
        out.append(Violation("size_below_min", "graph", f"{n} triplets < min {schema.min_triplets}"))
    if n > schema.max_triplets:
        out.append(Violation("size_above_max", "graph", f"{n} triplets > max {schema.max_triplets}"))
    for rule in schema.completeness_rules:
        if not any(rule.satisfied_by(t) for t in triplets):
            out.append(Violation("completeness_unmet", rule.label, "no triplet satisfies this rule"))
    return out


def is_latent(schema: SchemaDef, t: Triplet) -> bool:
    return t.predicate in schema.latent_predicates or t.object.kind in schema.psychological_kinds


def partition_latent_surface(
    schema: SchemaDef, ts: Iterable[Triplet]
) -> tuple[frozenset[Triplet], frozenset[Triplet]]:
    latent, surface = set(), set()
    for t in ts:
        (latent if is_latent(schema, t) else surface).add(t)
    return frozenset(latent), frozenset(surface)


def schema_stats(schema: SchemaDef) -> dict:
    per_stratum = {
        s: {
            "kinds": [k.id for k in schema.kinds if k.stratum == s],
            "values": sum(len(k.vocabulary) for k in schema.kinds if k.stratum == s),
        }
        for s in schema.strata
    }
    return {
        "kinds": len(schema.kinds),
        "predicates": len(schema.predicates),
        "latent_predicates": len(schema.latent_predicates),
        "strata": len(schema.strata),
        "per_stratum": per_stratum,
    }
