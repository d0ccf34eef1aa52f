"""Cross-validated evaluation: splits, prompt assembly, prediction parsing, runs and aggregation."""
from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._util import canonical_json, derive_seed, rng_stream, sha256_text
from .backends import BackendError, Backends
from .corpus import Corpus, SituationGraph
from .decompose import DecomposeError, bundle_text
from .metrics import ENTROPY_MODES, CONVENTIONS, build_entropy_context, score_instance
from .ontology import SchemaDef, validate_graph
from .retrieval import embed_texts, top_k
from .triplets import Node, Triplet, canonical_triplet_text, triplet_line

log = logging.getLogger(__name__)

PROTOCOLS = ("zero_shot", "ra_icl")
TASK_MODES = ("static", "temporal_oracle", "temporal_autoregressive")
OUTPUT_GRAMMAR = "subject_kind:subject_name | predicate | object_kind:object_name"


class RetrievalLeak(AssertionError):
    """A demonstration was drawn from the active test fold."""


# -------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    stratify_by: str = "domain"
    seed: int = 0
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "stratify_by": self.stratify_by,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "folds": [{"retrieval": list(r), "test": list(t)} for r, t in self.folds],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitPlan":
        folds = tuple((tuple(f["retrieval"]), tuple(f["test"])) for f in d["folds"])
        return cls(folds, d.get("stratify_by", "domain"), int(d.get("seed", 0)), tuple(d.get("warnings", ())))


def make_splits(
    corpus: Corpus,
    folds: int = 5,
    test_fraction: float | None = 0.2,
    stratify_by: str = "domain",
    seed: int = 0,
) -> SplitPlan:
    """Stratified k-fold partition: each instance lands in exactly one test fold.

    Strata are shuffled independently, concatenated in sorted stratum order and dealt
    round-robin, so per-fold stratum counts differ from proportional by at most one.
    """
    n = len(corpus)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"{folds} folds requested for {n} instances")
    if test_fraction is not None and not math.isclose(test_fraction, 1 / folds, abs_tol=1e-9):
        raise ValueError(f"test_fraction {test_fraction} is inconsistent with {folds}-fold partitioning")
    strata: dict[str, list[str]] = defaultdict(list)
    for inst in corpus.instances:
        if not hasattr(inst, stratify_by):
            raise ValueError(f"instances have no field {stratify_by!r}")
        strata[str(getattr(inst, stratify_by))].append(inst.instance_id)
    warnings = []
    dealt: list[str] = []
    for name in sorted(strata):
        ids = sorted(strata[name])
        if len(ids) < folds:
            warnings.append(f"stratum {name!r} has {len(ids)} instances for {folds} folds")
        perm = rng_stream(seed, "split", name).permutation(len(ids))
        dealt.extend(ids[i] for i in perm)
    test_sets: list[list[str]] = [[] for _ in range(folds)]
    for pos, iid in enumerate(dealt):
        test_sets[pos % folds].append(iid)
    all_ids = [i.instance_id for i in corpus.instances]
    plan = []
    for test in test_sets:
        tset = set(test)
        plan.append((tuple(i for i in all_ids if i not in tset), tuple(sorted(test))))
    for w in warnings:
        log.warning(w)
    return SplitPlan(tuple(plan), stratify_by, seed, tuple(warnings))


# ------------------------------------------------------------------- prompts


def schema_prompt(schema: SchemaDef) -> str:
    lines = ["## Ontology", "Node kinds (stratum): allowed names"]
    for k in schema.kinds:
        lines.append(f"- {k.id} ({k.stratum}): {', '.join(k.vocabulary)}")
    lines.append("Predicates: allowed subject_kind -> object_kind pairs")
    for p in schema.predicates:
        pairs = "; ".join(f"{s} -> {o}" for s, o in p.arity)
        lines.append(f"- {p.id}{' [latent]' if p.latent else ''}: {pairs}")
    rules = [f"{r.type} {' or '.join(r.ids)}" for r in schema.completeness_rules]
    lines.append(f"Constraints: between {schema.min_triplets} and {schema.max_triplets} triplets per graph.")
    if rules:
        lines.append("Each graph must include at least one triplet with: " + "; ".join(rules) + ".")
    return "\n".join(lines)


def _triplet_block(ts: Iterable[Triplet]) -> str:
    return "\n".join(triplet_line(t) for t in sorted(ts, key=canonical_triplet_text))


def build_prompt(
    schema: SchemaDef,
    query_text: str,
    demonstrations: Sequence[tuple[str, Iterable[Triplet]]] = (),
    history: Sequence[SituationGraph] = (),
) -> str:
    parts = [
        "Infer the situation graph behind the artifacts below. Use only the kinds, names "
        "and predicates defined by the ontology.",
        schema_prompt(schema),
    ]
    if history:
        parts.append("## History (oldest first)")
        for g in history:
            parts.append(f"### t={g.time_index}\n{_triplet_block(g.triplets)}")
    if demonstrations:
        parts.append("## Examples")
        for i, (text, gold) in enumerate(demonstrations, start=1):
            parts.append(f"### Example {i}\nArtifacts:\n{text}\nTriplets:\n{_triplet_block(gold)}")
    parts.append(f"## Artifacts\n{query_text}")
    parts.append(f"## Output format\nOne triplet per line: {OUTPUT_GRAMMAR}\nNo other text.")
    return "\n\n".join(parts) + "\n"


_LINE = re.compile(r"^(?:[-*•]\s*|\d+[.)]\s*)?([^:|]+):([^|]+)\|([^|]+)\|([^:|]+):([^|]+)$")


def parse_prediction(raw: str, schema: SchemaDef | None = None) -> tuple[frozenset[Triplet], int]:
    """Extract grammar-conforming lines; malformed lines are counted, never fatal.

    Triplets are not schema-filtered so the violation rate still sees invalid predicates.
    """
    out: set[Triplet] = set()
    failures = 0
    for line in raw.splitlines():
        line = line.strip().strip("`").strip()
        if not line:
            continue
        m = _LINE.match(line)
        parts = [g.strip() for g in m.groups()] if m else []
        if not m or not all(parts):
            failures += 1
            continue
        out.add(Triplet(Node(parts[0], parts[1]), parts[2], Node(parts[3], parts[4])))
    return frozenset(out), failures


# ----------------------------------------------------------------- protocols


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str = "zero_shot"
    k: int = 3
    task_mode: str = "static"
    context_window: int = 2
    runs_per_fold: int = 3
    tau: float = 0.5
    seed: int = 0
    temperature: float = 0.0
    entropy_mode: str = "empirical"
    entropy_convention: str = "baseline"

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"unknown task mode {self.task_mode!r}")
        if self.k < 0 or (self.protocol == "ra_icl" and self.k < 1):
            raise ValueError("ra_icl needs k >= 1")
        if self.task_mode != "static" and self.context_window < 1:
            raise ValueError("temporal modes need context_window >= 1")
        if self.runs_per_fold < 1:
            raise ValueError("runs_per_fold must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.entropy_mode not in ENTROPY_MODES or self.entropy_convention not in CONVENTIONS:
            raise ValueError("unknown entropy mode or convention")

    @property
    def condition(self) -> str:
        return self.protocol if self.task_mode == "static" else f"{self.protocol}+{self.task_mode}"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown protocol config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    config: dict
    records: list[dict]
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "records": self.records, "aggregates": self.aggregates}

    def to_json(self) -> str:
        return canonical_json(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "EvalReport":
        for key in ("config", "records", "aggregates"):
            if key not in d:
                raise ValueError(f"report is missing {key!r}")
        if not isinstance(d["records"], list):
            raise ValueError("report records must be a list")
        return cls(dict(d["config"]), list(d["records"]), dict(d["aggregates"]))


def _history(
    cfg: ProtocolConfig, pos: int, corpus: Corpus, preds: Mapping[str, frozenset[Triplet]]
) -> tuple[list[SituationGraph], int]:
    if cfg.task_mode == "static":
        return [], 0
    window = corpus.instances[max(0, pos - cfg.context_window) : pos]
    if cfg.task_mode == "temporal_oracle":
        return [i.gold for i in window], 0
    out, fallbacks = [], 0
    for inst in window:
        if inst.instance_id in preds:
            out.append(SituationGraph(inst.instance_id, inst.time_index, preds[inst.instance_id]))
        else:
            out.append(inst.gold)
            fallbacks += 1
    return out, fallbacks


def run_experiment(
    corpus: Corpus,
    plan: SplitPlan,
    cfg: ProtocolConfig,
    backends: Backends,
    schema: SchemaDef,
    jobs: int = 1,
) -> EvalReport:
    """Score every test instance of every fold, ``runs_per_fold`` times.

    Deterministic generators are queried once per fold and their records copied to
    the remaining runs. Backend and decomposition failures mark the instance errored;
    a retrieval leak aborts the experiment.
    """
    if corpus.schema_ref != schema.fingerprint:
        raise ValueError("corpus was not generated for this schema")
    for inst in corpus.instances:
        if validate_graph(schema, inst.gold):
            raise ValueError(f"gold graph {inst.instance_id} violates the schema")
    known = {i.instance_id for i in corpus.instances}
    for r_ids, t_ids in plan.folds:
        if set(r_ids) & set(t_ids) or (set(r_ids) | set(t_ids)) - known:
            raise ValueError("split plan does not match this corpus")

    pos = {inst.instance_id: p for p, inst in enumerate(corpus.instances)}
    by_id = corpus.by_id()
    texts: dict[str, str] = {}
    decompose_errors: dict[str, str] = {}
    for inst in corpus.instances:
        try:
            texts[inst.instance_id] = bundle_text(inst.artifacts, backends.encoders)
        except (DecomposeError, BackendError) as exc:
            decompose_errors[inst.instance_id] = f"{type(exc).__name__}: {exc}"
    entropy = build_entropy_context(schema, [i.gold for i in corpus.instances], cfg.entropy_mode, cfg.entropy_convention)

    indexes = []
    for retrieval_ids, _ in plan.folds:
        if cfg.protocol != "ra_icl":
            indexes.append(None)
            continue
        usable = {i: texts[i] for i in retrieval_ids if i in texts}
        indexes.append(embed_texts(usable, backends.embedder))

    deterministic = bool(getattr(backends.generator, "deterministic", False))
    effective_runs = 1 if deterministic else cfg.runs_per_fold

    def run_task(fold: int, run: int) -> list[dict]:
        _, test_ids = plan.folds[fold]
        test_set = set(test_ids)
        index = indexes[fold]
        preds: dict[str, frozenset[Triplet]] = {}
        records = []
        for iid in sorted(test_ids, key=pos.__getitem__):
            inst = by_id[iid]
            rec = {
                "fold": fold,
                "run": run,
                "instance_id": iid,
                "time_index": inst.time_index,
                "domain": inst.domain,
                "protocol": cfg.protocol,
                "task_mode": cfg.task_mode,
                "condition": cfg.condition,
            }
            try:
                if iid in decompose_errors:
                    raise DecomposeError(decompose_errors[iid])
                demos: list[str] = []
                if index is not None:
                    q = np.asarray(backends.embedder.embed([texts[iid]])[0], dtype=float)
                    demos = top_k(q, index, cfg.k, query_id=iid)
                    leaked = set(demos) & test_set
                    if leaked:
                        raise RetrievalLeak(f"fold {fold}: demonstrations {sorted(leaked)} are test instances")
                history, fallbacks = _history(cfg, pos[iid], corpus, preds)
                prompt = build_prompt(
                    schema, texts[iid], [(texts[d], by_id[d].gold.triplets) for d in demos], history
                )
                params = {
                    "instance_id": iid,
                    "seed": derive_seed(cfg.seed, fold, run, iid),
                    "temperature": cfg.temperature,
                }
                raw = backends.generator.generate(prompt, params)
                triplets, failures = parse_prediction(raw, schema)
                preds[iid] = triplets
                m = score_instance(triplets, inst.gold.triplets, schema, backends.embedder, cfg.tau, entropy)
                gold_txt = {canonical_triplet_text(t) for t in inst.gold.triplets}
                rec.update(
                    status="ok",
                    demonstrations=demos,
                    history=[g.instance_id for g in history],
                    history_fallbacks=fallbacks,
                    prompt_sha256=sha256_text(prompt),
                    parse_failures=failures,
                    n_pred=len(triplets),
                    n_gold=len(gold_txt),
                    strict_tp=len(gold_txt & {canonical_triplet_text(t) for t in triplets}),
                    metrics=m.flat(),
                )
            except (BackendError, DecomposeError) as exc:
                rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
                log.warning("instance %s errored: %s", iid, exc)
            records.append(rec)
        return records

    tasks = [(f, r) for f in range(len(plan.folds)) for r in range(effective_runs)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda fr: run_task(*fr), tasks))
    else:
        results = [run_task(f, r) for f, r in tasks]
    records = [rec for chunk in results for rec in chunk]
    if deterministic:
        copies = []
        for run in range(1, cfg.runs_per_fold):
            copies.extend({**rec, "run": run, "copied_from_run": 0} for rec in records)
        records.extend(copies)
    records.sort(key=lambda r: (r["condition"], r["fold"], r["run"], pos[r["instance_id"]]))

    config = {
        "protocol": cfg.to_dict(),
        "condition": cfg.condition,
        "effective_runs": effective_runs,
        "plan": {"folds": len(plan.folds), "seed": plan.seed, "stratify_by": plan.stratify_by},
        "schema_fingerprint": schema.fingerprint,
        "corpus": {"instances": len(corpus), "persona": corpus.persona.get("name", "")},
        "backends": backends.fingerprints(),
        "entropy": entropy.to_dict(),
    }
    return EvalReport(config, records, aggregate(records))


# --------------------------------------------------------------- aggregation

REPORTED_METRICS = (
    "strict_precision", "strict_recall", "strict_f1",
    "soft_precision", "soft_recall", "soft_f1",
    "pvr",
    "soft_latent_precision", "soft_latent_recall", "soft_latent_f1",
    "soft_surface_precision", "soft_surface_recall", "soft_surface_f1",
    "gap_ls", "latent_f1_norm", "surface_f1_norm", "gap_norm",
)


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def sample_sd(xs: Sequence[float]) -> float:
    """Sample standard deviation (n-1); 0 for fewer than two values."""
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def aggregate(report: EvalReport | Sequence[Mapping]) -> dict:
    """Per condition and metric: instance-level mean/SD and fold x run level mean/SD.

    ``mean`` is over all records and ``sd`` over the fold x run means.
    """
    records = report.records if isinstance(report, EvalReport) else list(report)
    if not records:
        raise ValueError("cannot aggregate an empty report")
    by_cond: dict[str, list[Mapping]] = defaultdict(list)
    for r in records:
        by_cond[r["condition"]].append(r)
    out = {}
    for cond, recs in sorted(by_cond.items()):
        ok = [r for r in recs if r.get("status") == "ok"]
        errored = len(recs) - len(ok)
        if not ok:
            out[cond] = {"empty": True, "errored": errored, "records": len(recs)}
            continue
        metrics = {}
        for name in REPORTED_METRICS:
            vals = [r["metrics"][name] for r in ok if r["metrics"].get(name) is not None]
            if not vals:
                metrics[name] = None
                continue
            cells: dict[tuple[int, int], list[float]] = defaultdict(list)
            for r in ok:
                v = r["metrics"].get(name)
                if v is not None:
                    cells[(r["fold"], r["run"])].append(v)
            cell_means = [_mean(cells[c]) for c in sorted(cells)]
            metrics[name] = {
                "mean": _mean(vals),
                "sd": sample_sd(cell_means),
                "instance_sd": sample_sd(vals),
                "foldrun_mean": _mean(cell_means),
                "n": len(vals),
                "n_cells": len(cell_means),
            }
        totals = {k: sum(r[k] for r in ok) for k in ("n_pred", "n_gold", "strict_tp", "parse_failures")}
        out[cond] = {
            "empty": False,
            "errored": errored,
            "records": len(recs),
            "metrics": metrics,
            "micro": {
                **totals,
                "strict_precision": totals["strict_tp"] / totals["n_pred"] if totals["n_pred"] else 0.0,
                "strict_recall": totals["strict_tp"] / totals["n_gold"] if totals["n_gold"] else 0.0,
            },
        }
    return out
