"""Evaluation metrics: predicate violation rate, strict/soft PRF, entropy normalisation, latent-surface gap."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ontology import PREDICATE_VIOLATIONS, SchemaDef, check_triplet, is_latent, partition_latent_surface
from .triplets import Triplet, canonical_triplet_text

ENTROPY_MODES = ("empirical", "uniform", "per_kind")
CONVENTIONS = ("baseline", "reciprocal")


class MetricUndefined(ArithmeticError):
    """A metric has no defined value for these inputs (e.g. zero baseline entropy)."""


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "PRF":
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


ZERO = PRF(0.0, 0.0, 0.0)


def strict_prf(pred: Iterable[Triplet], gold: Iterable[Triplet]) -> PRF:
    p_txt = {canonical_triplet_text(t) for t in pred}
    g_txt = {canonical_triplet_text(t) for t in gold}
    tp = len(p_txt & g_txt)
    precision = tp / len(p_txt) if p_txt else 0.0
    recall = tp / len(g_txt) if g_txt else 0.0
    return PRF.from_pr(precision, recall)


def max_assignment(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximum-weight one-to-one assignment on a (possibly rectangular) matrix."""
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        return np.empty(0, int), np.empty(0, int), 0.0
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return rows, cols, math.fsum(weights[rows, cols].tolist())


def similarity_matrix(pred_texts: list[str], gold_texts: list[str], embedder) -> np.ndarray:
    """Cosine similarity clamped to [0, 1]; identical texts score exactly 1."""
    uniq = sorted(set(pred_texts) | set(gold_texts))
    pos = {t: i for i, t in enumerate(uniq)}
    vecs = np.asarray(embedder.embed(uniq), dtype=float)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    full = np.clip(unit @ unit.T, 0.0, 1.0)
    np.fill_diagonal(full, 1.0)
    return full[np.ix_([pos[t] for t in pred_texts], [pos[t] for t in gold_texts])]


def soft_prf(pred: Iterable[Triplet], gold: Iterable[Triplet], embedder, tau: float = 0.5) -> PRF:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    # sorted canonical text fixes the tie-break among equal-mass assignments
    p_txt = sorted({canonical_triplet_text(t) for t in pred})
    g_txt = sorted({canonical_triplet_text(t) for t in gold})
    if not p_txt or not g_txt:
        return ZERO
    return soft_prf_matrix(similarity_matrix(p_txt, g_txt, embedder), tau)


def soft_prf_matrix(sim: np.ndarray, tau: float = 0.5) -> PRF:
    """Soft PRF from a pred x gold similarity matrix: entries below ``tau`` are zeroed."""
    sim = np.array(sim, dtype=float)
    if sim.size == 0:
        return ZERO
    sim[sim < tau] = 0.0
    _, _, mass = max_assignment(sim)
    return PRF.from_pr(mass / sim.shape[0], mass / sim.shape[1])


def is_predicate_violation(schema: SchemaDef, t: Triplet) -> bool:
    return any(v.kind in PREDICATE_VIOLATIONS for v in check_triplet(schema, t))


def pvr(pred: Iterable[Triplet], schema: SchemaDef) -> float:
    pred = set(pred)
    if not pred:
        return 0.0
    return sum(is_predicate_violation(schema, t) for t in pred) / len(pred)


def shannon_entropy(counts: Mapping[object, float]) -> float:
    """Entropy in bits of the distribution proportional to ``counts``."""
    total = sum(counts.values())
    if not counts or total <= 0:
        raise ValueError("entropy of an empty distribution is undefined")
    h = 0.0
    for c in counts.values():
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h + 0.0


def entropy_normalized_f1(f1: float, h_cat: float, h_surf: float) -> float:
    if not h_surf > 0:
        raise MetricUndefined("baseline entropy is zero; normalised F1 is undefined")
    return f1 * (h_cat / h_surf)


def latent_surface_gap(surface_f1: float, latent_f1: float) -> float:
    return surface_f1 - latent_f1


@dataclass(frozen=True)
class EntropyContext:
    h_latent: float
    h_surface: float
    mode: str = "empirical"
    convention: str = "baseline"

    def to_dict(self) -> dict:
        return asdict(self)


def _value_counts(schema: SchemaDef, graphs: Iterable[Iterable[Triplet]]) -> tuple[Counter, Counter]:
    lat, surf = Counter(), Counter()
    for g in graphs:
        for t in getattr(g, "triplets", g):
            (lat if is_latent(schema, t) else surf)[(t.object.kind, t.object.name)] += 1
    return lat, surf


def _per_kind_entropy(counts: Counter) -> float:
    by_kind: dict[str, Counter] = {}
    for (kind, name), c in counts.items():
        by_kind.setdefault(kind, Counter())[name] += c
    total = sum(counts.values())
    return math.fsum(sum(c.values()) / total * shannon_entropy(c) for c in by_kind.values())


def build_entropy_context(
    schema: SchemaDef, graphs: Iterable, mode: str = "empirical", convention: str = "baseline"
) -> EntropyContext:
    """Per-category entropies of object values.

    ``empirical`` pools object-value frequencies over ``graphs``; ``uniform`` uses the
    vocabularies; ``per_kind`` is the frequency-weighted mean of within-kind entropies.
    """
    if mode not in ENTROPY_MODES:
        raise ValueError(f"unknown entropy mode {mode!r}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown normalisation convention {convention!r}")
    if mode == "uniform":
        lat = Counter({(k.id, v): 1 for k in schema.kinds if k.stratum == "psychological" for v in k.vocabulary})
        surf = Counter({(k.id, v): 1 for k in schema.kinds if k.stratum != "psychological" for v in k.vocabulary})
    else:
        lat, surf = _value_counts(schema, graphs)
    fn = _per_kind_entropy if mode == "per_kind" else shannon_entropy
    h_lat = fn(lat) if lat else 0.0
    h_surf = fn(surf) if surf else 0.0
    return EntropyContext(h_lat, h_surf, mode, convention)


@dataclass(frozen=True)
class MetricRecord:
    strict: PRF
    soft: PRF
    soft_latent: PRF
    soft_surface: PRF
    pvr: float
    gap_ls: float
    latent_f1_norm: float | None
    surface_f1_norm: float | None
    gap_norm: float | None

    def flat(self) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for name in ("strict", "soft", "soft_latent", "soft_surface"):
            prf = getattr(self, name)
            out[f"{name}_precision"] = prf.precision
            out[f"{name}_recall"] = prf.recall
            out[f"{name}_f1"] = prf.f1
        out.update(
            pvr=self.pvr,
            gap_ls=self.gap_ls,
            latent_f1_norm=self.latent_f1_norm,
            surface_f1_norm=self.surface_f1_norm,
            gap_norm=self.gap_norm,
        )
        return out


def normalized_pair(latent_f1: float, surface_f1: float, ctx: EntropyContext) -> tuple[float | None, float | None]:
    try:
        lat = entropy_normalized_f1(latent_f1, ctx.h_latent, ctx.h_surface)
    except MetricUndefined:
        return None, None
    if ctx.convention == "baseline":
        return lat, entropy_normalized_f1(surface_f1, ctx.h_surface, ctx.h_surface)
    try:
        return lat, entropy_normalized_f1(surface_f1, ctx.h_surface, ctx.h_latent)
    except MetricUndefined:
        return lat, None


def score_instance(
    pred: Iterable[Triplet],
    gold: Iterable[Triplet],
    schema: SchemaDef,
    embedder,
    tau: float,
    entropy_context: EntropyContext,
) -> MetricRecord:
    pred, gold = set(pred), set(gold)
    p_lat, p_surf = partition_latent_surface(schema, pred)
    g_lat, g_surf = partition_latent_surface(schema, gold)
    soft_lat = soft_prf(p_lat, g_lat, embedder, tau)
    soft_surf = soft_prf(p_surf, g_surf, embedder, tau)
    lat_n, surf_n = normalized_pair(soft_lat.f1, soft_surf.f1, entropy_context)
    return MetricRecord(
        strict=strict_prf(pred, gold),
        soft=soft_prf(pred, gold, embedder, tau),
        soft_latent=soft_lat,
        soft_surface=soft_surf,
        pvr=pvr(pred, schema),
        gap_ls=latent_surface_gap(soft_surf.f1, soft_lat.f1),
        latent_f1_norm=lat_n,
        surface_f1_norm=surf_n,
        gap_norm=None if lat_n is None or surf_n is None else latent_surface_gap(surf_n, lat_n),
    )
