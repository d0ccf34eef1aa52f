"""Exhaustive cosine top-k over embedded artifact bundles."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._util import atomic_write_text, canonical_json
from .corpus import Artifact
from .decompose import bundle_text


@dataclass(frozen=True)
class EmbeddingIndex:
    ids: tuple[str, ...]
    vectors: np.ndarray
    norms: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, ids: Sequence[str], vectors) -> "EmbeddingIndex":
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or len(ids) != vectors.shape[0]:
            raise ValueError("need one vector per id, all of one dimension")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in index")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms <= 0):
            bad = [ids[i] for i in np.flatnonzero(norms <= 0)]
            raise ValueError(f"zero vectors cannot be indexed: {bad}")
        return cls(tuple(ids), vectors, norms)


def embed_bundle(bundle: Sequence[Artifact], embedder, encoders=None) -> np.ndarray:
    if not bundle:
        raise ValueError("cannot embed an empty bundle")
    return np.asarray(embedder.embed([bundle_text(bundle, encoders)])[0], dtype=float)


def embed_texts(texts: Mapping[str, str], embedder) -> EmbeddingIndex:
    """Index pre-flattened bundle texts keyed by instance id (sorted by id)."""
    ids = sorted(texts)
    return EmbeddingIndex.build(ids, embedder.embed([texts[i] for i in ids]))


def similarities(query: np.ndarray, index: EmbeddingIndex) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    qn = np.linalg.norm(q)
    if qn == 0:
        return np.zeros(len(index))
    return (index.vectors @ q) / (index.norms * qn)


def top_k(query: np.ndarray, index: EmbeddingIndex, k: int, query_id: str | None = None) -> list[str]:
    """Ids of the ``k`` most similar entries, ties broken by ascending id; ``query_id`` is excluded."""
    sims = similarities(query, index)
    ranked = sorted(
        ((-float(s), iid) for s, iid in zip(sims, index.ids) if iid != query_id),
    )
    if k > len(ranked):
        raise ValueError(f"k={k} exceeds the {len(ranked)} retrievable entries")
    return [iid for _, iid in ranked[:k]]


def save_index_cache(path: str | os.PathLike, index: EmbeddingIndex, fingerprint: str) -> None:
    doc = {
        "embedder_fingerprint": fingerprint,
        "dimension": index.dimension,
        "entries": {iid: index.vectors[i].tolist() for i, iid in enumerate(index.ids)},
    }
    atomic_write_text(path, canonical_json(doc))


def load_index_cache(path: str | os.PathLike, fingerprint: str, ids: Iterable[str] | None = None):
    """Return the cached index, or ``None`` when missing, stale, or keyed differently."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if doc.get("embedder_fingerprint") != fingerprint:
        return None
    entries = doc.get("entries", {})
    keys = sorted(entries)
    if ids is not None and keys != sorted(ids):
        return None
    return EmbeddingIndex.build(keys, [entries[k] for k in keys])
