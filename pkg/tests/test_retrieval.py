import hashlib
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgp.backends import HashingEmbedder
from sgp.decompose import bundle_text, offline_encoders
from sgp.retrieval import (
    EmbeddingIndex,
    embed_bundle,
    embed_texts,
    load_index_cache,
    save_index_cache,
    top_k,
)


def test_hashing_embedder_properties():
    e = HashingEmbedder()
    v = e.embed(["Office meeting with Marco", "office MEETING with marco!", "sunset beach yoga"])
    assert v.shape == (3, 512)
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    assert np.array_equal(v[0], v[1])
    # disjoint token sets land near-orthogonal
    assert float(v[0] @ v[2]) < 0.2
    assert np.array_equal(HashingEmbedder().embed(["x y"]), e.embed(["x y"]))
    assert not np.array_equal(HashingEmbedder(seed=1).embed(["x y"]), e.embed(["x y"]))


def _reference_embedding(text, dim=512, seed=0):
    v = [0.0] * dim
    for tok in re.findall(r"[a-z0-9]+", text.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8, key=seed.to_bytes(8, "big")).digest(), "big")
        v[h % dim] += 1.0 if h >> 63 else -1.0
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


@pytest.mark.parametrize("text", ["interview office stressed morning", "Beach, sunset & calm evening!", "a a a b"])
def test_hashing_matches_reference(text):
    assert np.allclose(HashingEmbedder().embed([text])[0], _reference_embedding(text), atol=1e-15)


def test_tie_break_by_id():
    idx = EmbeddingIndex.build(["c", "a", "b"], [[1.0, 0.0]] * 3)
    assert top_k(np.array([1.0, 0.0]), idx, 2) == ["a", "b"]


def test_self_exclusion_and_order():
    idx = EmbeddingIndex.build(["q", "near", "far"], [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    assert top_k(np.array([1.0, 0.0]), idx, 2, query_id="q") == ["near", "far"]


def test_k_too_large():
    idx = EmbeddingIndex.build(["a", "b"], np.eye(2))
    with pytest.raises(ValueError, match="exceeds"):
        top_k(np.array([1.0, 0.0]), idx, 2, query_id="a")


def test_zero_vector_rejected():
    with pytest.raises(ValueError, match="zero"):
        EmbeddingIndex.build(["a"], [[0.0, 0.0]])


def test_cache_round_trip(tmp_path):
    idx = embed_texts({"b": "two words", "a": "one word"}, HashingEmbedder())
    path = tmp_path / "idx.json"
    save_index_cache(path, idx, "fp-1")
    back = load_index_cache(path, "fp-1", ["a", "b"])
    assert back.ids == ("a", "b") and np.allclose(back.vectors, idx.vectors)
    assert load_index_cache(path, "fp-2") is None
    assert load_index_cache(path, "fp-1", ["a", "c"]) is None
    assert load_index_cache(tmp_path / "missing.json", "fp-1") is None


def test_embed_bundle_matches_text(pilot):
    e, enc = HashingEmbedder(), offline_encoders()
    inst = pilot.instances[0]
    assert np.array_equal(embed_bundle(inst.artifacts, e, enc), e.embed([bundle_text(inst.artifacts, enc)])[0])
    with pytest.raises(ValueError):
        embed_bundle([], e)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.data())
def test_top_k_is_sorted_prefix(n, seed, data):
    rng = np.random.default_rng(seed)
    vecs = rng.integers(-2, 3, size=(n, 3)).astype(float)
    vecs[np.all(vecs == 0, axis=1)] = 1.0
    ids = [f"i{j:02d}" for j in range(n)]
    idx = EmbeddingIndex.build(ids, vecs)
    k = data.draw(st.integers(1, n - 1))
    q = vecs[0]
    got = top_k(q, idx, k, query_id="i00")
    assert "i00" not in got and len(got) == k
    sims = {i: float(v @ q / np.linalg.norm(v) / np.linalg.norm(q)) for i, v in zip(ids, vecs)}
    keys = [(-sims[i], i) for i in got]
    assert keys == sorted(keys)
    rest = [(-sims[i], i) for i in ids[1:] if i not in got]
    assert all(keys[-1] <= r for r in rest)
