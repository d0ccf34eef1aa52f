"""Acceptance criteria, run at their stated tolerances.

Each test prints one ``PASS``/``FAIL`` line; the lines are also collected and
repeated in the terminal summary (see conftest.py).
"""
from __future__ import annotations

import itertools
import math
import time
from collections import Counter

import numpy as np
import pytest

from sgp._util import rng_stream
from sgp.backends import Backends, HashingEmbedder, IndicatorEmbedder, OracleGenerator, build_backends
from sgp.cli import OK, main
from sgp.decompose import offline_encoders
from sgp.harness import ProtocolConfig, make_splits, run_experiment
from sgp.metrics import entropy_normalized_f1, max_assignment, shannon_entropy, soft_prf, strict_prf
from sgp.ontology import validate_graph
from sgp.report import summary_from_means, summary_table
from sgp.synthgen import GenConfig, generate_corpus, sample_graph
from sgp.triplets import Node, Triplet

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


def verdict(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{n:>2}] {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_01_generator_soundness(schema):
    start = time.perf_counter()
    cfg = GenConfig(seed=2024)
    sizes, kinds, bad = Counter(), set(), 0
    for i in range(10_000):
        g = sample_graph(schema, cfg, time_index=i)
        bad += bool(validate_graph(schema, g))
        sizes[len(g)] += 1
        kinds |= {n.kind for t in g.triplets for n in (t.subject, t.object)}
    elapsed = time.perf_counter() - start
    all_kinds = {k.id.lower() for k in schema.kinds}
    ok = bad == 0 and min(sizes) >= 6 and max(sizes) <= 18 and kinds == all_kinds and elapsed < 30
    verdict(1, "generator soundness", ok,
            f"{bad} invalid, sizes {min(sizes)}..{max(sizes)}, {len(kinds)}/{len(all_kinds)} kinds, {elapsed:.1f}s")


def test_02_oracle_ceiling(schema, pilot):
    plan = make_splits(pilot, 5, 0.2, seed=0)
    backends = Backends(OracleGenerator(pilot), HashingEmbedder(), offline_encoders())
    modes = [("zero_shot", "static"), ("ra_icl", "static"), ("ra_icl", "temporal_oracle"), ("ra_icl", "temporal_autoregressive")]
    seen = []
    for protocol, mode in modes:
        cfg = ProtocolConfig(protocol=protocol, task_mode=mode)
        m = run_experiment(pilot, plan, cfg, backends, schema).aggregates[cfg.condition]["metrics"]
        seen.append((m["strict_f1"]["mean"], m["soft_f1"]["mean"], m["pvr"]["mean"], m["gap_ls"]["mean"]))
    ok = all(v == (1.0, 1.0, 0.0, 0.0) for v in seen)
    verdict(2, "oracle ceiling", ok, f"(strict, soft, pvr, gap) per mode = {seen}")


def test_03_noise_calibration(schema, pilot):
    plan = make_splits(pilot, 5, 0.2, seed=0)
    spec = {"generation": {"type": "noisy_oracle", "drop_rate_surface": 0.3, "drop_rate_latent": 0.3, "seed": 3}}
    report = run_experiment(pilot, plan, ProtocolConfig(runs_per_fold=3), build_backends(spec, pilot, schema), schema)
    micro = report.aggregates["zero_shot"]["micro"]
    ok = micro["n_gold"] >= 1500 and abs(micro["strict_recall"] - 0.7) <= 0.05 and micro["strict_precision"] == 1.0
    verdict(3, "noise calibration", ok,
            f"recall {micro['strict_recall']:.4f} over {micro['n_gold']} gold, precision {micro['strict_precision']}")


def test_04_pvr_exactness(schema, pilot):
    plan = make_splits(pilot, 5, 0.2, seed=0)
    spec = {"generation": {"type": "noisy_oracle", "exact_invalid_fraction": 0.2, "seed": 4}}
    report = run_experiment(pilot, plan, ProtocolConfig(runs_per_fold=1), build_backends(spec, pilot, schema), schema)
    values = [r["metrics"]["pvr"] for r in report.records]
    worst = max(abs(v - 0.2) for v in values)
    verdict(4, "PVR exactness", len(values) == 75 and worst <= 1e-9, f"{len(values)} instances, max |PVR-0.2| = {worst:.2e}")


def _random_set(rng: np.random.Generator, pool: list[Triplet]) -> set[Triplet]:
    size = int(rng.integers(0, 13))
    return {pool[i] for i in rng.choice(len(pool), size=size, replace=False)}


def test_05_soft_strict_equivalence():
    names = ["elise", "marco", "priya", "daniel"]
    pool = [
        Triplet(Node("person", a), p, Node(k, b))
        for a in names
        for p in ("feels", "interacts_with")
        for k, b in [("emotion", "joy"), ("emotion", "stressed"), ("person", "sofia"), ("person", "marco")]
    ]
    rng = rng_stream(5, "acceptance")
    worst = 0.0
    for _ in range(1000):
        pred, gold = _random_set(rng, pool), _random_set(rng, pool)
        worst = max(worst, abs(soft_prf(pred, gold, IndicatorEmbedder()).f1 - strict_prf(pred, gold).f1))
    verdict(5, "soft/strict oracle equivalence", worst <= 1e-9, f"1000 pairs, max |soft-strict| = {worst:.2e}")


def _brute(w: np.ndarray) -> float:
    m, n = w.shape
    if m > n:
        w, m, n = w.T, n, m
    return max(math.fsum(w[i, c] for i, c in enumerate(p)) for p in itertools.permutations(range(n), m))


def test_06_assignment_optimality():
    rng = rng_stream(6, "acceptance")
    mismatches = 0
    for _ in range(500):
        w = rng.random((int(rng.integers(1, 7)), int(rng.integers(1, 7))))
        w[w < 0.5] = 0.0
        mismatches += max_assignment(w)[2] != _brute(w)
    verdict(6, "assignment optimality", mismatches == 0, f"500 matrices up to 6x6, {mismatches} mismatches")


def test_07_entropy_arithmetic():
    h8 = shannon_entropy({i: 1 for i in range(8)})
    h106 = shannon_entropy({i: 1 for i in range(106)})
    f1n = entropy_normalized_f1(0.5, 3.0, 6.7279)
    ok = abs(h8 - 3.0) <= 1e-4 and abs(h106 - 6.7279) <= 1e-4 and abs(f1n - 0.22295) <= 1e-4
    verdict(7, "entropy arithmetic", ok, f"H8 {h8:.4f}, H106 {h106:.4f}, F1* {f1n:.5f}")


def test_08_gap_directionality(schema):
    positive = 0
    for rep in range(100):
        corpus = generate_corpus(schema, GenConfig(seed=1000 + rep, n_instances=75))
        plan = make_splits(corpus, 5, 0.2, seed=rep)
        spec = {"generation": {"type": "noisy_oracle", "drop_rate_latent": 0.5, "seed": rep}}
        report = run_experiment(corpus, plan, ProtocolConfig(runs_per_fold=1, seed=rep), build_backends(spec, corpus, schema), schema)
        positive += report.aggregates["zero_shot"]["metrics"]["gap_ls"]["mean"] > 0
    verdict(8, "gap directionality", positive >= 95, f"gap > 0 in {positive}/100 replications")


def test_09_split_integrity(pilot):
    plan = make_splits(pilot, 5, 0.2, seed=9)
    domain_of = {i.instance_id: i.domain for i in pilot.instances}
    totals = Counter(domain_of.values())
    shapes = {(len(t), len(r)) for r, t in plan.folds}
    tested = Counter(i for _, t in plan.folds for i in t)
    spread = max(
        abs(Counter(domain_of[i] for i in t)[d] - totals[d] / 5) for _, t in plan.folds for d in totals
    )
    ok = (
        len(plan.folds) == 5
        and len(totals) == 4
        and shapes == {(15, 60)}
        and len(tested) == 75
        and set(tested.values()) == {1}
        and spread <= 1
        and make_splits(pilot, 5, 0.2, seed=9) == plan
    )
    verdict(9, "split integrity", ok, f"fold shapes {sorted(shapes)}, max domain deviation {spread:.2f}")


def test_10_no_leak(schema):
    runs = 0
    for seed in range(10):
        corpus = generate_corpus(schema, GenConfig(seed=200 + seed, n_instances=75))
        plan = make_splits(corpus, 5, 0.2, seed=seed)
        spec = {"generation": {"type": "noisy_oracle", "drop_rate_latent": 0.3, "seed": seed}}
        report = run_experiment(corpus, plan, ProtocolConfig(protocol="ra_icl", runs_per_fold=1, seed=seed),
                                build_backends(spec, corpus, schema), schema)
        for rec in report.records:
            assert not set(rec["demonstrations"]) & set(plan.folds[rec["fold"]][1])
        runs += 1
    verdict(10, "no retrieval leak", runs == 10, f"{runs} seeded RA-ICL runs without a leak")


def test_11_table_arithmetic():
    table = summary_table(
        {
            "Zero-Shot": summary_from_means({"strict_f1": 0.016, "soft_f1": 0.145}),
            "RA-ICL": summary_from_means({"strict_f1": 0.163, "soft_f1": 0.424, "soft_latent_f1": 0.351, "soft_surface_f1": 0.464}),
        }
    )
    rows = {r["metric"]: r for r in table["rows"]}
    d_strict, d_soft = rows["strict_f1"]["delta"], rows["soft_f1"]["delta"]
    gap = rows["gap_ls"]["cells"]["RA-ICL"]["mean"]
    ok = abs(d_strict - 0.147) <= 1e-3 and abs(d_soft - 0.279) <= 1e-3 and abs(gap - 0.113) <= 1e-3
    verdict(11, "table arithmetic", ok, f"delta strict {d_strict:+.3f}, delta soft {d_soft:+.3f}, gap {gap:+.3f}")


def test_12_end_to_end_determinism(tmp_path):
    outputs = []
    for jobs in ("1", "8"):
        d = tmp_path / f"jobs{jobs}"
        d.mkdir()
        steps = [
            ["generate", "--seed", "12", "--jobs", jobs, "--out", str(d / "c.jsonl")],
            ["split", "--corpus", str(d / "c.jsonl"), "--seed", "12", "--out", str(d / "plan.json")],
            ["run", "--corpus", str(d / "c.jsonl"), "--plan", str(d / "plan.json"), "--protocol", "ra_icl",
             "--task-mode", "temporal_autoregressive", "--backend", "noisy_oracle", "--seed", "12",
             "--jobs", jobs, "--out", str(d / "report.json")],
        ]
        assert all(main(s) == OK for s in steps)
        outputs.append((d / "c.jsonl").read_bytes() + (d / "report.json").read_bytes())
    verdict(12, "end-to-end determinism", outputs[0] == outputs[1], f"{len(outputs[0])} bytes compared")
