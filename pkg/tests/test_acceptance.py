"""Acceptance suite: one test per criterion, each logging a PASS or FAIL line."""

from __future__ import annotations

import math
import statistics
import time

import numpy as np
import pytest

from acceptance_log import report
from corpora import b2_case, prediction_pairs
from graphgen import c2_graph, random_forest, random_mutation, reach_oracle
from hypnav.agent import run_batch
from hypnav.cli import main
from hypnav.frontier import dbscan_cells
from hypnav.graph import HypothesisGraph, NodeKind
from hypnav.metrics import aggregate, ordering_fraction, revisit_rate, sign_test, spl
from hypnav.oracle import (
    CooccurrenceOracle, GroundTruthOracle, HybridOracle, NoiseConfig, frontier_truth,
)
from hypnav.policy import Verdict, entropy, residual
from hypnav.semantics import uniform_distribution
from hypnav.world.core import geodesic_distance
from hypnav.world.generate import WorldConfig, generate_world
from hypnav.world.taxonomy import default_taxonomy
from reference import dbscan_oracle, dijkstra, refutation_rates

BATCH_SEEDS = range(200)
BATCH_ARMS = ("full", "no-cascade", "local-delete", "soft-decay", "geometry-only")


@pytest.fixture(scope="module")
def batch():
    t0 = time.perf_counter()
    traces = run_batch(BATCH_SEEDS, BATCH_ARMS)
    return traces, time.perf_counter() - t0


def test_c01_residual_golden():
    t0 = time.perf_counter()
    pred, actual = b2_case()
    rep = residual(pred, actual)
    dt = time.perf_counter() - t0
    want = (1.0, 0.58, 0.80, 0.814)
    got = (rep.delta_c, rep.delta_f, rep.delta_o, rep.delta_sem)
    ok = (all(abs(g - w) <= 1e-9 for g, w in zip(got, want)) and rep.verdict is Verdict.REFUTED
          and dt < 1.0)
    report(1, ok, f"residual terms {tuple(round(g, 12) for g in got)} verdict "
                  f"{rep.verdict.value} in {dt * 1e3:.2f} ms")
    assert ok


def test_c02_cascade_golden():
    t0 = time.perf_counter()
    g, ids = c2_graph()
    removed = g.cascade_correct(ids["vA"])
    dt = time.perf_counter() - t0
    ok = (removed == {ids["vA"], ids["vA1"], ids["vA2"]}
          and set(g.nodes) == {ids["v1"], ids["vB"], ids["bed"]}
          and g.parent_of(ids["bed"]) == ids["vB"] and not g.validate() and dt < 1.0)
    report(2, ok, f"removed {len(removed)} nodes, kept {sorted(g.nodes)} in {dt * 1e3:.2f} ms")
    assert ok


def test_c03_cascade_matches_reachability():
    rng = np.random.default_rng(1000)
    t0 = time.perf_counter()
    cases = agree = 0
    while cases < 1000:
        g = random_forest(rng, max_nodes=50)
        hyps = [i for i, n in g.nodes.items() if n.kind is not NodeKind.OBSERVED]
        if not hyps:
            continue
        target = hyps[int(rng.integers(len(hyps)))]
        want = reach_oracle(g, target)
        cases += 1
        agree += g.cascade_correct(target) == want
    dt = time.perf_counter() - t0
    ok = agree == cases and dt < 10.0
    report(3, ok, f"{agree}/{cases} forests agree with reachability oracle in {dt:.2f} s")
    assert ok


def test_c04_invariants_under_fuzzing():
    rng = np.random.default_rng(4000)
    g = HypothesisGraph()
    t0 = time.perf_counter()
    bad = []
    for i in range(10_000):
        op = random_mutation(g, rng)
        rep = g.validate()
        if rep:
            bad.append((i, op, rep.violations[0]))
            break
    dt = time.perf_counter() - t0
    ok = not bad and dt < 30.0
    report(4, ok, f"10000 mutations, {len(bad)} violations, final size {len(g)}, {dt:.2f} s")
    assert ok, bad


def test_c05_cascade_latency():
    rng = np.random.default_rng(5000)
    times = []
    while len(times) < 2000:
        g = random_forest(rng, max_nodes=19)
        hyps = [i for i, n in g.nodes.items() if n.kind is not NodeKind.OBSERVED]
        if not hyps:
            continue
        target = hyps[int(rng.integers(len(hyps)))]
        t0 = time.perf_counter()
        g.cascade_correct(target)
        times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    ok = med < 1e-3
    report(5, ok, f"median cascade {med * 1e6:.1f} us over {len(times)} graphs under 20 nodes")
    assert ok


def test_c06_threshold_monotonicity():
    t0 = time.perf_counter()
    pairs = prediction_pairs(5000)
    thetas = [0.30, 0.40, 0.50, 0.60, 0.70]
    rates = refutation_rates(pairs, thetas)
    dt = time.perf_counter() - t0
    ok = len(pairs) >= 5000 and all(a >= b for a, b in zip(rates, rates[1:])) and dt < 60.0
    report(6, ok, "refutation rates " + ", ".join(f"{t:.2f}:{r:.3f}" for t, r in zip(thetas, rates))
           + f" over {len(pairs)} pairs in {dt:.1f} s")
    assert ok


def test_c07_revisit_reduction(batch):
    traces, dt = batch
    full = {t.seed: revisit_rate(t) for t in traces if t.arm == "full"}
    nc = {t.seed: revisit_rate(t) for t in traces if t.arm == "no-cascade"}
    seeds = sorted(set(full) & set(nc))
    mf = sum(full[s] for s in seeds) / len(seeds)
    mn = sum(nc[s] for s in seeds) / len(seeds)
    wins = sum(1 for s in seeds if full[s] < nc[s])
    losses = sum(1 for s in seeds if full[s] > nc[s])
    p = sign_test(wins, losses)
    ok = len(seeds) >= 200 and mf <= 0.5 * mn and p < 0.01 and dt < 600
    report(7, ok, f"revisit full {mf:.4f} vs no-cascade {mn:.4f} (ratio {mf / mn:.3f}), "
                  f"fewer revisits on {wins}/{losses} seeds, sign test p={p:.2e}, batch {dt:.0f} s")
    assert ok


def test_c08_ablation_ordering(batch):
    traces, dt = batch
    checks = [("full", "local-delete", 0.60), ("local-delete", "soft-decay", 0.55),
              ("soft-decay", "no-cascade", 0.55), ("full", "geometry-only", 0.70)]
    fracs = [ordering_fraction(traces, a, b) for a, b, _ in checks]
    table = aggregate(traces)
    means = {r.arm: r.spl for r in table.rows}
    strict = (means["full"] > means["local-delete"] > means["soft-decay"] > means["no-cascade"]
              and means["full"] > means["geometry-only"])
    ok = all(f >= need for f, (_, _, need) in zip(fracs, checks)) and strict and dt < 900
    detail = ", ".join(f"{a}>={b} {f:.3f}" for f, (a, b, _) in zip(fracs, checks))
    detail += "; mean SPL " + ", ".join(f"{k} {v:.4f}" for k, v in means.items())
    report(8, ok, detail)
    assert ok


def test_c09_grow_and_prune(batch):
    traces, _ = batch
    eligible = [t for t in traces if t.arm == "full" and t.refuted_nodes >= 1]
    shrunk = sum(1 for t in eligible if t.final_nodes < t.peak_nodes)
    frac = shrunk / len(eligible) if eligible else 0.0
    ok = bool(eligible) and frac >= 0.60
    report(9, ok, f"final < peak in {shrunk}/{len(eligible)} full-arm episodes with a "
                  f"refutation ({frac:.3f}, need 0.60)")
    assert ok


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_c10_determinism(tmp_path):
    commands = [["run", "--seeds", "0..2", "--arms", "full,no-cascade", "--dump-graph"],
                ["ablate", "--seeds", "5..6"],
                ["sweep-theta", "--seeds", "0..1", "--thetas", "0.4,0.6"],
                ["sweep-noise", "--seeds", "0..1", "--epsilons", "0,0.3", "--arms", "full"],
                ["dump-graph", "--seeds", "2..3"]]
    same = 0
    for i, cmd in enumerate(commands):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        assert main(cmd + ["--out", str(a), "--overwrite"]) == 0
        assert main(cmd + ["--out", str(b), "--overwrite"]) == 0
        fa, fb = _files(a), _files(b)
        same += bool(fa) and fa == fb
    ok = same == len(commands)
    report(10, ok, f"{same}/{len(commands)} commands rerun byte-identical")
    assert ok


def test_c11_metric_oracles():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    counts = {}

    ok_spl = 0
    for _ in range(1000):
        s = int(rng.integers(2))
        ls = float(rng.uniform(0.1, 20))
        l = float(rng.uniform(0, 40))
        want = s * (1.0 if l <= ls else ls / l)
        ok_spl += abs(spl(s, ls, l) - want) <= 1e-12
    counts["spl"] = ok_spl

    tax = default_taxonomy()
    uniform_ok = abs(entropy(uniform_distribution(tax)) - math.log(23)) <= 1e-9
    ok_h = 0
    for _ in range(1000):
        p = rng.dirichlet(np.full(tax.k, float(rng.uniform(0.05, 2))))
        if rng.random() < 0.3:
            p[rng.integers(tax.k)] = 0.0
            p = p / p.sum()
        want = -math.fsum(x * math.log(x) for x in p.tolist() if x > 0)
        ok_h += abs(entropy(p) - want) <= 1e-9
    counts["entropy"] = ok_h

    ok_g = 0
    for k in range(1000):
        if k % 25 == 0:
            w = generate_world(WorldConfig(), 11_000 + k // 25)
            cells = [tuple(int(v) for v in x) for x in zip(*np.nonzero(w.traversable))]
        a = cells[int(rng.integers(len(cells)))]
        b = cells[int(rng.integers(len(cells)))]
        ok_g += abs(geodesic_distance(w, a, b) - dijkstra(w.traversable, a, b, w.resolution)) <= 1e-9
    counts["geodesic"] = ok_g

    ok_d = 0
    for _ in range(1000):
        n = int(rng.integers(0, 60))
        pts = {(int(r), int(c)) for r, c in rng.integers(0, 20, size=(n, 2))}
        eps = float(rng.choice([1.0, 1.5, 2.0, 2.9]))
        ms = int(rng.integers(1, 6))
        ok_d += {frozenset(g) for g in dbscan_cells(pts, eps, ms)} == dbscan_oracle(pts, eps, ms)
    counts["dbscan"] = ok_d

    dt = time.perf_counter() - t0
    ok = uniform_ok and all(v == 1000 for v in counts.values()) and dt < 60
    report(11, ok, ", ".join(f"{k} {v}/1000" for k, v in counts.items())
           + f", uniform entropy {'ok' if uniform_ok else 'off'}, {dt:.1f} s")
    assert ok


def test_c12_oracle_accuracy_ordering(frontier_corpus):
    hits = {"gt-noisy": 0, "hybrid": 0, "cooccurrence": 0}
    n = 0
    for seed, (world, ctxs) in enumerate(frontier_corpus):
        oracles = {"gt-noisy": GroundTruthOracle(world, NoiseConfig(error_rate=0.3), seed),
                   "hybrid": HybridOracle(world, NoiseConfig(error_rate=0.3), seed),
                   "cooccurrence": CooccurrenceOracle(world.taxonomy)}
        for ctx in ctxs:
            truth = frontier_truth(world, ctx.frontier)
            if truth.next_region < 0:
                continue
            want = world.category_name(truth.next_region)
            n += 1
            for name, oracle in oracles.items():
                hits[name] += oracle.predict(ctx).distribution.argmax == want
    acc = {k: v / n for k, v in hits.items()}
    ok = n >= 2000 and acc["gt-noisy"] > acc["hybrid"] > acc["cooccurrence"]
    report(12, ok, f"top-1 accuracy over {n} frontiers: "
                   + ", ".join(f"{k} {v:.4f}" for k, v in acc.items()))
    assert ok
