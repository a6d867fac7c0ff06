from __future__ import annotations

import random

import numpy as np
import pytest

from hypnav.agent import TRACE_SCHEMA, BatchSpec, EpisodeTrace, run_batch
from hypnav.graph import HypothesisGraph
from hypnav.metrics import (
    MixedSchemaError, aggregate, episode_metrics, lifecycle, ordering_fraction, paired_compare,
    revisit_counts, revisit_rate, sign_test, spl,
)
from graphgen import prediction


def make_trace(seed=0, arm="full", goal_records=None, steps=None, graph_stats=None, **kw) -> EpisodeTrace:
    goal_records = goal_records if goal_records is not None else [
        {"goal": "bed", "status": "success", "l_star": 2.0, "path_length": 2.0}]
    return EpisodeTrace(
        seed, arm, "gt-noisy", [g["goal"] for g in goal_records], [1, 1, 0],
        [g["status"] for g in goal_records], goal_records, 0.0, steps or [], {},
        graph_stats or {"creations": 0, "cascade_events": [], "peak": 0}, 0, 0,
        kw.get("confirmed", 0), kw.get("refuted", 0))


def select(t, pos, events=(), explore=True):
    rec = {"t": t, "select": {"pos": list(pos), "explore": explore}}
    if events:
        rec["events"] = list(events)
    return rec


def refute(pos):
    return {"op": "refute", "pos": list(pos)}


def test_spl_cases():
    assert spl(1, 5.0, 5.0) == 1.0
    assert spl(0, 5.0, 5.0) == 0.0
    assert spl(1, 5.0, 10.0) == 0.5
    assert spl(1, 5.0, 4.0) == 1.0
    with pytest.raises(ValueError):
        spl(1, 0.0, 1.0)
    with pytest.raises(ValueError):
        spl(1, 1.0, -1.0)


def test_revisit_zero_without_refutations():
    steps = [select(i, (i, 0)) for i in range(6)]
    assert revisit_rate(make_trace(steps=steps)) == 0.0
    assert revisit_rate(make_trace(steps=[])) == 0.0


def test_revisit_hand_built():
    steps = [select(0, (5, 5), [refute((0, 0))]), select(1, (0.5, 0)), select(2, (5, 5)),
             select(3, (6, 6)), select(4, (7, 7)), select(5, (0, 0), explore=False)]
    assert revisit_counts(make_trace(steps=steps)) == (1, 5)
    assert revisit_rate(make_trace(steps=steps)) == pytest.approx(0.2)
    # refutation in the same step counts for that step's selection
    same = [select(0, (0.2, 0), [refute((0, 0))])]
    assert revisit_counts(make_trace(steps=same)) == (1, 1)


def _replay_revisit(trace: EpisodeTrace, zone: float) -> float:
    zones = np.zeros((0, 2))
    hits = total = 0
    for rec in trace.steps:
        pts = [e["pos"] for e in rec.get("events", []) if e["op"] == "refute"]
        if pts:
            zones = np.vstack([zones, np.asarray(pts, dtype=float)])
        sel = rec.get("select")
        if sel and sel["explore"]:
            total += 1
            if len(zones) and np.min(np.linalg.norm(zones - np.asarray(sel["pos"]), axis=1)) <= zone:
                hits += 1
    return hits / total if total else 0.0


def test_revisit_matches_replay_on_real_traces():
    traces = run_batch(range(8), ["full", "soft-decay"])
    assert any(_replay_revisit(t, 1.0) > 0 for t in traces)
    for t in traces:
        assert revisit_rate(t) == pytest.approx(_replay_revisit(t, 1.0), abs=1e-12)


def test_lifecycle_empty():
    life = lifecycle([])
    assert life.created == 0 and life.cascades == 0 and life.depth_mode is None


def test_lifecycle_depth_two_cascade():
    g = HypothesisGraph(merge_radius=0.0)
    root = g.add_observed((0.0, 0.0), "hallway", [], None)
    a = g.add_hypothesis(root, prediction("kitchen"), 0.8, position=(3.0, 0.0))
    b = g.add_hypothesis(a, prediction("dining_room"), 0.7, position=(6.0, 0.0))
    g.add_object_hypothesis(b, "table", 0.6)
    assert len(g.cascade_correct(a)) == 3
    trace = make_trace(graph_stats=g.stats.to_dict(), refuted=1)
    life = lifecycle([trace])
    assert life.depth_histogram == {2: 1}
    assert life.mean_removed == 3.0
    assert life.max_depth == 2
    assert life.created == 3


def test_default_batch_cascades_are_mostly_depth_one():
    life = lifecycle(run_batch(range(20), ["full"], BatchSpec()))
    assert life.cascades > 0
    assert life.depth_mode == 1


def test_aggregate_success_rate_and_spl():
    recs = [{"goal": "bed", "status": "success", "l_star": 2.0, "path_length": 4.0},
            {"goal": "sink", "status": "budget", "l_star": 3.0, "path_length": 9.0}]
    table = aggregate([make_trace(goal_records=recs)])
    row = table.row("full")
    assert row.sr == 0.5 and row.goals == 2
    assert row.spl == pytest.approx(0.25)
    assert table.to_csv().splitlines()[0].startswith("arm,episodes,goals,sr,spl")


def _paired_traces():
    vals = {"full": [1.0, 0.8, 0.6, 0.9, 0.5], "geometry-only": [0.5, 0.8, 0.7, 0.45, 0.25]}
    out = []
    for arm, vs in vals.items():
        for seed, v in enumerate(vs):
            rec = {"goal": "bed", "status": "success", "l_star": v * 10, "path_length": 10.0}
            out.append(make_trace(seed, arm, [rec]))
    return out


def test_paired_hand_computation():
    table = aggregate(_paired_traces(), reference="full")
    (p,) = table.paired
    assert (p.arm_a, p.arm_b, p.seeds) == ("full", "geometry-only", 5)
    assert p.mean_spl_diff == pytest.approx((0.5 + 0 - 0.1 + 0.45 + 0.25) / 5)
    assert (p.wins, p.losses, p.ties) == (3, 1, 1)
    assert p.sign_test_p == pytest.approx(5 / 16)
    assert ordering_fraction(_paired_traces(), "full", "geometry-only") == pytest.approx(0.8)


def test_aggregate_shuffle_invariant():
    traces = _paired_traces()
    ref = aggregate(traces).to_json()
    rng = random.Random(3)
    for _ in range(5):
        rng.shuffle(traces)
        assert aggregate(traces).to_json() == ref


def test_mixed_schema_rejected():
    a = make_trace()
    b = make_trace(seed=1)
    b.schema = "old"
    assert a.schema == TRACE_SCHEMA
    with pytest.raises(MixedSchemaError):
        aggregate([a, b])


def test_sign_test():
    assert sign_test(0, 0) == 1.0
    assert sign_test(5, 0) == pytest.approx(1 / 32)
    assert sign_test(93, 0) < 1e-27
    assert paired_compare([(0, 1.0)], [(1, 0.0)]).seeds == 0


def test_episode_metrics_without_goals():
    m = episode_metrics(make_trace(goal_records=[]))
    assert m.success == [0] and m.spl == [0.0]
