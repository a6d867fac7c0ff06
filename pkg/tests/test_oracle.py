from __future__ import annotations

import json
import shlex
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

from hypnav.agent import Task, run_episode
from hypnav.frontier import Frontier
from hypnav.oracle import (
    CooccurrenceOracle, ExternalOracle, FrontierTruth, GroundTruthOracle, HybridOracle,
    NoiseConfig, OracleConfig, OracleContext, OracleParseError, OracleResponse, OracleTimeout,
    cooccurrence_posterior, frontier_truth, parse_response, predict_cooccurrence,
    predict_external, serialize_request, serialize_response,
)
from hypnav.policy import entropy
from hypnav.world.generate import WorldConfig, generate_world
from hypnav.world.perception import Pose
from hypnav.world.taxonomy import default_taxonomy
from oracle_servers import KITCHEN
from scenarios import mirror_world

TAX = default_taxonomy()
SERVERS = Path(__file__).with_name("oracle_servers.py")


def _stdio(mode: str) -> str:
    return f"stdio:{shlex.quote(sys.executable)} {shlex.quote(str(SERVERS))} {mode}"


def _ctx(objs=(), cells=frozenset({(1, 1)})):
    fr = Frontier(0, (0.375, 0.375), cells)
    return OracleContext(fr, 0, "hallway", frozenset(objs))


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(error_rate=1.5)
    with pytest.raises(ValueError):
        NoiseConfig(taxonomy_weights={"mirror": 0.5, "glass": 0.5, "artwork": 0.5, "occlusion": 0.0})


def test_noise_free_oracle_is_right():
    for seed in range(20):
        w = generate_world(WorldConfig(illusion_density=0.0), seed)
        oracle = GroundTruthOracle(w, NoiseConfig(error_rate=0.0), seed)
        for r in w.rooms:
            for nxt in (r.id, *w.region_neighbors.get(r.id, ())):
                pred = oracle.predict_truth(FrontierTruth(r.id, nxt, None, None))
                assert pred.distribution.argmax == w.category_name(nxt)
                assert pred.error is None


def test_mirror_frontier_predicts_shown_room():
    w = mirror_world()
    fr = Frontier(0, (6.125, 0.625), frozenset({(r, 24) for r in range(1, 5)}),
                  beyond_cells=frozenset({(r, 25) for r in range(1, 5)}))
    truth = frontier_truth(w, fr)
    assert truth.illusion_kind == "mirror" and truth.illusion_region == 1 and truth.member_region == 0
    pred = GroundTruthOracle(w, NoiseConfig(error_rate=0.0)).predict(OracleContext(fr, 1, "bedroom", frozenset()))
    assert pred.category == "bedroom" and pred.error == "mirror"


def test_error_rate_frequency():
    errors = total = 0
    seed = 0
    while total < 10_000:
        w = generate_world(WorldConfig(illusion_density=0.0), seed)
        oracle = GroundTruthOracle(w, NoiseConfig(error_rate=0.3), seed)
        for r in w.rooms:
            for nxt in w.region_neighbors.get(r.id, ()):
                for _ in range(10):
                    errors += oracle.predict_truth(FrontierTruth(r.id, nxt, None, None)).error is not None
                    total += 1
        seed += 1
    assert abs(errors / total - 0.3) <= 0.02


def test_oracle_stream_is_deterministic():
    w = generate_world(WorldConfig(), 4)
    t = FrontierTruth(w.rooms[0].id, w.rooms[1].id, None, None)
    a = [GroundTruthOracle(w, NoiseConfig(), 9).predict_truth(t).to_dict() for _ in range(2)]
    assert a[0] == a[1]
    o = GroundTruthOracle(w, NoiseConfig(), 9)
    seq1 = [o.predict_truth(t).to_dict() for _ in range(5)]
    o = GroundTruthOracle(w, NoiseConfig(), 9)
    assert seq1 == [o.predict_truth(t).to_dict() for _ in range(5)]


def test_cooccurrence_posterior():
    assert np.allclose(cooccurrence_posterior([], TAX), 1 / TAX.k)
    post = cooccurrence_posterior(["stove"], TAX)
    col = TAX.co_occurrence[:, TAX.object_index["stove"]]
    assert np.allclose(post, col / col.sum())
    assert TAX.categories[int(np.argmax(post))] == "kitchen"
    a = predict_cooccurrence(_ctx(["stove"]), TAX)
    b = predict_cooccurrence(_ctx(["stove"]), TAX)
    assert a.to_dict() == b.to_dict()
    assert entropy(predict_cooccurrence(_ctx(), TAX).distribution) == pytest.approx(np.log(TAX.k))


def test_hybrid_gate_extremes():
    w = generate_world(WorldConfig(), 0)
    never = HybridOracle(w, entropy_gate=float("inf"))
    always = HybridOracle(w, entropy_gate=0.0)
    fr = Frontier(0, w.rooms[0].centroid, frozenset({sorted(w.rooms[0].cells)[0]}))
    for objs in ([], ["stove"], ["bed", "lamp"], ["chair"]):
        ctx = OracleContext(fr, w.rooms[0].id, w.category_name(w.rooms[0].id), frozenset(objs))
        never.predict(ctx)
        always.predict(ctx)
    assert never.stats.expensive == 0 and never.stats.calls == 4
    assert always.stats.expensive == 4


def test_hybrid_expensive_fraction(frontier_corpus):
    calls = expensive = 0
    for seed, (world, ctxs) in enumerate(frontier_corpus):
        h = HybridOracle(world, NoiseConfig(), seed)
        for c in ctxs:
            h.predict(c)
        calls += h.stats.calls
        expensive += h.stats.expensive
    assert calls >= 1000
    assert abs(expensive / calls - 0.4) <= 0.05, expensive / calls


def test_external_echo_stdio():
    oracle = ExternalOracle(_stdio("echo"), TAX, timeout_s=10.0)
    try:
        preds = [oracle.predict(_ctx(["sink"])).to_dict() for _ in range(3)]
    finally:
        oracle.close()
    assert preds[0] == preds[1] == preds[2]
    assert preds[0]["category"] == "kitchen" and preds[0]["confidence"] == 0.8


def test_external_malformed_and_timeout():
    with pytest.raises(OracleParseError):
        predict_external(_ctx(), _stdio("garbage"), TAX, timeout_s=10.0)
    with pytest.raises(OracleTimeout):
        predict_external(_ctx(), _stdio("slow"), TAX, timeout_s=0.3)
    with pytest.raises(ValueError):
        ExternalOracle("ftp://x", TAX)


def test_malformed_responses_fall_back_in_episodes():
    w = mirror_world()
    cfg = OracleConfig(kind="external", endpoint=_stdio("garbage"), timeout_s=10.0)
    t = run_episode(w, Task(("bed",), step_budget=30), "full", cfg, start=Pose((2, 12), 0))
    assert t.oracle_stats["failures"] > 0
    assert t.error is None


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        n = int(self.headers["Content-Length"])
        json.loads(self.rfile.read(n))
        body = KITCHEN.encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_external_echo_http():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    try:
        url = f"http://127.0.0.1:{server.server_port}/"
        a = predict_external(_ctx(), url, TAX)
        b = predict_external(_ctx(), url, TAX)
    finally:
        server.shutdown()
        server.server_close()
    assert a.to_dict() == b.to_dict() and a.category == "kitchen"


def test_request_has_no_ground_truth():
    req = json.loads(serialize_request(_ctx(["lamp"])))
    assert set(req) == {"schema", "step", "frontier", "perceived_category", "local_objects",
                        "explored_categories", "goal"}


def test_response_roundtrip_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(500):
        objs = tuple((str(rng.choice(TAX.objects)), float(np.round(rng.uniform(0, 1), int(rng.integers(0, 6)))))
                     for _ in range(int(rng.integers(0, 6))))
        resp = OracleResponse(TAX.categories[int(rng.integers(TAX.k))],
                              float(rng.uniform(0, 1)), objs)
        line = serialize_response(resp)
        assert parse_response(line, TAX) == resp
        assert serialize_response(parse_response(line, TAX)) == line


@pytest.mark.parametrize("line", [
    "", "[]", '{"room": "kitchen"}', '{"room": "kitchen", "confidence": 1.5}',
    '{"room": "attic", "confidence": 0.5}', '{"room": "kitchen", "confidence": 0.5, "extra": 1}',
    '{"room": "kitchen", "confidence": 0.5, "objects": [{"name": "x"}]}',
    '{"room": "kitchen", "confidence": true}',
])
def test_parse_rejects(line):
    with pytest.raises(OracleParseError):
        parse_response(line, TAX)


def test_cooccurrence_oracle_counts_calls():
    o = CooccurrenceOracle(TAX)
    o.predict(_ctx(["stove"]))
    assert o.stats.calls == 1 and o.stats.expensive == 0


def test_external_config_needs_endpoint():
    with pytest.raises(ValueError):
        OracleConfig(kind="external")
