"""Hypothesis generators for frontiers.

Built-in oracles are deterministic given the world, the configuration and
the sequence of queries. The external adapter speaks newline-delimited
JSON over a subprocess's standard streams or a single HTTP endpoint.
"""

from __future__ import annotations

import json
import math
import selectors
import shlex
import subprocess
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .frontier import Frontier
from .policy import entropy
from .semantics import HypothesisPrediction, SemanticDistribution, make_prediction, uniform_prediction
from .world.core import DOOR, FREE, ILLUSION, World, semantic_embedding
from .world.taxonomy import Taxonomy

ERROR_KINDS = ("mirror", "glass", "artwork", "occlusion")
DEFAULT_ERROR_WEIGHTS = {"mirror": 0.38, "glass": 0.29, "artwork": 0.18, "occlusion": 0.15}
CONFIDENCE_RANGE = (0.6, 0.9)
MAX_PREDICTED_OBJECTS = 5
# near the 60th percentile of heuristic entropy on default worlds
DEFAULT_ENTROPY_GATE = 1.0

REQUEST_SCHEMA = "hypnav.oracle.request/1"
_ORDER_KEYS = 64


class OracleError(RuntimeError):
    pass


class OracleTimeout(OracleError):
    pass


class OracleParseError(OracleError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    error_rate: float = 0.3
    taxonomy_weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ERROR_WEIGHTS))
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        w = dict(self.taxonomy_weights)
        if set(w) != set(ERROR_KINDS):
            raise ValueError(f"error weights need exactly the keys {ERROR_KINDS}")
        if min(w.values()) < 0 or abs(sum(w.values()) - 1.0) > 1e-9:
            raise ValueError("error weights must be nonnegative and sum to 1")
        object.__setattr__(self, "taxonomy_weights", {k: float(w[k]) for k in ERROR_KINDS})


@dataclass(frozen=True)
class OracleContext:
    """Everything an oracle may see about a frontier. No ground truth."""

    frontier: Frontier
    perceived_region: int
    perceived_category: str
    local_objects: frozenset[str]
    explored_categories: tuple[str, ...] = ()
    goal: str | None = None
    step: int = 0

    def to_request(self) -> dict:
        return {
            "schema": REQUEST_SCHEMA,
            "step": self.step,
            "frontier": {
                "id": self.frontier.id,
                "centroid": [self.frontier.centroid[0], self.frontier.centroid[1]],
                "cells": [list(c) for c in sorted(self.frontier.member_cells)],
            },
            "perceived_category": self.perceived_category,
            "local_objects": sorted(self.local_objects),
            "explored_categories": list(self.explored_categories),
            "goal": self.goal,
        }


@dataclass(frozen=True)
class FrontierTruth:
    """Ground truth about what lies beyond a frontier."""

    member_region: int
    next_region: int
    illusion_kind: str | None
    illusion_region: int | None


def _mode(values: list[int]) -> int:
    counts = Counter(values)
    return min(counts, key=lambda v: (-counts[v], v))


def frontier_truth(world: World, frontier: Frontier) -> FrontierTruth:
    """Region a frontier actually leads into, and any illusion bordering it.

    The next region is the most common region among traversable cells just
    beyond the frontier, preferring regions other than the frontier's own.
    When nothing but the frontier's own room lies beyond and an illusion
    cell borders it, that surface is what the frontier appears to open onto.
    """
    members = [world.region_of(c) for c in sorted(frontier.member_cells)]
    members = [m for m in members if m >= 0]
    member_region = _mode(members) if members else -1
    beyond = sorted(frontier.beyond_cells)
    regions, illusions = [], []
    for cell in beyond:
        kind = world.grid[cell]
        if kind == FREE or kind == DOOR:
            r = world.region_of(cell)
            if r >= 0:
                regions.append(r)
        elif kind == ILLUSION:
            illusions.append(world.illusion_at[cell])
    others = [r for r in regions if r != member_region]
    nxt = _mode(others) if others else member_region
    if nxt == member_region and illusions:
        seg = _mode([i.segment for i in illusions])
        ill = next(i for i in illusions if i.segment == seg)
        shown = ill.region
        if ill.kind == "glass" and member_region == ill.region:
            # glass shows whichever side the viewer is not on
            shown = ill.facing
        return FrontierTruth(member_region, nxt, ill.kind, shown)
    return FrontierTruth(member_region, nxt, None, None)


class Oracle(Protocol):
    name: str

    def predict(self, ctx: OracleContext) -> HypothesisPrediction: ...


@dataclass
class OracleStats:
    calls: int = 0
    expensive: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return {"calls": self.calls, "expensive": self.expensive, "failures": self.failures}


class GroundTruthOracle:
    """Reads the true region behind a frontier and corrupts it.

    Illusion-bordered frontiers always report the shown region. Other
    frontiers are wrong with probability ``error_rate``, with the error
    type drawn from the taxonomy weights. The random stream for a query is
    keyed on (seed, true region, frontier region, repeat count), so agents
    that ask about the same place see the same error.
    """

    name = "gt-noisy"

    def __init__(self, world: World, noise: NoiseConfig = NoiseConfig(), seed: int = 0) -> None:
        self.world = world
        self.taxonomy = world.taxonomy
        self.noise = noise
        self.seed = int(seed)
        self.stats = OracleStats()
        self._repeats: Counter = Counter()
        self._kinds = list(ERROR_KINDS)
        self._weights = np.array([noise.taxonomy_weights[k] for k in ERROR_KINDS])

    def _rng(self, truth: FrontierTruth) -> np.random.Generator:
        key = (truth.next_region, truth.member_region)
        n = self._repeats[key]
        self._repeats[key] += 1
        words = [self.seed & (2**63 - 1), self.noise.rng_seed & (2**63 - 1),
                 truth.next_region + 1, truth.member_region + 1, n]
        return np.random.default_rng(np.random.SeedSequence(words))

    def _region_prediction(self, region: int, conf: float, rhos: np.ndarray,
                           error: str | None, keep: int | None = None) -> HypothesisPrediction:
        names = sorted(self.world.region_object_names(region))
        cap = MAX_PREDICTED_OBJECTS if keep is None else keep
        if len(names) > cap:
            # seeded choice of which objects make the list
            order = np.argsort(self._order_keys[: len(names)], kind="stable")
            names = sorted(names[i] for i in order[:cap])
        objs = [(n, float(rhos[i])) for i, n in enumerate(names)]
        return make_prediction(self.taxonomy, self.world.category_name(region), conf, objs,
                               source=self.name, error=error)

    def predict(self, ctx: OracleContext) -> HypothesisPrediction:
        self.stats.calls += 1
        self.stats.expensive += 1
        return self.predict_truth(frontier_truth(self.world, ctx.frontier))

    def predict_truth(self, truth: FrontierTruth) -> HypothesisPrediction:
        rng = self._rng(truth)
        # fixed draw layout so every branch consumes the same stream
        u_err, u_kind, u_pick = rng.random(3)
        conf = float(rng.uniform(*CONFIDENCE_RANGE))
        rhos = rng.uniform(*CONFIDENCE_RANGE, size=MAX_PREDICTED_OBJECTS)
        self._order_keys = rng.random(_ORDER_KEYS)
        w = self.world
        if truth.illusion_kind is not None and truth.illusion_region is not None:
            return self._region_prediction(truth.illusion_region, conf, rhos, truth.illusion_kind)
        if truth.next_region < 0:
            return uniform_prediction(self.taxonomy, source=self.name)
        if u_err >= self.noise.error_rate:
            return self._region_prediction(truth.next_region, conf, rhos, None)
        cdf = np.cumsum(self._weights)
        kind = self._kinds[min(int(np.searchsorted(cdf, u_kind * cdf[-1], side="right")), 3)]
        if kind == "glass":
            pool = [r for r in w.region_neighbors.get(truth.member_region, ()) if r != truth.next_region]
            if not pool:
                kind = "mirror"
        if kind == "mirror":
            pool = [r.id for r in w.rooms if r.id != truth.next_region]
            if not pool:
                kind = "artwork"
        if kind in ("mirror", "glass"):
            region = pool[min(int(u_pick * len(pool)), len(pool) - 1)]
            return self._region_prediction(region, conf, rhos, kind)
        true_cat = w.category_name(truth.next_region)
        if kind == "artwork":
            cats = [c for c in self.taxonomy.categories if c != true_cat]
            cat = cats[min(int(u_pick * len(cats)), len(cats) - 1)]
            objs = [(n, float(rhos[i])) for i, (n, _) in enumerate(self.taxonomy.top_objects(cat, 3))]
            return make_prediction(self.taxonomy, cat, conf, objs, source=self.name, error=kind)
        # occlusion: right room, most of its contents unseen
        n_obj = len(w.region_object_names(truth.next_region))
        return self._region_prediction(truth.next_region, conf, rhos, kind, keep=max(1, n_obj // 3))


def cooccurrence_posterior(local_objects, taxonomy: Taxonomy) -> np.ndarray:
    """Presence-only naive Bayes posterior over categories with a uniform prior."""
    names = sorted(o for o in local_objects if o in taxonomy.object_index)
    if not names:
        return np.full(taxonomy.k, 1.0 / taxonomy.k)
    cols = [taxonomy.object_index[o] for o in names]
    with np.errstate(divide="ignore"):
        logp = np.log(taxonomy.co_occurrence[:, cols]).sum(axis=1)
    if not np.isfinite(logp.max()):
        return np.full(taxonomy.k, 1.0 / taxonomy.k)
    p = np.exp(logp - logp.max())
    return p / p.sum()


class CooccurrenceOracle:
    """Guesses from nearby objects alone; never consults the world."""

    name = "cooccurrence"

    def __init__(self, taxonomy: Taxonomy) -> None:
        self.taxonomy = taxonomy
        self.stats = OracleStats()

    def predict(self, ctx: OracleContext) -> HypothesisPrediction:
        self.stats.calls += 1
        return predict_cooccurrence(ctx, self.taxonomy)


def predict_cooccurrence(ctx: OracleContext, taxonomy: Taxonomy) -> HypothesisPrediction:
    probs = cooccurrence_posterior(ctx.local_objects, taxonomy)
    dist = SemanticDistribution(probs, taxonomy.categories)
    cat = dist.argmax
    objs = taxonomy.top_objects(cat, MAX_PREDICTED_OBJECTS)
    return HypothesisPrediction(
        distribution=dist,
        predicted_objects=tuple(objs),
        predicted_embedding=semantic_embedding(taxonomy, cat, [n for n, _ in objs]),
        confidence=float(min(1.0, probs.max())),
        source="cooccurrence",
        category=cat,
    )


class HybridOracle:
    """Heuristic first; the noisy ground-truth oracle when the heuristic is unsure."""

    name = "hybrid"

    def __init__(self, world: World, noise: NoiseConfig = NoiseConfig(), seed: int = 0,
                 entropy_gate: float = DEFAULT_ENTROPY_GATE) -> None:
        if not entropy_gate >= 0:
            raise ValueError("entropy_gate must be nonnegative")
        self.taxonomy = world.taxonomy
        self.gate = float(entropy_gate)
        self.expensive_oracle = GroundTruthOracle(world, noise, seed)
        self.stats = OracleStats()

    def predict(self, ctx: OracleContext) -> HypothesisPrediction:
        self.stats.calls += 1
        cheap = predict_cooccurrence(ctx, self.taxonomy)
        if entropy(cheap.distribution) > self.gate:
            self.stats.expensive += 1
            return self.expensive_oracle.predict(ctx)
        return cheap


def predict_ground_truth_noisy(ctx: OracleContext, world: World, noise: NoiseConfig,
                               seed: int = 0) -> HypothesisPrediction:
    """One-shot form of :class:`GroundTruthOracle` (fresh stream per call)."""
    return GroundTruthOracle(world, noise, seed).predict(ctx)


def predict_hybrid(ctx: OracleContext, world: World, noise: NoiseConfig,
                   entropy_gate: float = DEFAULT_ENTROPY_GATE, seed: int = 0) -> HypothesisPrediction:
    return HybridOracle(world, noise, seed, entropy_gate).predict(ctx)


# -- external adapter -----------------------------------------------------


@dataclass(frozen=True)
class OracleResponse:
    room: str
    confidence: float
    objects: tuple[tuple[str, float], ...] = ()

    def to_prediction(self, taxonomy: Taxonomy, source: str = "external") -> HypothesisPrediction:
        return make_prediction(taxonomy, self.room, self.confidence, self.objects, source=source)


def parse_response(line: str, taxonomy: Taxonomy | None = None) -> OracleResponse:
    """Parse one response line: ``{"room": str, "confidence": float, "objects": [{"name", "p"}]}``."""
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise OracleParseError(f"response is not JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise OracleParseError("response must be a JSON object")
    extra = set(data) - {"room", "confidence", "objects"}
    if extra:
        raise OracleParseError(f"unexpected response fields {sorted(extra)}")
    room, conf, objs = data.get("room"), data.get("confidence"), data.get("objects", [])
    if not isinstance(room, str) or not room:
        raise OracleParseError("'room' must be a non-empty string")
    if taxonomy is not None and room not in taxonomy.category_index:
        raise OracleParseError(f"unknown room type {room!r}")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
        raise OracleParseError("'confidence' must be a number in [0, 1]")
    if not isinstance(objs, list):
        raise OracleParseError("'objects' must be a list")
    out = []
    for o in objs:
        if not isinstance(o, dict) or set(o) != {"name", "p"}:
            raise OracleParseError("each object needs exactly 'name' and 'p'")
        name, p = o["name"], o["p"]
        if not isinstance(name, str) or isinstance(p, bool) or not isinstance(p, (int, float)) \
                or not 0.0 <= p <= 1.0:
            raise OracleParseError(f"bad object entry {o!r}")
        out.append((name, float(p)))
    return OracleResponse(room, float(conf), tuple(out))


def serialize_response(resp: OracleResponse) -> str:
    return json.dumps({"room": resp.room, "confidence": resp.confidence,
                       "objects": [{"name": n, "p": p} for n, p in resp.objects]},
                      separators=(",", ":"))


def serialize_request(ctx: OracleContext) -> str:
    return json.dumps(ctx.to_request(), separators=(",", ":"))


class ExternalOracle:
    """Adapter for an out-of-process predictor.

    ``endpoint`` is either an ``http://`` or ``https://`` URL receiving one
    JSON request per POST, or ``stdio:<command>`` for a child process that
    reads request lines on stdin and answers one line each on stdout.
    """

    name = "external"

    def __init__(self, endpoint: str, taxonomy: Taxonomy, timeout_s: float = 5.0) -> None:
        self.endpoint = endpoint
        self.taxonomy = taxonomy
        self.timeout_s = float(timeout_s)
        self.stats = OracleStats()
        self._proc: subprocess.Popen | None = None
        if endpoint.startswith(("http://", "https://")):
            self._mode = "http"
        elif endpoint.startswith("stdio:"):
            self._mode = "stdio"
        else:
            raise ValueError(f"endpoint must be http(s)://... or stdio:<command>, got {endpoint!r}")

    def _start(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.endpoint[len("stdio:"):]), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True, bufsize=1)
        return self._proc

    def _ask_stdio(self, request: str) -> str:
        proc = self._start()
        assert proc.stdin is not None and proc.stdout is not None
        try:
            proc.stdin.write(request + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise OracleError(f"oracle process unavailable: {exc}") from exc
        with selectors.DefaultSelector() as sel:
            sel.register(proc.stdout, selectors.EVENT_READ)
            if not sel.select(self.timeout_s):
                self.close()
                raise OracleTimeout(f"no response within {self.timeout_s} s")
        line = proc.stdout.readline()
        if not line:
            self.close()
            raise OracleError("oracle process closed its output")
        return line

    def _ask_http(self, request: str) -> str:
        req = urllib.request.Request(self.endpoint, data=request.encode("utf-8"), method="POST",
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                return resp.read().decode("utf-8")
        except TimeoutError as exc:
            raise OracleTimeout(f"no response within {self.timeout_s} s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise OracleTimeout(f"no response within {self.timeout_s} s") from exc
            raise OracleError(f"request failed: {exc.reason}") from exc

    def predict(self, ctx: OracleContext) -> HypothesisPrediction:
        self.stats.calls += 1
        self.stats.expensive += 1
        request = serialize_request(ctx)
        raw = self._ask_http(request) if self._mode == "http" else self._ask_stdio(request)
        return parse_response(raw.strip(), self.taxonomy).to_prediction(self.taxonomy, self.name)

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.poll() is None:
                self._proc.kill()
            self._proc.wait()
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream is not None:
                    stream.close()
            self._proc = None

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


def predict_external(ctx: OracleContext, endpoint: str, taxonomy: Taxonomy,
                     timeout_s: float = 5.0) -> HypothesisPrediction:
    oracle = ExternalOracle(endpoint, taxonomy, timeout_s)
    try:
        return oracle.predict(ctx)
    finally:
        oracle.close()


# -- configuration --------------------------------------------------------

ORACLE_KINDS = ("gt-noisy", "cooccurrence", "hybrid", "external")


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "gt-noisy"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    entropy_gate: float = DEFAULT_ENTROPY_GATE
    endpoint: str | None = None
    timeout_s: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle {self.kind!r}; expected one of {ORACLE_KINDS}")
        if self.kind == "external" and not self.endpoint:
            raise ValueError("external oracle needs an endpoint")
        if not (self.entropy_gate >= 0 or math.isinf(self.entropy_gate)):
            raise ValueError("entropy_gate must be nonnegative")


def build_oracle(config: OracleConfig, world: World, seed: int):
    if config.kind == "gt-noisy":
        return GroundTruthOracle(world, config.noise, seed)
    if config.kind == "cooccurrence":
        return CooccurrenceOracle(world.taxonomy)
    if config.kind == "hybrid":
        return HybridOracle(world, config.noise, seed, config.entropy_gate)
    return ExternalOracle(config.endpoint or "", world.taxonomy, config.timeout_s)


__all__ = [
    "CooccurrenceOracle", "DEFAULT_ENTROPY_GATE", "DEFAULT_ERROR_WEIGHTS", "ERROR_KINDS",
    "ExternalOracle", "FrontierTruth", "GroundTruthOracle", "HybridOracle", "NoiseConfig",
    "OracleConfig", "OracleContext", "OracleError", "OracleParseError", "OracleResponse",
    "OracleStats", "OracleTimeout", "build_oracle", "cooccurrence_posterior", "frontier_truth",
    "parse_response", "predict_cooccurrence", "predict_external", "predict_ground_truth_noisy",
    "predict_hybrid", "serialize_request", "serialize_response",
]
