"""Frontier scoring and selection, prediction residuals, and ablation arms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .frontier import Frontier
from .semantics import HypothesisPrediction, SemanticDistribution
from .world.core import cosine
from .world.taxonomy import Taxonomy


class UnknownGoalError(ValueError):
    pass


class EmptyCandidatesError(ValueError):
    pass


@dataclass(frozen=True)
class ScoringParams:
    lambda_d: float = 0.15
    lambda_h: float = 0.10
    # only the soft-decay arm applies this
    lambda_r: float = 0.15

    def __post_init__(self) -> None:
        for name in ("lambda_d", "lambda_h", "lambda_r"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class ResidualWeights:
    omega_c: float = 0.4
    omega_f: float = 0.3
    omega_o: float = 0.3
    theta_refute: float = 0.5

    def __post_init__(self) -> None:
        w = (self.omega_c, self.omega_f, self.omega_o)
        if min(w) < 0:
            raise ValueError("residual weights must be nonnegative")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"residual weights sum to {sum(w)!r}, not 1")
        if not 0.0 < self.theta_refute < 1.0:
            raise ValueError("theta_refute must lie in (0, 1)")


class Verdict(str, Enum):
    CONFIRMED = "confirmed"
    REFUTED = "refuted"


@dataclass(frozen=True)
class ResidualReport:
    delta_c: float
    delta_f: float
    delta_o: float
    delta_sem: float
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"delta_c": self.delta_c, "delta_f": self.delta_f, "delta_o": self.delta_o,
                "delta_sem": self.delta_sem, "verdict": self.verdict.value}


@dataclass(frozen=True)
class ActualSemantics:
    """What the agent finds on arrival."""

    category: str
    objects: frozenset[str]
    embedding: np.ndarray


class ArmKind(str, Enum):
    FULL = "full"
    NO_SEMANTIC = "no-semantic"
    NO_CASCADE = "no-cascade"
    LOCAL_DELETE = "local-delete"
    SOFT_DECAY = "soft-decay"
    GEOMETRY_ONLY = "geometry-only"


@dataclass(frozen=True)
class PolicyArm:
    kind: ArmKind = ArmKind.FULL
    # confidence multiplier applied once to a refuted node (no-cascade arm)
    attenuation: float = 0.3
    gamma: float = 0.3
    lambda_r: float = 0.15

    @classmethod
    def parse(cls, name: str) -> "PolicyArm":
        try:
            return cls(ArmKind(name.strip().lower().replace("_", "-")))
        except ValueError:
            names = ", ".join(k.value for k in ArmKind)
            raise ValueError(f"unknown arm {name!r}; expected one of {names}") from None

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def semantic(self) -> bool:
        """Whether the arm ranks frontiers by predicted semantics."""
        return self.kind not in (ArmKind.NO_SEMANTIC, ArmKind.GEOMETRY_ONLY)

    @property
    def uses_hypotheses(self) -> bool:
        return self.kind is not ArmKind.GEOMETRY_ONLY

    @property
    def removes_refuted(self) -> bool:
        return self.kind in (ArmKind.FULL, ArmKind.LOCAL_DELETE, ArmKind.NO_SEMANTIC)

    def effective_lambda_r(self) -> float:
        return self.lambda_r if self.kind is ArmKind.SOFT_DECAY else 0.0


ALL_ARMS: tuple[ArmKind, ...] = tuple(ArmKind)


def entropy(dist: SemanticDistribution | np.ndarray) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    p = dist.probs if isinstance(dist, SemanticDistribution) else np.asarray(dist, dtype=float)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def goal_alignment(pred: HypothesisPrediction, goal: str, taxonomy: Taxonomy | None = None) -> float:
    """Probability mass a prediction assigns to reaching ``goal``.

    A category goal reads P(goal). An object goal reads the predicted object
    probability when listed and zero when another list was given. With no
    object list it falls back to the co-occurrence expectation under the
    predicted distribution.
    """
    cats = pred.distribution.categories
    if goal in cats:
        return pred.distribution.prob(goal)
    if taxonomy is not None and goal in taxonomy.object_index:
        p = pred.object_prob(goal)
        if p is not None:
            return p
        if pred.predicted_objects:
            return 0.0
        col = taxonomy.co_occurrence[:, taxonomy.object_index[goal]]
        return float(np.dot(pred.distribution.probs, col))
    raise UnknownGoalError(f"goal {goal!r} is neither a category nor a known object")


def exploration_score(hyp: HypothesisPrediction, goal_category: str, dist_m: float,
                      params: ScoringParams, n_visits: int = 0, *,
                      taxonomy: Taxonomy | None = None) -> float:
    """Goal alignment minus travel cost plus entropy bonus minus revisit penalty."""
    if dist_m < 0 or n_visits < 0:
        raise ValueError("distance and visit count must be nonnegative")
    return (goal_alignment(hyp, goal_category, taxonomy) - params.lambda_d * dist_m
            + params.lambda_h * entropy(hyp.distribution) - params.lambda_r * n_visits)


@dataclass(frozen=True)
class Candidate:
    frontier: Frontier
    prediction: HypothesisPrediction | None
    dist: float
    n_visits: int = 0


def _best(items: Iterable[tuple[float, int, Frontier]]) -> Frontier:
    best = None
    for score, fid, fr in items:
        if best is None or score > best[0] or (score == best[0] and fid < best[1]):
            best = (score, fid, fr)
    if best is None:
        raise EmptyCandidatesError("no frontier candidates")
    return best[2]


def select_frontier(candidates: Sequence[Candidate], goal: str, params: ScoringParams,
                    arm: PolicyArm, *, taxonomy: Taxonomy | None = None) -> Frontier:
    """Best candidate for the arm; ties go to the smallest frontier id."""
    if not candidates:
        raise EmptyCandidatesError("no frontier candidates")
    if not arm.semantic or any(c.prediction is None for c in candidates):
        return _best((-c.dist, c.frontier.id, c.frontier) for c in candidates)
    p = ScoringParams(params.lambda_d, params.lambda_h, arm.effective_lambda_r())
    return _best((exploration_score(c.prediction, goal, c.dist, p, c.n_visits, taxonomy=taxonomy),
                  c.frontier.id, c.frontier) for c in candidates)


def jaccard_distance(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 0.0
    return 1.0 - len(a & b) / len(a | b)


def _terms(pred: HypothesisPrediction, actual: ActualSemantics) -> tuple[float, float, float]:
    pe = np.asarray(pred.predicted_embedding, dtype=float)
    ae = np.asarray(actual.embedding, dtype=float)
    if pe.shape != ae.shape:
        raise ValueError(f"embedding length mismatch: {pe.shape} vs {ae.shape}")
    dc = 1.0 - pred.distribution.prob(actual.category)
    sim = cosine(pe, ae)
    df = 1.0 - min(1.0, max(0.0, sim))
    do = jaccard_distance(pred.object_names, actual.objects)
    return float(dc), float(df), float(do)


def _report(terms: tuple[float, float, float], w: tuple[float, float, float], theta: float) -> ResidualReport:
    dc, df, do = terms
    sem = w[0] * dc + w[1] * df + w[2] * do
    return ResidualReport(dc, df, do, sem, Verdict.REFUTED if sem > theta else Verdict.CONFIRMED)


def residual(pred: HypothesisPrediction, actual: ActualSemantics,
             weights: ResidualWeights = ResidualWeights()) -> ResidualReport:
    """Weighted category, feature and object mismatch with its verdict."""
    return _report(_terms(pred, actual), (weights.omega_c, weights.omega_f, weights.omega_o),
                   weights.theta_refute)


def residual_ablated(pred: HypothesisPrediction, actual: ActualSemantics, drop: str,
                     weights: ResidualWeights = ResidualWeights()) -> ResidualReport:
    """Residual with one term removed and the other two weights rescaled to sum 1."""
    idx = {"c": 0, "f": 1, "o": 2}.get(drop)
    if idx is None:
        raise ValueError(f"drop must be one of c, f, o; got {drop!r}")
    w = [weights.omega_c, weights.omega_f, weights.omega_o]
    w[idx] = 0.0
    total = sum(w)
    if total <= 0:
        raise ValueError("remaining weights are all zero")
    w = [x / total for x in w]
    return _report(_terms(pred, actual), (w[0], w[1], w[2]), weights.theta_refute)


__all__ = [
    "ALL_ARMS", "ActualSemantics", "ArmKind", "Candidate", "EmptyCandidatesError", "PolicyArm",
    "ResidualReport", "ResidualWeights", "ScoringParams", "UnknownGoalError", "Verdict",
    "entropy", "exploration_score", "goal_alignment", "jaccard_distance", "residual",
    "residual_ablated", "select_frontier",
]
