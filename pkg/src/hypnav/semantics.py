"""Value types shared by the graph, oracles and policy: distributions and predictions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .world.core import semantic_embedding
from .world.taxonomy import Taxonomy


@dataclass(frozen=True, eq=False)
class SemanticDistribution:
    """A probability vector over a taxonomy's categories."""

    probs: np.ndarray
    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or p.shape[0] != len(self.categories):
            raise ValueError("distribution length must match the category list")
        if not np.all(np.isfinite(p)) or p.min() < -1e-12 or p.max() > 1 + 1e-12:
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "categories", tuple(self.categories))

    def prob(self, category: str) -> float:
        try:
            return float(self.probs[self.categories.index(category)])
        except ValueError:
            return 0.0

    @property
    def argmax(self) -> str:
        return self.categories[int(np.argmax(self.probs))]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemanticDistribution):
            return NotImplemented
        return self.categories == other.categories and np.array_equal(self.probs, other.probs)

    __hash__ = object.__hash__


def uniform_distribution(taxonomy: Taxonomy) -> SemanticDistribution:
    return SemanticDistribution(np.full(taxonomy.k, 1.0 / taxonomy.k), taxonomy.categories)


def peaked_distribution(taxonomy: Taxonomy, category: str, rho: float) -> SemanticDistribution:
    """``rho`` on ``category``; the rest spread by co-occurrence similarity."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("confidence must lie in [0, 1]")
    i = taxonomy.index_of(category)
    weights = np.array(taxonomy.similarity[i], dtype=float)
    weights[i] = 0.0
    if weights.sum() <= 0:
        weights = np.ones(taxonomy.k)
        weights[i] = 0.0
    probs = weights / weights.sum() * (1.0 - rho)
    probs[i] = rho
    probs /= probs.sum()
    return SemanticDistribution(probs, taxonomy.categories)


@dataclass(frozen=True, eq=False)
class HypothesisPrediction:
    """A predicted room: category distribution, expected objects, expected features.

    ``predicted_objects`` is ordered by decreasing probability. ``error``
    names the injected error type for simulated oracles (None when the
    oracle meant to be right).
    """

    distribution: SemanticDistribution
    predicted_objects: tuple[tuple[str, float], ...]
    predicted_embedding: np.ndarray
    confidence: float
    source: str = "unknown"
    error: str | None = None
    category: str = field(default="")

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0 + 1e-12:
            raise ValueError("confidence must lie in [0, 1]")
        objs = tuple((str(n), float(p)) for n, p in self.predicted_objects)
        for _, p in objs:
            if not 0.0 <= p <= 1.0:
                raise ValueError("object probabilities must lie in [0, 1]")
        object.__setattr__(self, "predicted_objects", objs)
        emb = np.array(self.predicted_embedding, dtype=float)
        emb.setflags(write=False)
        object.__setattr__(self, "predicted_embedding", emb)
        if not self.category:
            object.__setattr__(self, "category", self.distribution.argmax)

    @property
    def object_names(self) -> frozenset[str]:
        return frozenset(n for n, _ in self.predicted_objects)

    def object_prob(self, name: str) -> float | None:
        for n, p in self.predicted_objects:
            if n == name:
                return p
        return None

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "confidence": float(self.confidence),
            "probs": [float(v) for v in self.distribution.probs],
            "objects": [[n, p] for n, p in self.predicted_objects],
            "embedding": [float(v) for v in self.predicted_embedding],
            "source": self.source,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict, categories: tuple[str, ...]) -> "HypothesisPrediction":
        return cls(
            distribution=SemanticDistribution(np.array(data["probs"], dtype=float), categories),
            predicted_objects=tuple((n, float(p)) for n, p in data["objects"]),
            predicted_embedding=np.array(data["embedding"], dtype=float),
            confidence=float(data["confidence"]),
            source=data.get("source", "unknown"),
            error=data.get("error"),
            category=data.get("category", ""),
        )


def make_prediction(
    taxonomy: Taxonomy, category: str, confidence: float, objects: Iterable[tuple[str, float]],
    embedding: np.ndarray | None = None, source: str = "unknown", error: str | None = None,
) -> HypothesisPrediction:
    """Assemble a prediction from a (category, confidence, objects) triple."""
    objs = sorted(((n, float(p)) for n, p in objects), key=lambda x: (-x[1], x[0]))
    if embedding is None:
        embedding = semantic_embedding(taxonomy, category, [n for n, _ in objs])
    return HypothesisPrediction(
        distribution=peaked_distribution(taxonomy, category, confidence),
        predicted_objects=tuple(objs),
        predicted_embedding=embedding,
        confidence=float(confidence),
        source=source,
        error=error,
        category=category,
    )


def uniform_prediction(taxonomy: Taxonomy, source: str = "fallback") -> HypothesisPrediction:
    """No-information prediction used when an oracle fails."""
    return HypothesisPrediction(
        distribution=uniform_distribution(taxonomy),
        predicted_objects=(),
        predicted_embedding=semantic_embedding(taxonomy, None, []),
        confidence=1.0 / taxonomy.k,
        source=source,
        category=taxonomy.categories[0],
    )
