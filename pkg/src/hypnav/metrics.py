"""Episode and batch metrics computed offline from traces."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from scipy.stats import binomtest

from .agent import SUCCESS, TRACE_SCHEMA, EpisodeTrace


class MixedSchemaError(ValueError):
    pass


def spl(success: int | bool, l_star: float, l: float) -> float:
    """Success weighted by the ratio of optimal to actual path length."""
    if not l_star > 0:
        raise ValueError(f"optimal length must be positive, got {l_star}")
    if l < 0:
        raise ValueError("path length must be nonnegative")
    return float(bool(success)) * l_star / max(l_star, l)


def _refute_positions(record: dict) -> list[tuple[float, float]]:
    return [tuple(e["pos"]) for e in record.get("events", ()) if e.get("op") == "refute"]


def revisit_counts(trace: EpisodeTrace, zone_m: float = 1.0) -> tuple[int, int]:
    """(selections into an earlier refuted zone, exploration selections).

    A refutation logged in a step counts for that step's selection, which
    the agent makes after verifying.
    """
    zones: list[tuple[float, float]] = []
    hits = total = 0
    r2 = zone_m * zone_m + 1e-12
    for rec in trace.steps:
        zones.extend(_refute_positions(rec))
        sel = rec.get("select")
        if not sel or not sel.get("explore"):
            continue
        total += 1
        x, y = sel["pos"]
        if any((x - zx) ** 2 + (y - zy) ** 2 <= r2 for zx, zy in zones):
            hits += 1
    return hits, total


def revisit_rate(trace: EpisodeTrace, zone_m: float = 1.0) -> float:
    hits, total = revisit_counts(trace, zone_m)
    return hits / total if total else 0.0


@dataclass
class EpisodeMetrics:
    seed: int
    arm: str
    success: list[int]
    spl: list[float]
    revisit_rate: float
    confirmed: int
    refuted: int
    cascade_events: list[tuple[int, int]]
    peak_nodes: int
    final_nodes: int
    steps: int

    @property
    def mean_spl(self) -> float:
        return sum(self.spl) / len(self.spl) if self.spl else 0.0

    @property
    def success_rate(self) -> float:
        return sum(self.success) / len(self.success) if self.success else 0.0


def episode_metrics(trace: EpisodeTrace, zone_m: float = 1.0) -> EpisodeMetrics:
    succ, spls = [], []
    for g in trace.goal_records:
        ok = int(g["status"] == SUCCESS)
        succ.append(ok)
        spls.append(spl(ok, g["l_star"], g["path_length"]) if g["l_star"] > 0 else float(ok))
    if not trace.goal_records:
        succ, spls = [0], [0.0]
    return EpisodeMetrics(
        seed=trace.seed, arm=trace.arm, success=succ, spl=spls,
        revisit_rate=revisit_rate(trace, zone_m),
        confirmed=trace.confirmed_nodes, refuted=trace.refuted_nodes,
        cascade_events=[(int(d), int(n)) for d, n in trace.graph_stats.get("cascade_events", [])],
        peak_nodes=trace.peak_nodes, final_nodes=trace.final_nodes, steps=len(trace.steps),
    )


@dataclass
class LifecycleSummary:
    created: int = 0
    confirmed: int = 0
    refuted: int = 0
    confirmed_fraction: float = 0.0
    refuted_fraction: float = 0.0
    cascades: int = 0
    depth_histogram: dict[int, int] = field(default_factory=dict)
    mean_removed: float = 0.0
    max_depth: int = 0

    @property
    def depth_mode(self) -> int | None:
        if not self.depth_histogram:
            return None
        return min(self.depth_histogram, key=lambda d: (-self.depth_histogram[d], d))


def lifecycle(traces: Iterable[EpisodeTrace]) -> LifecycleSummary:
    """Hypothesis creation, confirmation and refutation totals with cascade depths."""
    created = confirmed = refuted = 0
    hist: Counter = Counter()
    removed = []
    for t in traces:
        created += int(t.graph_stats.get("creations", 0))
        confirmed += t.confirmed_nodes
        refuted += t.refuted_nodes
        for depth, n in t.graph_stats.get("cascade_events", []):
            hist[int(depth)] += 1
            removed.append(int(n))
    return LifecycleSummary(
        created=created, confirmed=confirmed, refuted=refuted,
        confirmed_fraction=confirmed / created if created else 0.0,
        refuted_fraction=refuted / created if created else 0.0,
        cascades=len(removed), depth_histogram=dict(sorted(hist.items())),
        mean_removed=sum(removed) / len(removed) if removed else 0.0,
        max_depth=max(hist) if hist else 0,
    )


@dataclass
class ArmRow:
    arm: str
    episodes: int
    goals: int
    sr: float
    spl: float
    revisit_rate: float
    created: int
    confirmed: int
    refuted: int
    cascades: int
    mean_removed: float
    mean_peak_nodes: float
    mean_final_nodes: float
    mean_steps: float


@dataclass
class PairedComparison:
    """Per-seed comparison of ``arm_a`` minus ``arm_b``; wins count seeds where a is higher."""

    arm_a: str
    arm_b: str
    seeds: int
    mean_spl_diff: float
    wins: int
    losses: int
    ties: int
    sign_test_p: float


@dataclass
class SummaryTable:
    rows: list[ArmRow]
    paired: list[PairedComparison]

    COLUMNS = ("arm", "episodes", "goals", "sr", "spl", "revisit_rate", "created", "confirmed",
               "refuted", "cascades", "mean_removed", "mean_peak_nodes", "mean_final_nodes",
               "mean_steps")

    def row(self, arm: str) -> ArmRow:
        for r in self.rows:
            if r.arm == arm:
                return r
        raise KeyError(arm)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in self.COLUMNS])
        return buf.getvalue()

    def paired_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ("arm_a", "arm_b", "seeds", "mean_spl_diff", "wins", "losses", "ties", "sign_test_p")
        w.writerow(cols)
        for p in self.paired:
            d = asdict(p)
            w.writerow([_fmt(d[c]) for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "paired": [asdict(p) for p in self.paired]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def sign_test(wins: int, losses: int) -> float:
    """One-sided p-value that wins exceed losses (ties dropped)."""
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def paired_compare(a: Sequence[tuple[int, float]], b: Sequence[tuple[int, float]],
                   arm_a: str = "", arm_b: str = "") -> PairedComparison:
    """Compare per-seed values ``(seed, value)`` of two arms on their shared seeds."""
    other = dict(b)
    diffs = [v - other[s] for s, v in sorted(a) if s in other]
    wins = sum(1 for d in diffs if d > 0)
    losses = sum(1 for d in diffs if d < 0)
    return PairedComparison(arm_a, arm_b, len(diffs),
                            sum(diffs) / len(diffs) if diffs else 0.0, wins, losses,
                            len(diffs) - wins - losses, sign_test(wins, losses))


def aggregate(traces: Iterable[EpisodeTrace], reference: str | None = None,
              zone_m: float = 1.0) -> SummaryTable:
    """Per-arm table plus matched-seed SPL comparisons against ``reference``.

    Arms appear in order of first occurrence after sorting traces by
    (seed, arm), so shuffled input gives the same table.
    """
    traces = sorted(traces, key=lambda t: (t.seed, t.arm))
    schemas = {t.schema for t in traces}
    if schemas - {TRACE_SCHEMA}:
        raise MixedSchemaError(f"trace schemas {sorted(schemas)} differ from {TRACE_SCHEMA}")
    by_arm: dict[str, list[EpisodeMetrics]] = {}
    raw: dict[str, list[EpisodeTrace]] = {}
    for t in traces:
        by_arm.setdefault(t.arm, []).append(episode_metrics(t, zone_m))
        raw.setdefault(t.arm, []).append(t)
    arms = sorted(by_arm, key=_arm_order)
    rows = []
    for arm in arms:
        ms = by_arm[arm]
        succ = [s for m in ms for s in m.success]
        spls = [v for m in ms for v in m.spl]
        life = lifecycle(raw[arm])
        n = len(ms)
        rows.append(ArmRow(
            arm=arm, episodes=n, goals=len(succ),
            sr=sum(succ) / len(succ) if succ else 0.0,
            spl=sum(spls) / len(spls) if spls else 0.0,
            revisit_rate=sum(m.revisit_rate for m in ms) / n,
            created=life.created, confirmed=life.confirmed, refuted=life.refuted,
            cascades=life.cascades, mean_removed=life.mean_removed,
            mean_peak_nodes=sum(m.peak_nodes for m in ms) / n,
            mean_final_nodes=sum(m.final_nodes for m in ms) / n,
            mean_steps=sum(m.steps for m in ms) / n,
        ))
    paired = []
    if reference is None and arms:
        reference = arms[0]
    if reference in by_arm:
        ref_vals = [(m.seed, m.mean_spl) for m in by_arm[reference]]
        for arm in arms:
            if arm != reference:
                paired.append(paired_compare(ref_vals, [(m.seed, m.mean_spl) for m in by_arm[arm]],
                                             reference, arm))
    return SummaryTable(rows, paired)


_ARM_ORDER = ("full", "no-semantic", "no-cascade", "local-delete", "soft-decay", "geometry-only")


def _arm_order(name: str) -> tuple[int, str]:
    return (_ARM_ORDER.index(name) if name in _ARM_ORDER else len(_ARM_ORDER), name)


def per_seed(traces: Iterable[EpisodeTrace], arm: str, metric: str = "spl") -> dict[int, float]:
    """Per-seed episode values of ``spl``, ``sr`` or ``revisit`` for one arm."""
    out = {}
    for t in traces:
        if t.arm != arm:
            continue
        m = episode_metrics(t)
        out[t.seed] = {"spl": m.mean_spl, "sr": m.success_rate, "revisit": m.revisit_rate}[metric]
    return out


def ordering_fraction(traces: Sequence[EpisodeTrace], better: str, worse: str,
                      metric: str = "spl") -> float:
    """Fraction of shared seeds where ``better`` scores at least ``worse``."""
    a = per_seed(traces, better, metric)
    b = per_seed(traces, worse, metric)
    shared = sorted(set(a) & set(b))
    if not shared:
        return math.nan
    return sum(1 for s in shared if a[s] >= b[s] - 1e-12) / len(shared)


__all__ = [
    "ArmRow", "EpisodeMetrics", "LifecycleSummary", "MixedSchemaError", "PairedComparison",
    "SummaryTable", "aggregate", "episode_metrics", "lifecycle", "ordering_fraction",
    "paired_compare", "per_seed", "revisit_counts", "revisit_rate", "sign_test", "spl",
]
