"""Independent reference implementations the tests compare against."""

from __future__ import annotations

import heapq
import math

import numpy as np

from hypnav.policy import residual


def dijkstra(passable: np.ndarray, a, b, res: float) -> float:
    h, w = passable.shape
    dist = {a: 0.0}
    heap = [(0.0, a)]
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if (r, c) == b:
            return d
        if d > dist[(r, c)]:
            continue
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (r + dr, c + dc)
            if 0 <= q[0] < h and 0 <= q[1] < w and passable[q]:
                nd = d + res
                if nd < dist.get(q, math.inf):
                    dist[q] = nd
                    heapq.heappush(heap, (nd, q))
    return math.inf


def dbscan_oracle(cells, eps, min_samples):
    """Pairwise O(n^2) density reachability; borders go to their nearest core."""
    pts = sorted(set(cells))
    n = len(pts)
    near = [[j for j in range(n)
             if (pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2 <= eps * eps + 1e-9]
            for i in range(n)]
    core = [len(near[i]) >= min_samples for i in range(n)]
    comp = [-1] * n
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        stack = [i]
        comp[i] = i
        while stack:
            k = stack.pop()
            for j in near[k]:
                if core[j] and comp[j] < 0:
                    comp[j] = i
                    stack.append(j)
    label = {}
    for i in range(n):
        if core[i]:
            label[i] = comp[i]
        else:
            cands = [((pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2, j)
                     for j in near[i] if core[j]]
            if cands:
                label[i] = comp[min(cands)[1]]
    groups = {}
    for i, lab in label.items():
        groups.setdefault(lab, set()).add(pts[i])
    return {frozenset(g) for g in groups.values() if len(g) >= min_samples}


def refutation_rates(pairs, thetas):
    sems = [residual(p, a).delta_sem for p, a in pairs]
    return [sum(s > t for s in sems) / len(sems) for t in thetas]
