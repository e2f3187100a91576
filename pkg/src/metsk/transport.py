"""Earth mover's distance between feature histograms and the derived
domain-similarity score ``exp(-gamma * EMD)``.

Two solvers are provided: the exact 1-D closed form (integral of the
absolute CDF difference) and a general transportation simplex used as a
cross-check.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError, ValidationError

DEFAULT_GAMMA = 0.01
DEFAULT_BINS = 100
MASS_TOL = 1e-9


@dataclass(frozen=True)
class FeatureHistogram:
    """Nonempty bins only: each has a mass and a representative value
    (the mean of the values that fell in it)."""

    edges: np.ndarray
    mass: np.ndarray
    representative: np.ndarray

    def __post_init__(self):
        if self.mass.shape != self.representative.shape or self.mass.ndim != 1 or self.mass.size == 0:
            raise ValidationError("histogram needs matching, nonempty mass and representative arrays")
        if (self.mass < 0).any() or abs(self.mass.sum() - 1.0) > MASS_TOL:
            raise ValidationError(f"histogram masses must be nonnegative and sum to 1, got {self.mass.sum()!r}")


def histogram(values, bins: int = DEFAULT_BINS, value_range: Optional[tuple[float, float]] = None) -> FeatureHistogram:
    """Equal-width histogram over ``value_range`` (default: the data range)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DegenerateInputError("histogram of an empty vector")
    if not np.isfinite(v).all():
        raise DegenerateInputError("histogram input contains non-finite values")
    if bins < 1:
        raise ValidationError("bins must be >= 1")
    lo, hi = (float(v.min()), float(v.max())) if value_range is None else map(float, value_range)
    if v.min() < lo or v.max() > hi:
        raise ValidationError("values fall outside the histogram range")
    if hi == lo:
        return FeatureHistogram(np.array([lo, hi]), np.array([1.0]), np.array([float(v.mean())]))
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(((v - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=v, minlength=bins)
    keep = counts > 0
    return FeatureHistogram(edges, counts[keep] / v.size, sums[keep] / counts[keep])


def joint_histograms(a, b, bins: int = DEFAULT_BINS) -> tuple[FeatureHistogram, FeatureHistogram]:
    """Histograms of ``a`` and ``b`` over their common range."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DegenerateInputError("histogram of an empty vector")
    lo = float(min(a.min(), b.min()))
    hi = float(max(a.max(), b.max()))
    return histogram(a, bins, (lo, hi)), histogram(b, bins, (lo, hi))


def emd_closed_form(hs: FeatureHistogram, ht: FeatureHistogram) -> float:
    """1-D EMD with ground distance ``|x - y|``: integral of ``|F_s - F_t|``."""
    points = np.concatenate([hs.representative, ht.representative])
    flow = np.concatenate([hs.mass, -ht.mass])
    order = np.argsort(points, kind="stable")
    points, flow = points[order], flow[order]
    cdf_gap = np.cumsum(flow)[:-1]
    return float(np.abs(cdf_gap) @ np.diff(points))


def emd_simplex(hs: FeatureHistogram, ht: FeatureHistogram, tol: float = 1e-12, max_pivots: int = 100000) -> float:
    """Transportation simplex (north-west corner start, MODI pricing)."""
    supply = hs.mass.astype(np.float64).copy()
    demand = ht.mass.astype(np.float64).copy()
    # absorb the rounding difference so the problem is exactly balanced
    demand *= supply.sum() / demand.sum()
    cost = np.abs(hs.representative[:, None] - ht.representative[None, :])
    m, n = cost.shape
    flow = np.zeros((m, n))
    basis: set[tuple[int, int]] = set()
    s, d = supply.copy(), demand.copy()
    i = j = 0
    while True:
        x = min(s[i], d[j])
        flow[i, j] = x
        basis.add((i, j))
        s[i] -= x
        d[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and s[i] <= d[j]):
            i += 1
        else:
            j += 1
    for _ in range(max_pivots):
        u, v = _potentials(basis, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for cell in basis:
            reduced[cell] = 0.0
        enter = np.unravel_index(int(np.argmin(reduced)), reduced.shape)
        if reduced[enter] >= -tol:
            return float((flow * cost).sum())
        cycle = _cycle(basis, enter, m)
        minus = cycle[1::2]
        leave = min(minus, key=lambda c: (flow[c], c))
        theta = flow[leave]
        for k, c in enumerate(cycle):
            flow[c] += theta if k % 2 == 0 else -theta
        flow[leave] = 0.0
        basis.remove(leave)
        basis.add((int(enter[0]), int(enter[1])))
    raise RuntimeError("transportation simplex did not converge")


def _potentials(basis, cost, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    rows: dict[int, list[int]] = {}
    cols: dict[int, list[int]] = {}
    for i, j in basis:
        rows.setdefault(i, []).append(j)
        cols.setdefault(j, []).append(i)
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in rows.get(k, ()):
                if math.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols.get(k, ()):
                if math.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    return u, v


def _cycle(basis, enter, m) -> list[tuple[int, int]]:
    """Cells of the unique cycle through ``enter``, starting with it and
    alternating +/-."""
    # tree over row nodes 0..m-1 and column nodes m..m+n-1
    adj: dict[int, list[int]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append(m + j)
        adj.setdefault(m + j, []).append(i)
    start, goal = m + int(enter[1]), int(enter[0])
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt in adj.get(node, ()):
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    # path runs row(enter) -> ... -> col(enter); pair consecutive nodes into cells
    cells = [(int(enter[0]), int(enter[1]))]
    for a, b in zip(path[:-1], path[1:]):
        cells.append((a, b - m) if a < m else (b, a - m))
    return cells


def emd(hs: FeatureHistogram, ht: FeatureHistogram, method: str = "closed_form") -> float:
    if method == "closed_form":
        return emd_closed_form(hs, ht)
    if method == "simplex":
        return emd_simplex(hs, ht)
    raise ValidationError(f"unknown EMD method {method!r}")


@dataclass(frozen=True)
class SimilarityReport:
    name_a: str
    name_b: str
    emd: float
    similarity: float
    gamma: float
    bins: int

    def line(self) -> str:
        return f"{self.name_a} {self.name_b} emd={self.emd!r} ds={self.similarity!r} gamma={self.gamma!r} bins={self.bins}\n"


def domain_similarity(
    features_a, features_b, gamma: float = DEFAULT_GAMMA, bins: int = DEFAULT_BINS, method: str = "closed_form"
) -> tuple[float, float]:
    """``(exp(-gamma * EMD), EMD)`` between two flattened feature vectors."""
    if not gamma >= 0:
        raise ValidationError("gamma must be >= 0")
    ha, hb = joint_histograms(features_a, features_b, bins)
    distance = emd(ha, hb, method)
    return math.exp(-gamma * distance), distance
