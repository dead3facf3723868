"""Exact discrete divergences.

* :func:`l2_divergence` between probability mass vectors.
* :func:`wasserstein1` between weighted point clouds with Euclidean ground
  cost.  Weights are exact rationals; both clouds are rescaled onto a common
  integer grid and the transportation problem is solved exactly, either by a
  monotone sweep (one-dimensional clouds) or by successive shortest paths on
  the bipartite flow network (any dimension).
* :func:`assignment_oracle`, an independent Hungarian-algorithm check.
* :func:`projected_T`, the maximum over charts of the Wasserstein distance
  between chart pushforwards of the conditional empirical measures.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Sequence

import numpy as np

from .errors import DimensionError, EmptyChartError, EmptyCloudError, EmptySampleError, OracleScopeError
from .manifold import Atlas, DiscreteMass, Sample, assign_charts

MAX_POINTS_PER_CHART = 10_000


def l2_divergence(p: DiscreteMass, q: DiscreteMass) -> float:
    if len(p) != len(q):
        raise DimensionError(f"mass vectors have lengths {len(p)} and {len(q)}")
    # Exact rational sum of squares, one rounding at the square root.
    sq = sum((a - b) ** 2 for a, b in zip(p.masses, q.masses))
    return math.sqrt(sq)


@dataclass(frozen=True)
class WeightedPointCloud:
    """Points with rational weights ``masses[i] / total``."""

    points: np.ndarray
    masses: np.ndarray
    total: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        masses = np.array(self.masses, dtype=np.int64, copy=True)
        if pts.shape[0] != masses.shape[0]:
            raise ValueError("points and masses have different lengths")
        if np.any(masses <= 0):
            raise ValueError("weights must be positive")
        if int(masses.sum()) != int(self.total):
            raise ValueError("weights must sum to one")
        pts.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "total", int(self.total))

    @classmethod
    def uniform(cls, points) -> "WeightedPointCloud":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(pts, np.ones(pts.shape[0], dtype=np.int64), pts.shape[0])

    @classmethod
    def from_weights(cls, points, weights: Sequence) -> "WeightedPointCloud":
        """Weights given as Fractions, ints or decimal strings."""
        fr = [Fraction(w) if not isinstance(w, float) else Fraction(str(w)) for w in weights]
        denom = math.lcm(*(f.denominator for f in fr))
        return cls(points, [int(f * denom) for f in fr], denom)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.masses / self.total

    def deduplicated(self) -> tuple["WeightedPointCloud", np.ndarray]:
        """Merge coincident points; returns the merged cloud and group labels."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        merged = np.bincount(inverse, weights=self.masses, minlength=len(uniq)).astype(np.int64)
        return WeightedPointCloud(uniq, merged, self.total), inverse


@dataclass(frozen=True)
class TransportPlan:
    flows: tuple[tuple[int, int, float], ...]
    total_cost: float
    pair_costs: tuple[float, ...] = ()

    def to_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_idx", "sink_idx", "mass", "cost"])
        for (i, j, mass), c in zip(self.flows, self.pair_costs):
            writer.writerow([i, j, f"{mass:.17g}", f"{c:.17g}"])

    def marginals(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = np.zeros(n), np.zeros(m)
        for i, j, mass in self.flows:
            rows[i] += mass
            cols[j] += mass
        return rows, cols


def _common_grid(X: WeightedPointCloud, Y: WeightedPointCloud) -> tuple[np.ndarray, np.ndarray, int]:
    scale = math.lcm(X.total, Y.total)
    a = X.masses * (scale // X.total)
    b = Y.masses * (scale // Y.total)
    return a, b, scale


def _check_pair(X: WeightedPointCloud, Y: WeightedPointCloud) -> None:
    if len(X) == 0 or len(Y) == 0:
        raise EmptyCloudError("wasserstein1 needs two nonempty clouds")
    if X.dim != Y.dim:
        raise DimensionError(f"clouds live in R^{X.dim} and R^{Y.dim}")


def line_cost(x: np.ndarray, a: np.ndarray, y: np.ndarray, b: np.ndarray) -> float:
    """W1 between integer-mass clouds on the line with equal total mass S.

    Returns the cost divided by S: the integral of |F - G| over the line,
    computed with exact integer CDFs.
    """
    pts = np.concatenate([x, y])
    signed = np.concatenate([a, -b])
    order = np.argsort(pts, kind="stable")
    cdf_gap = np.cumsum(signed[order])[:-1]
    gaps = np.diff(pts[order])
    return float(np.abs(cdf_gap) @ gaps) / float(a.sum())


def _monotone_plan(x, a, y, b):
    """North-west corner rule on sorted supports: an optimal plan on the line."""
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    flows = []
    ra, rb = int(a[ix[0]]), int(b[iy[0]])
    i = j = 0
    while True:
        f = min(ra, rb)
        flows.append((int(ix[i]), int(iy[j]), f))
        ra -= f
        rb -= f
        if ra == 0:
            i += 1
            if i == len(ix):
                break
            ra = int(a[ix[i]])
        if rb == 0:
            j += 1
            if j == len(iy):
                break
            rb = int(b[iy[j]])
    return flows


def _ssp_flow(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """Min-cost transportation by successive shortest paths.

    ``supply`` and ``demand`` are integer vectors with equal sums; returns the
    integer flow matrix.  Dijkstra runs on reduced costs
    ``cost[i, j] + pu[i] - pv[j] >= 0`` over the residual bipartite graph.
    """
    n, m = cost.shape
    flow = np.zeros((n, m), dtype=np.int64)
    sup = supply.astype(np.int64).copy()
    dem = demand.astype(np.int64).copy()
    pu = np.zeros(n)
    pv = cost.min(axis=0).astype(float)
    inf = math.inf
    while sup.sum() > 0:
        du = np.where(sup > 0, 0.0, inf)
        dv = np.full(m, inf)
        pred_u = np.full(n, -1)  # sink index that reached source i (backward edge)
        pred_v = np.full(m, -1)  # source index that reached sink j
        done_u = np.zeros(n, dtype=bool)
        done_v = np.zeros(m, dtype=bool)
        target = -1
        while True:
            cu = np.where(done_u, inf, du)
            cv = np.where(done_v, inf, dv)
            iu, iv = int(np.argmin(cu)), int(np.argmin(cv))
            if cu[iu] <= cv[iv]:
                if cu[iu] == inf:
                    raise RuntimeError("residual network disconnected")
                done_u[iu] = True
                red = np.maximum(cost[iu] + pu[iu] - pv, 0.0)
                cand = du[iu] + red
                better = (cand < dv) & ~done_v
                dv[better] = cand[better]
                pred_v[better] = iu
            else:
                if cv[iv] == inf:
                    raise RuntimeError("residual network disconnected")
                done_v[iv] = True
                if dem[iv] > 0:
                    target = iv
                    break
                back = flow[:, iv] > 0
                red = np.maximum(-cost[:, iv] + pv[iv] - pu, 0.0)
                cand = dv[iv] + red
                better = back & (cand < du) & ~done_u
                du[better] = cand[better]
                pred_u[better] = iv
        dt = dv[target]
        pu += np.minimum(np.where(done_u, du, dt), dt)
        pv += np.minimum(np.where(done_v, dv, dt), dt)

        # Walk back to find the bottleneck, then augment.
        path = []
        j = target
        while True:
            i = int(pred_v[j])
            path.append((i, j))
            j = int(pred_u[i])
            if j < 0:
                break
        origin = path[-1][0]
        amount = min(int(sup[origin]), int(dem[target]))
        # Every source on the path except the origin was entered through a
        # backward (flow-cancelling) edge from sink pred_u[i].
        for i, _ in path[:-1]:
            amount = min(amount, int(flow[i, int(pred_u[i])]))
        for i, j in path:
            flow[i, j] += amount
        for i, _ in path[:-1]:
            flow[i, int(pred_u[i])] -= amount
        sup[origin] -= amount
        dem[target] -= amount
    return flow


def _split_flows(pairs, groups_x, masses_x, groups_y, masses_y):
    """Distribute flows between merged points back onto original points."""

    def split(pairs, key, groups, masses):
        by_group: dict[int, list] = {}
        for p in pairs:
            by_group.setdefault(p[key], []).append(p)
        out = []
        for g, items in by_group.items():
            members = list(np.flatnonzero(groups == g))
            left = [int(masses[k]) for k in members]
            k = 0
            for p in items:
                amount = p[2]
                while amount > 0:
                    take = min(amount, left[k])
                    q = list(p)
                    q[key] = int(members[k])
                    q[2] = take
                    out.append(tuple(q))
                    amount -= take
                    left[k] -= take
                    if left[k] == 0:
                        k += 1
        return out

    pairs = split(pairs, 0, groups_x, masses_x)
    return split(pairs, 1, groups_y, masses_y)


def wasserstein1(
    X: WeightedPointCloud, Y: WeightedPointCloud, method: str = "auto"
) -> tuple[float, TransportPlan]:
    """Exact W1 and an optimal plan.

    ``method`` is ``"auto"`` (sweep in one dimension, flow otherwise),
    ``"line"`` or ``"flow"``.
    """
    _check_pair(X, Y)
    if max(len(X), len(Y)) > MAX_POINTS_PER_CHART:
        raise ValueError(f"at most {MAX_POINTS_PER_CHART} points per cloud are supported")
    if method == "auto":
        method = "line" if X.dim == 1 else "flow"
    a, b, scale = _common_grid(X, Y)

    if method == "line":
        if X.dim != 1:
            raise DimensionError("the line solver needs one-dimensional clouds")
        x, y = X.points[:, 0], Y.points[:, 0]
        pairs = _monotone_plan(x, a, y, b)
    elif method == "flow":
        Xm, gx = X.deduplicated()
        Ym, gy = Y.deduplicated()
        am, bm, _ = _common_grid(Xm, Ym)
        cost = np.linalg.norm(Xm.points[:, None, :] - Ym.points[None, :, :], axis=2)
        flow = _ssp_flow(cost, am, bm)
        merged = [(int(i), int(j), int(flow[i, j])) for i, j in zip(*np.nonzero(flow))]
        pairs = _split_flows(merged, gx, a, gy, b)
    else:
        raise ValueError(f"unknown method {method!r}")

    pairs.sort()
    pair_costs = tuple(float(np.linalg.norm(X.points[i] - Y.points[j])) for i, j, _ in pairs)
    total = math.fsum(f * c for (_, _, f), c in zip(pairs, pair_costs)) / scale
    plan = TransportPlan(tuple((i, j, f / scale) for i, j, f in pairs), total, pair_costs)
    return total, plan


def wasserstein1_cost(X: WeightedPointCloud, Y: WeightedPointCloud) -> float:
    """W1 without building a plan (fast path for one-dimensional clouds)."""
    _check_pair(X, Y)
    if X.dim == 1:
        a, b, _ = _common_grid(X, Y)
        return line_cost(X.points[:, 0], a, Y.points[:, 0], b)
    return wasserstein1(X, Y)[0]


# --------------------------------------------------------------------------
# Independent oracle


def hungarian(cost: np.ndarray) -> tuple[float, list[int]]:
    """Minimum-cost perfect matching on a square matrix (Kuhn-Munkres).

    Returns the optimal cost and ``match[row] = column``.
    """
    c = np.asarray(cost, dtype=float)
    n = c.shape[0]
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[col] = row matched to col (1-based, 0 = free)
    way = [0] * (n + 1)
    for row in range(1, n + 1):
        p[0] = row
        col0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[col0] = True
            r = p[col0]
            delta, col1 = math.inf, 0
            for col in range(1, n + 1):
                if not used[col]:
                    cur = c[r - 1, col - 1] - u[r] - v[col]
                    if cur < minv[col]:
                        minv[col] = cur
                        way[col] = col0
                    if minv[col] < delta:
                        delta, col1 = minv[col], col
            for col in range(n + 1):
                if used[col]:
                    u[p[col]] += delta
                    v[col] -= delta
                else:
                    minv[col] -= delta
            col0 = col1
            if p[col0] == 0:
                break
        while col0:
            col1 = way[col0]
            p[col0] = p[col1]
            col0 = col1
    match = [0] * n
    for col in range(1, n + 1):
        match[p[col] - 1] = col - 1
    return math.fsum(c[r, match[r]] for r in range(n)), match


def exhaustive_matching_cost(cost: np.ndarray) -> float:
    n = cost.shape[0]
    rows = np.arange(n)
    return min(math.fsum(cost[rows, list(perm)]) for perm in itertools.permutations(range(n)))


def assignment_oracle(X: WeightedPointCloud | np.ndarray, Y: WeightedPointCloud | np.ndarray) -> float:
    """``(1/n)`` times the minimum-cost perfect matching, for ``n <= 12``."""
    xs = X.points if isinstance(X, WeightedPointCloud) else np.asarray(X, dtype=float)
    ys = Y.points if isinstance(Y, WeightedPointCloud) else np.asarray(Y, dtype=float)
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    for cloud in (X, Y):
        if isinstance(cloud, WeightedPointCloud) and np.any(cloud.masses != cloud.masses[0]):
            raise OracleScopeError("oracle needs uniform weights")
    if xs.shape[0] != ys.shape[0]:
        raise OracleScopeError("oracle needs equal-size clouds")
    n = xs.shape[0]
    if n == 0 or n > 12:
        raise OracleScopeError(f"oracle handles 1..12 points, got {n}")
    cost = np.linalg.norm(xs[:, None, :] - ys[None, :, :], axis=2)
    return hungarian(cost)[0] / n


# --------------------------------------------------------------------------
# Projected Wasserstein statistic


@dataclass(frozen=True)
class ChartTerm:
    chart: int
    count_x: int
    count_y: int
    distance: float | None  # None when skipped


def chart_clouds(atlas: Atlas, points: np.ndarray) -> list[np.ndarray]:
    """Chart coordinates of the points assigned to each chart."""
    labels = assign_charts(atlas, points)
    return [atlas.charts[a].forward(points[labels == a]) for a in range(len(atlas))]


def projected_T_from_coords(
    coords_x: Sequence[np.ndarray], coords_y: Sequence[np.ndarray], skip_empty: bool = True
) -> tuple[float, list[ChartTerm]]:
    terms = []
    best = 0.0
    for alpha, (cx, cy) in enumerate(zip(coords_x, coords_y)):
        nx, ny = cx.shape[0], cy.shape[0]
        if nx == 0 or ny == 0:
            if not skip_empty:
                raise EmptyChartError(f"chart {alpha} has {nx} and {ny} assigned points")
            terms.append(ChartTerm(alpha, nx, ny, None))
            continue
        if cx.shape[1] == 1:
            dist = line_cost(cx[:, 0], np.full(nx, ny, dtype=np.int64), cy[:, 0], np.full(ny, nx, dtype=np.int64))
        else:
            dist = wasserstein1(WeightedPointCloud.uniform(cx), WeightedPointCloud.uniform(cy))[0]
        terms.append(ChartTerm(alpha, nx, ny, dist))
        best = max(best, dist)
    if all(t.distance is None for t in terms):
        raise EmptyChartError("no chart has points from both samples")
    return best, terms


def projected_T(
    atlas: Atlas, sampleX: Sample | np.ndarray, sampleY: Sample | np.ndarray, skip_empty: bool = True
) -> tuple[float, list[ChartTerm]]:
    xs = sampleX.points if isinstance(sampleX, Sample) else np.atleast_2d(sampleX)
    ys = sampleY.points if isinstance(sampleY, Sample) else np.atleast_2d(sampleY)
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise EmptySampleError("projected_T needs two nonempty samples")
    return projected_T_from_coords(chart_clouds(atlas, xs), chart_clouds(atlas, ys), skip_empty)
