"""Brute-force Hölder IPM on a one-dimensional chart.

The family consists of piecewise-linear functions on ``m + 1`` equispaced
knots whose knot values are multiples of a quantum ``q``.  For ``s = 1`` the
constraints are

* ``|g_k| <= value_bound``
* ``|g_{k+1} - g_k| / h <= derivative_bound``
* ``|slope_{k+1} - slope_k| <= h ** beta`` for adjacent segments.

Because the expectation of a piecewise-linear function under a point mass is
linear in the knot values (hat-function interpolation weights), the maximum
of ``E_X g - E_Y g`` over the quantized family is found exactly by dynamic
programming over states ``(knot value, incoming increment)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DomainError, OracleScopeError

MAX_KNOTS = 40
MAX_WORK = 10**8
_TOL = 1e-9


@dataclass(frozen=True)
class GridFunctionFamily:
    lo: float = 0.0
    hi: float = 1.0
    knots: int = 32  # number of segments m; there are m + 1 knot values
    s: int = 1
    beta: float = 1.0
    quantum: float = 1.0 / 64
    value_bound: float = 1.0
    derivative_bound: float = 1.0

    def __post_init__(self):
        if self.s != 1:
            raise OracleScopeError("the grid oracle implements s = 1 only")
        if not 0 < self.beta <= 1:
            raise OracleScopeError("beta must lie in (0, 1]")
        if not self.hi > self.lo:
            raise ValueError("empty knot interval")
        if not 1 <= self.knots <= MAX_KNOTS:
            raise BudgetError(f"knot count must lie in 1..{MAX_KNOTS}")
        if self.quantum <= 0:
            raise ValueError("quantum must be positive")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.knots

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.knots + 1)

    def levels(self) -> tuple[int, int, int]:
        """Half-ranges in quanta: values, increments, increment changes."""
        h, q = self.spacing, self.quantum
        nv = math.floor(self.value_bound / q + 1e-9)
        ni = math.floor(self.derivative_bound * h / q + 1e-9)
        nj = math.floor(h ** (1 + self.beta) / q + 1e-9)
        return nv, min(ni, 2 * nv), nj

    def work(self) -> int:
        nv, ni, nj = self.levels()
        return self.knots * (2 * nv + 1) * (2 * ni + 1) * (2 * nj + 1)


@dataclass(frozen=True)
class OracleValue:
    value: float
    coefficients: np.ndarray


def hat_weights(family: GridFunctionFamily, u: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Knot weights with ``sum_k g_k * out[..., k] = E g(u)`` for piecewise-linear g.

    ``u`` has shape ``(..., n)``; ``w`` are point weights (default uniform).
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < family.lo - _TOL) or np.any(u > family.hi + _TOL):
        raise DomainError(f"points fall outside [{family.lo}, {family.hi}]")
    if w is None:
        w = np.full(u.shape, 1.0 / u.shape[-1])
    # Accumulate in sorted order so equal multisets give bit-identical weights.
    order = np.argsort(u, axis=-1, kind="stable")
    u = np.take_along_axis(u, order, axis=-1)
    w = np.take_along_axis(np.broadcast_to(w, order.shape), order, axis=-1)
    pos =np.clip((u - family.lo) / family.spacing, 0.0, family.knots)
    left = np.minimum(np.floor(pos).astype(np.int64), family.knots - 1)
    frac = pos - left
    lead = u.shape[:-1]
    flat_rows = int(np.prod(lead)) if lead else 1
    out = np.zeros((flat_rows, family.knots + 1))
    left2 = left.reshape(flat_rows, -1)
    rows = np.repeat(np.arange(flat_rows), left2.shape[1])
    wt = np.broadcast_to(w, u.shape).reshape(flat_rows, -1)
    fr = frac.reshape(flat_rows, -1)
    np.add.at(out, (rows, left2.ravel()), (wt * (1.0 - fr)).ravel())
    np.add.at(out, (rows, left2.ravel() + 1), (wt * fr).ravel())
    return out.reshape(lead + (family.knots + 1,))


def _solve_dp(family: GridFunctionFamily, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximise ``sum_k c[b, k] * g_k`` over the quantized family for each row b.

    Returns the optimal values ``(B,)`` and knot values in quanta ``(B, m+1)``.
    """
    nv, ni, nj = family.levels()
    B, K = c.shape
    vals = np.arange(-nv, nv + 1)
    incs = np.arange(-ni, ni + 1)
    V, I = vals.size, incs.size
    q = family.quantum
    neg = -np.inf

    # S[b, v, i]: best score of knots 0..k with g_k = vals[v], last increment incs[i].
    # At knot 0 there is no increment yet: every increment slot is allowed.
    base = c[:, 0][:, None] * (vals * q)[None, :]
    S = np.repeat(base[:, :, None], I, axis=2)
    prev_index = (np.arange(V)[:, None] - incs[None, :])  # v' - i' as row index
    valid = (prev_index >= 0) & (prev_index < V)
    gather_v = np.clip(prev_index, 0, V - 1)
    back_i = np.zeros((K, B, V, I), dtype=np.int16)

    for k in range(1, K):
        # M[b, v, i'] = max over |i - i'| <= nj (nj = inf-like at k = 1) of S[b, v, i].
        if k == 1:
            M = S.max(axis=2, keepdims=True).repeat(I, axis=2)
            arg = np.zeros((B, V, I), dtype=np.int16)
            arg[:] = np.argmax(S, axis=2)[:, :, None]
        else:
            M = np.full_like(S, neg)
            arg = np.zeros((B, V, I), dtype=np.int16)
            for delta in range(-nj, nj + 1):
                lo, hi = max(0, -delta), min(I, I - delta)
                cand = S[:, :, lo + delta : hi + delta]
                better = cand > M[:, :, lo:hi]
                M[:, :, lo:hi] = np.where(better, cand, M[:, :, lo:hi])
                idx = np.arange(lo, hi) + delta
                arg[:, :, lo:hi] = np.where(better, idx[None, None, :], arg[:, :, lo:hi])
        # New state (v', i') comes from value v' - i' with increment chosen above.
        newS = M[:, gather_v, np.arange(I)[None, :]]
        newS = np.where(valid[None], newS, neg)
        back_i[k] = arg[:, gather_v, np.arange(I)[None, :]]
        S = newS + c[:, k][:, None, None] * (vals * q)[None, :, None]

    flat = S.reshape(B, -1)
    best = np.argmax(flat, axis=1)
    value = flat[np.arange(B), best]
    v_idx, i_idx = np.unravel_index(best, (V, I))
    path = np.zeros((B, K), dtype=np.int64)
    path[:, K - 1] = vals[v_idx]
    rows = np.arange(B)
    for k in range(K - 1, 0, -1):
        prev_i = back_i[k, rows, v_idx, i_idx]
        v_idx = v_idx - incs[i_idx]
        i_idx = prev_i.astype(np.int64)
        path[:, k - 1] = vals[v_idx]
    return value, path


def _dp_values(family: GridFunctionFamily, c: np.ndarray) -> np.ndarray:
    """Optimal values only, for many rows at once (no backtracking tables).

    The transition ``(v, i) -> (v + i', i')`` is a shear of the state array,
    realised as a strided view over a ``-inf``-padded buffer.
    """
    nv, ni, nj = family.levels()
    B, K = c.shape
    vq = np.arange(-nv, nv + 1) * family.quantum
    V, I = vq.size, 2 * ni + 1
    S = np.repeat((c[:, 0][:, None] * vq)[:, :, None], I, axis=2)
    window = np.full((B, V, I + 2 * nj), -np.inf)
    sheared = np.full((B, V + 2 * ni, I), -np.inf)
    sB, sV, sI = sheared.strides
    for k in range(1, K):
        window[:, :, nj : nj + I] = S
        M = window[:, :, 0:I].copy()
        for off in range(1, 2 * nj + 1):
            np.maximum(M, window[:, :, off : off + I], out=M)
        sheared[:, ni : ni + V, :] = M
        # view[b, v', j] = sheared[b, v' + 2 ni - j, j]  (previous value v' - incs[j])
        view = np.lib.stride_tricks.as_strided(
            sheared[:, 2 * ni :, :], shape=(B, V, I), strides=(sB, sV, sI - sV), writeable=False
        )
        S = view + (c[:, k][:, None] * vq)[:, :, None]
    return S.reshape(B, -1).max(axis=1)


def _coords(cloud) -> tuple[np.ndarray, np.ndarray | None]:
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 2:
        if pts.shape[1] != 1:
            raise OracleScopeError("the grid oracle needs one-dimensional chart coordinates")
        pts = pts[:, 0]
    w = getattr(cloud, "weights", None)
    return pts, w


def oracle_ipm(family: GridFunctionFamily, X, Y) -> OracleValue:
    """Exact max of ``E_X g - E_Y g`` over the quantized grid family.

    ``X`` and ``Y`` are one-dimensional coordinates (arrays, or weighted
    clouds with a ``weights`` attribute).
    """
    if family.work() > MAX_WORK:
        raise BudgetError(f"search needs {family.work()} DP updates, budget is {MAX_WORK}")
    xs, wx = _coords(X)
    ys, wy = _coords(Y)
    c = hat_weights(family, xs, wx) - hat_weights(family, ys, wy)
    value, path = _solve_dp(family, c[None, :])
    coeffs = path[0] * family.quantum
    # Re-evaluate the objective at the argmax so the reported value is exact for it.
    return OracleValue(max(float(c @ coeffs), 0.0), coeffs)


def oracle_ipm_batch(family: GridFunctionFamily, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Oracle values for stacked uniform samples ``U (B, n)`` and ``V (B, m)``."""
    if family.work() > MAX_WORK:
        raise BudgetError(f"search needs {family.work()} DP updates, budget is {MAX_WORK}")
    c = hat_weights(family, U) - hat_weights(family, V)
    return np.maximum(_dp_values(family, c), 0.0)


def verify_holder_membership(family: GridFunctionFamily, coefficients) -> tuple[bool, list[str]]:
    g = np.asarray(coefficients, dtype=float)
    if g.shape != (family.knots + 1,):
        raise ValueError(f"expected {family.knots + 1} knot values, got {g.shape}")
    h = family.spacing
    report = []
    for k in np.flatnonzero(np.abs(g) > family.value_bound + _TOL):
        report.append(f"|g[{k}]| = {abs(g[k]):.6g} exceeds {family.value_bound}")
    slopes = np.diff(g) / h
    for k in np.flatnonzero(np.abs(slopes) > family.derivative_bound + _TOL):
        report.append(f"slope on segment {k} is {slopes[k]:.6g}")
    jumps = np.abs(np.diff(slopes))
    limit = h**family.beta
    for k in np.flatnonzero(jumps > limit + _TOL):
        report.append(f"slope change at knot {k + 1} is {jumps[k]:.6g} > {limit:.6g}")
    return not report, report
