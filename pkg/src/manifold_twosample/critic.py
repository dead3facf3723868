"""Constrained sparse ReLU critics and their projected-gradient training.

A critic with architecture ``(R, kappa, L, t, K, D)`` computes

    f(x) = clamp(W_L relu(... relu(W_1 x + b_1) ...) + b_L, -R, R)

with entrywise ``|W_i|, |b_i| <= kappa`` and at most ``K`` nonzero
parameters in total.  Parameters are flattened layer by layer, each layer as
``W_i`` in row-major order followed by ``b_i``; this order breaks ties in the
top-K projection.

Internally everything works on a batch of flat parameter vectors of shape
``(B, P)`` so that bootstrap replicates can be trained side by side.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConformanceError, EmptySampleError, SmoothnessError
from .seeding import derive_seed, make_rng


@dataclass(frozen=True)
class CriticArchitecture:
    output_bound: float
    weight_bound: float
    depth: int
    width: int
    sparsity: int
    input_dim: int

    def __post_init__(self):
        if self.output_bound <= 0 or self.weight_bound <= 0:
            raise ValueError("output and weight bounds must be positive")
        if self.depth < 1 or self.width < 1 or self.input_dim < 1:
            raise ValueError("depth, width and input dimension must be positive")
        if self.sparsity < self.depth:
            raise ValueError("sparsity budget must be at least the depth")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim] + [self.width] * (self.depth - 1) + [1]
        return [(sizes[i + 1], sizes[i]) for i in range(self.depth)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    def slices(self) -> list[tuple[slice, slice]]:
        out, pos = [], 0
        for o, i in self.layer_shapes:
            w = slice(pos, pos + o * i)
            pos += o * i
            b = slice(pos, pos + o)
            pos += o
            out.append((w, b))
        return out


@dataclass(frozen=True)
class CriticParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    mask: np.ndarray

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.reshape(-1))
            parts.append(b.reshape(-1))
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: CriticArchitecture, theta: np.ndarray) -> "CriticParams":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (arch.n_params,):
            raise ConformanceError(f"expected {arch.n_params} parameters, got shape {theta.shape}")
        ws, bs = [], []
        for (o, i), (sw, sb) in zip(arch.layer_shapes, arch.slices()):
            ws.append(theta[sw].reshape(o, i).copy())
            bs.append(theta[sb].copy())
        return cls(tuple(ws), tuple(bs), theta != 0)

    @classmethod
    def zeros(cls, arch: CriticArchitecture) -> "CriticParams":
        return cls.from_flat(arch, np.zeros(arch.n_params))

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.flatten()))

    def to_json(self) -> str:
        return json.dumps(
            {
                "shapes": [list(w.shape) for w in self.weights],
                "mask": [int(v) for v in self.mask],
                "values": [float(v) for v in self.flatten()],
            }
        )

    @classmethod
    def from_json(cls, arch: CriticArchitecture, text: str) -> "CriticParams":
        rec = json.loads(text)
        if [tuple(s) for s in rec["shapes"]] != arch.layer_shapes:
            raise ConformanceError("stored shapes do not match the architecture")
        params = cls.from_flat(arch, np.array(rec["values"], dtype=float))
        return cls(params.weights, params.biases, np.array(rec["mask"], dtype=bool))


def check_conformance(arch: CriticArchitecture, params: CriticParams) -> None:
    shapes = [w.shape for w in params.weights]
    bshapes = [b.shape for b in params.biases]
    if shapes != arch.layer_shapes or bshapes != [(o,) for o, _ in arch.layer_shapes]:
        raise ConformanceError(f"parameter shapes {shapes} do not match {arch.layer_shapes}")


def is_feasible(arch: CriticArchitecture, params: CriticParams) -> bool:
    theta = params.flatten()
    return bool(np.all(np.abs(theta) <= arch.weight_bound) and np.count_nonzero(theta) <= arch.sparsity)


# --------------------------------------------------------------------------
# Batched core


def _unpack(arch: CriticArchitecture, theta: np.ndarray):
    B = theta.shape[0]
    layers = []
    for (o, i), (sw, sb) in zip(arch.layer_shapes, arch.slices()):
        layers.append((theta[:, sw].reshape(B, o, i), theta[:, sb]))
    return layers


def _as_batch(points: np.ndarray, B: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 2:
        pts = np.broadcast_to(pts, (B,) + pts.shape)
    return pts


def _forward_batch(arch, layers, X):
    """Returns clamped outputs (B, n), raw outputs, and cached activations."""
    h = X
    acts = [h]
    pres = []
    for W, b in layers[:-1]:
        z = np.matmul(h, W.transpose(0, 2, 1)) + b[:, None, :]
        pres.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    W, b = layers[-1]
    raw = np.matmul(h, W.transpose(0, 2, 1))[:, :, 0] + b[:, None, 0]
    R = arch.output_bound
    return np.clip(raw, -R, R), raw, acts, pres


def _split_sum(delta, act, n):
    """Per-side sums of outer products: returns X-side minus Y-side."""
    if 2 * n == delta.shape[1]:
        B = delta.shape[0]
        d4 = delta.reshape(B, 2, n, -1)
        a4 = act.reshape(B, 2, n, -1)
        g = np.matmul(d4.transpose(0, 1, 3, 2), a4)
        gb = d4.sum(axis=2)
        return g[:, 0] - g[:, 1], gb[:, 0] - gb[:, 1]
    gx = np.matmul(delta[:, :n].transpose(0, 2, 1), act[:, :n])
    gy = np.matmul(delta[:, n:].transpose(0, 2, 1), act[:, n:])
    return gx - gy, delta[:, :n].sum(axis=1) - delta[:, n:].sum(axis=1)


def _stack(X, Y, B, dtype=float):
    Xb, Yb = _as_batch(X, B), _as_batch(Y, B)
    return np.concatenate([Xb, Yb], axis=1).astype(dtype, copy=False), Xb.shape[1]


def _value_and_gradient(arch, theta, XY, n):
    layers = _unpack(arch, theta)
    B, total = theta.shape[0], XY.shape[1]
    m = total - n
    out, raw, acts, pres = _forward_batch(arch, layers, XY)
    value = out[:, :n].mean(axis=1) - out[:, n:].mean(axis=1)
    R = arch.output_bound
    scale = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)]).astype(XY.dtype)
    delta = (((raw > -R) & (raw < R)) * scale)[:, :, None]
    grads = [None] * arch.depth
    for k in range(arch.depth - 1, -1, -1):
        W, _ = layers[k]
        gW, gb = _split_sum(delta, acts[k], n)
        grads[k] = (gW.reshape(B, -1), gb)
        if k > 0:
            delta = np.matmul(delta, W)
            delta *= pres[k - 1] > 0
    flat = np.concatenate([np.concatenate([gw, gb], axis=1) for gw, gb in grads], axis=1)
    return value, flat


def objective_and_gradient_batch(arch, theta, X, Y):
    """Objective mean f(X) - mean f(Y) and its gradient for each batch row.

    Both samples go through one stacked pass; the X and Y contributions are
    summed separately and subtracted last, so swapping the samples and
    negating the output layer reproduces the negated trajectory exactly.
    """
    XY, n = _stack(X, Y, theta.shape[0], theta.dtype)
    return _value_and_gradient(arch, theta, XY, n)


def objective_batch(arch, theta, X, Y) -> np.ndarray:
    XY, n = _stack(X, Y, theta.shape[0], theta.dtype)
    out = _forward_batch(arch, _unpack(arch, theta), XY)[0]
    return out[:, :n].mean(axis=1) - out[:, n:].mean(axis=1)


def project_batch(arch: CriticArchitecture, theta: np.ndarray) -> np.ndarray:
    """Clip to ``[-kappa, kappa]`` then keep the K largest magnitudes per row."""
    k = arch.weight_bound
    out = np.clip(theta, -k, k)
    if arch.sparsity < arch.n_params:
        order = np.argsort(-np.abs(out), axis=1, kind="stable")
        drop = order[:, arch.sparsity :]
        np.put_along_axis(out, drop, 0.0, axis=1)
    return out


# --------------------------------------------------------------------------
# Public single-network API


def forward(arch: CriticArchitecture, params: CriticParams, x: np.ndarray):
    """Critic value at one point (float) or at the rows of ``x`` (array)."""
    check_conformance(arch, params)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != arch.input_dim:
        raise ConformanceError(f"input has {pts.shape[1]} coordinates, expected {arch.input_dim}")
    theta = params.flatten()[None, :]
    out = _forward_batch(arch, _unpack(arch, theta), pts[None])[0][0]
    return float(out[0]) if single else out


def objective(arch, params: CriticParams, X, Y) -> float:
    return float(objective_batch(arch, params.flatten()[None, :], X, Y)[0])


def objective_gradient(arch, params: CriticParams, X, Y) -> tuple[float, np.ndarray]:
    value, grad = objective_and_gradient_batch(arch, params.flatten()[None, :], X, Y)
    return float(value[0]), grad[0]


def project_to_class(arch: CriticArchitecture, params: CriticParams) -> CriticParams:
    check_conformance(arch, params)
    return CriticParams.from_flat(arch, project_batch(arch, params.flatten()[None, :])[0])


def negate_params(params: CriticParams) -> CriticParams:
    ws = params.weights[:-1] + (-params.weights[-1],)
    bs = params.biases[:-1] + (-params.biases[-1],)
    return CriticParams(ws, bs, params.mask.copy())


def _ceil(x: float) -> int:
    # Guard against 1000 ** (1/3) landing just above an integer.
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else math.ceil(x)


def hyperparams_from_theory(
    n: int,
    D: int,
    d: int,
    s: int = 1,
    beta: float = 1.0,
    unit_constants: bool = True,
    *,
    coord_bound: float = 1.0,
    reach: float | None = 1.0,
    constants: Mapping[str, float] | None = None,
) -> CriticArchitecture:
    """Network class sized by the orders of the NN-IPM rates.

    With unit constants every ``O(.)`` has multiplier one; otherwise the
    multipliers ``kappa``, ``depth``, ``width``, ``sparsity`` are read from
    ``constants`` (missing entries default to one).
    """
    if n < 2 or not 1 <= d <= D:
        raise ValueError("need n >= 2 and 1 <= d <= D")
    if s < 1 or int(s) != s:
        raise SmoothnessError("s must be a positive integer")
    if not 0 < beta <= 1:
        raise SmoothnessError("beta must lie in (0, 1]")
    c = {} if unit_constants or constants is None else dict(constants)
    sb = s + beta
    rate = sb / (2 * sb + d)
    width_term = n ** (d / (2 * sb + d))
    tau2 = (reach or 0.0) ** 2
    kappa = c.get("kappa", 1.0) * max(1.0, coord_bound, math.sqrt(d), tau2)
    depth = max(1, _ceil(c.get("depth", 1.0) * rate * math.log(n * D)))
    width = _ceil(c.get("width", 1.0) * width_term) + D
    sparsity = _ceil(c.get("sparsity", 1.0) * (rate * (width_term + D) * math.log(n) + D * math.log(D)))
    return CriticArchitecture(1.0, kappa, depth, width, max(sparsity, depth), D)


def approximation_epsilon(n: int, d: int, s: int = 1, beta: float = 1.0) -> float:
    """Approximation error matched to the sizing rule: ``n^{-(s+beta)/(2(s+beta)+d)}``."""
    sb = s + beta
    return n ** (-sb / (2 * sb + d))


# --------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 40
    step_size: float = 0.1
    projection_period: int = 10
    seed: int = 0
    init_scale: float | None = None  # None: kappa / sqrt(width)
    decay: float = 1.0
    dtype: str = "float32"  # precision of the ascent loop; the statistic is float64
    init_candidates: int = 8  # random starts screened for a non-flat network
    normalize: bool = True  # scale each step so its largest entry is step_size

    def __post_init__(self):
        if self.steps < 0 or self.projection_period < 1:
            raise ValueError("steps must be >= 0 and projection_period >= 1")
        if self.steps % self.projection_period:
            raise ValueError("projection_period must divide steps")
        if self.step_size <= 0 or (self.init_scale is not None and self.init_scale <= 0):
            raise ValueError("step size and init scale must be positive")
        if self.init_candidates < 1:
            raise ValueError("need at least one initial candidate")


def initial_params(arch: CriticArchitecture, cfg: TrainConfig) -> CriticParams:
    """Sparse random start, chosen without looking at the data.

    A top-K projection of a dense uniform draw often leaves no live path from
    input to output, and ascent from such a flat network stalls.  Among
    ``cfg.init_candidates`` draws we keep the one whose output varies most on
    a fixed Gaussian probe set (first draw wins ties).
    """
    scale = cfg.init_scale if cfg.init_scale is not None else arch.weight_bound / math.sqrt(arch.width)
    C = cfg.init_candidates
    if C == 1:
        theta = make_rng(cfg.seed).uniform(-scale, scale, (1, arch.n_params))
        return CriticParams.from_flat(arch, project_batch(arch, theta)[0])
    theta = np.stack([make_rng(derive_seed(cfg.seed, j)).uniform(-scale, scale, arch.n_params) for j in range(C)])
    theta = project_batch(arch, theta)
    probe = make_rng(derive_seed(cfg.seed, C)).normal(size=(256, arch.input_dim))
    out = _forward_batch(arch, _unpack(arch, theta), _as_batch(probe, C))[0]
    best = int(np.argmax(out.std(axis=1)))
    return CriticParams.from_flat(arch, theta[best])


def train_critic_batch(
    arch: CriticArchitecture,
    X: np.ndarray,
    Y: np.ndarray,
    cfg: TrainConfig,
    init: CriticParams | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Train one critic per batch member; ``X`` is ``(B, n, D)`` or ``(n, D)``.

    Returns the final flat parameters ``(B, P)`` and statistics ``(B,)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[-2] == 0 or Y.shape[-2] == 0:
        raise EmptySampleError("critic training needs two nonempty samples")
    B = X.shape[0] if X.ndim == 3 else (Y.shape[0] if Y.ndim == 3 else 1)
    start = (init if init is not None else initial_params(arch, cfg)).flatten()
    dtype = np.dtype(cfg.dtype)
    theta = np.repeat(start[None, :], B, axis=0).astype(dtype)
    XY, n = _stack(X, Y, B, dtype)
    lr = cfg.step_size
    for step in range(1, cfg.steps + 1):
        _, grad = _value_and_gradient(arch, theta, XY, n)
        if cfg.normalize:
            peak = np.abs(grad).max(axis=1, keepdims=True)
            grad = np.divide(grad, peak, out=np.zeros_like(grad), where=peak > 0)
        theta += dtype.type(lr) * grad
        lr *= cfg.decay
        if step % cfg.projection_period == 0:
            theta = project_batch(arch, theta)
    theta = project_batch(arch, theta.astype(float))
    stats = objective_batch(arch, theta, X, Y)
    negative = stats <= 0
    theta[negative] = 0.0
    stats = np.where(negative, 0.0, stats)
    return theta, stats


def train_critic(
    arch: CriticArchitecture,
    sampleX,
    sampleY,
    cfg: TrainConfig,
    init: CriticParams | None = None,
) -> tuple[CriticParams, float]:
    """Projected gradient ascent on mean f(X) - mean f(Y) over the class."""
    X = getattr(sampleX, "points", sampleX)
    Y = getattr(sampleY, "points", sampleY)
    theta, stats = train_critic_batch(arch, X, Y, cfg, init)
    return CriticParams.from_flat(arch, theta[0]), float(stats[0])
