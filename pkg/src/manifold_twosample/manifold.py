"""Explicit atlases with smooth partitions of unity, and samplers on them.

Two reference manifolds are provided: the unit circle and the unit sphere
``S^k``, each zero-padded into ``R^D`` and rotated by a seeded random
orthogonal matrix.  All functions accept either one ambient vector or a
``(n, D)`` array of them.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, EmptyChartError, EmptySampleError
from .seeding import make_rng

TWO_PI = 2.0 * math.pi
OFF_MANIFOLD_TOL = 1e-9


@lru_cache(maxsize=64)
def _rotation(D: int, seed: int) -> np.ndarray:
    rng = make_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    # Sign fix makes the factorisation unique, hence the rotation reproducible.
    q = q * np.sign(np.diag(r))
    q.setflags(write=False)
    return q


@dataclass(frozen=True)
class ManifoldDescriptor:
    kind: str  # "circle" or "sphere"
    intrinsic_dim: int
    ambient_dim: int
    coord_bound: float = 1.0
    reach: float | None = 1.0
    rotation_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("circle", "sphere"):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if not 1 <= self.intrinsic_dim <= self.ambient_dim:
            raise DimensionError("need 1 <= d <= D")
        if self.kind == "circle" and self.intrinsic_dim != 1:
            raise DimensionError("circle has intrinsic dimension 1")
        if self.intrinsic_dim + 1 > self.ambient_dim:
            raise DimensionError(
                f"S^{self.intrinsic_dim} needs ambient dimension >= {self.intrinsic_dim + 1}"
            )

    @property
    def rotation(self) -> np.ndarray:
        return _rotation(self.ambient_dim, self.rotation_seed)

    def embed(self, local: np.ndarray) -> np.ndarray:
        """Map points of the unit sphere in ``R^(d+1)`` into ``R^D``."""
        local = np.atleast_2d(np.asarray(local, dtype=float))
        padded = np.zeros((local.shape[0], self.ambient_dim))
        padded[:, : local.shape[1]] = local
        return padded @ self.rotation.T

    def local(self, points: np.ndarray) -> np.ndarray:
        """Inverse rotation; returns all D rotated-back coordinates."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.ambient_dim:
            raise DimensionError(
                f"expected points in R^{self.ambient_dim}, got dimension {pts.shape[1]}"
            )
        return pts @ self.rotation

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the embedded unit sphere."""
        y = self.local(points)
        k = self.intrinsic_dim + 1
        radial = np.linalg.norm(y[:, :k], axis=1) - 1.0
        off = np.linalg.norm(y[:, k:], axis=1)
        return np.hypot(radial, off)

    def check_on_manifold(self, points: np.ndarray) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist = self.distance(pts)
        scale = np.maximum(np.linalg.norm(pts, axis=1), 1.0)
        bad = dist > OFF_MANIFOLD_TOL * scale
        if np.any(bad):
            worst = float(dist[bad].max())
            raise DomainError(f"point lies {worst:.3e} away from the manifold", distance=worst)


def sphere_descriptor(D: int, rotation_seed: int = 0) -> ManifoldDescriptor:
    """The full unit sphere of ``R^D``: intrinsic dimension ``D - 1``."""
    return ManifoldDescriptor("sphere", D - 1, D, 1.0, 1.0, rotation_seed)


@dataclass(frozen=True)
class Chart:
    index: int
    membership: Callable[[np.ndarray], np.ndarray]
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass(frozen=True)
class Atlas:
    charts: tuple[Chart, ...]
    bumps: Callable[[np.ndarray], np.ndarray]
    descriptor: ManifoldDescriptor

    def __len__(self) -> int:
        return len(self.charts)

    def unity_weights(self, points: np.ndarray) -> np.ndarray:
        """Partition-of-unity values, shape ``(n, |A|)``; rows sum to one."""
        b = self.bumps(self.descriptor.local(points))
        return b / b.sum(axis=1, keepdims=True)


def smooth_bump(t: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - t^2))`` on ``|t| < 1``, zero elsewhere (peak value 1)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ti * ti))
    return out


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Wrap to ``[-pi, pi)``."""
    return (np.asarray(theta) + math.pi) % TWO_PI - math.pi


# Chart windows on the circle, as (center, half-width) in angle.
CIRCLE_WINDOWS = ((0.0, 0.75 * math.pi), (math.pi, 0.75 * math.pi))


def build_circle_atlas(D: int, rotation_seed: int = 0) -> tuple[Atlas, ManifoldDescriptor]:
    """Two-chart atlas of the unit circle embedded in ``R^D``.

    Chart 0 covers angles in ``(-3pi/4, 3pi/4)`` with coordinate in
    ``(-pi, pi)``; chart 1 covers ``(pi/4, 7pi/4)`` with coordinate in
    ``(0, 2pi)``.
    """
    if D < 2:
        raise DimensionError(f"circle needs D >= 2, got {D}")
    desc = ManifoldDescriptor("circle", 1, D, 1.0, 1.0, rotation_seed)

    def angle(points):
        y = desc.local(points)
        return np.arctan2(y[:, 1], y[:, 0])

    def coord(alpha, points):
        theta = angle(points)
        if alpha == 0:
            return theta
        return np.mod(theta, TWO_PI)

    def make_chart(alpha):
        center, half = CIRCLE_WINDOWS[alpha]

        def membership(points):
            return np.abs(coord(alpha, points) - center) < half

        def forward(points):
            return coord(alpha, points)[:, None]

        def inverse(u):
            u = np.asarray(u, dtype=float).reshape(-1)
            return desc.embed(np.column_stack([np.cos(u), np.sin(u)]))

        return Chart(alpha, membership, forward, inverse)

    def bumps(y):
        theta = np.arctan2(y[:, 1], y[:, 0])
        cols = []
        for center, half in CIRCLE_WINDOWS:
            cols.append(smooth_bump(wrap_angle(theta - center) / half))
        return np.column_stack(cols)

    atlas = Atlas((make_chart(0), make_chart(1)), bumps, desc)
    return atlas, desc


def build_sphere_atlas(k: int, D: int, rotation_seed: int = 0) -> tuple[Atlas, ManifoldDescriptor]:
    """Hemisphere atlas of ``S^k`` in ``R^D``: ``2(k+1)`` charts.

    Chart ``2i`` is ``{y_i > 0}`` and chart ``2i+1`` is ``{y_i < 0}``; both
    project by dropping coordinate ``i``.  Bumps are ``exp(-1/u)`` with
    ``u = +-y_i``.
    """
    if k < 1 or D < k + 1:
        raise DimensionError(f"S^{k} cannot be embedded in R^{D}")
    desc = ManifoldDescriptor("sphere", k, D, 1.0, 1.0, rotation_seed)
    kp1 = k + 1

    def make_chart(i, sign):
        keep = [j for j in range(kp1) if j != i]

        def membership(points):
            return sign * desc.local(points)[:, i] > 0

        def forward(points):
            return desc.local(points)[:, keep]

        def inverse(u):
            u = np.atleast_2d(np.asarray(u, dtype=float))
            full = np.zeros((u.shape[0], kp1))
            full[:, keep] = u
            full[:, i] = sign * np.sqrt(np.clip(1.0 - np.sum(u * u, axis=1), 0.0, None))
            return desc.embed(full)

        return Chart(2 * i + (sign < 0), membership, forward, inverse)

    charts = tuple(make_chart(i, s) for i in range(kp1) for s in (1, -1))

    def bumps(y):
        u = np.repeat(y[:, :kp1], 2, axis=1) * np.tile([1.0, -1.0], kp1)
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out

    return Atlas(charts, bumps, desc), desc


def partition_weights(atlas: Atlas, x: np.ndarray) -> np.ndarray:
    """Partition-of-unity vector at one on-manifold point (or rows of points)."""
    pts = np.asarray(x, dtype=float)
    atlas.descriptor.check_on_manifold(pts)
    w = atlas.unity_weights(pts)
    return w[0] if pts.ndim == 1 else w


def assign_charts(atlas: Atlas, points: np.ndarray) -> np.ndarray:
    """Hard chart labels: argmax of unity weights, lowest index on ties."""
    return np.argmax(atlas.unity_weights(points), axis=1)


# --------------------------------------------------------------------------
# Distributions and samples


FAMILIES = ("uniform-circle", "von-mises-circle", "uniform-sphere", "bump-perturbed")
_FAMILY_PARAMS = {
    "uniform-circle": (),
    "von-mises-circle": ("kappa", "mu"),
    "uniform-sphere": (),
    "bump-perturbed": ("amplitude", "center", "width"),
}


@dataclass(frozen=True)
class DistributionSpec:
    family: str
    manifold: ManifoldDescriptor
    kappa: float = 0.0
    mu: float = 0.0
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        on_circle = self.family != "uniform-sphere"
        if on_circle and self.manifold.kind != "circle":
            raise ValueError(f"{self.family} lives on the circle")
        if not on_circle and self.manifold.kind != "sphere":
            raise ValueError("uniform-sphere needs a sphere descriptor")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.family == "bump-perturbed":
            if not abs(self.amplitude) < 1.0 / TWO_PI:
                raise ValueError("bump amplitude must be below the uniform density 1/(2 pi)")
            if not 0 < self.width <= math.pi:
                raise ValueError("bump width must lie in (0, pi]")

    def to_config(self) -> str:
        names = _FAMILY_PARAMS[self.family]
        if not names:
            return self.family
        args = ", ".join(f"{k}={getattr(self, k)!r}" for k in names)
        return f"{self.family}({args})"

    @classmethod
    def from_config(cls, text: str, manifold: ManifoldDescriptor) -> "DistributionSpec":
        m = re.fullmatch(r"\s*([a-z-]+)\s*(?:\((.*)\))?\s*", text)
        if not m:
            raise ValueError(f"cannot parse distribution {text!r}")
        family, argtext = m.group(1), m.group(2)
        if family not in FAMILIES:
            raise ValueError(f"unknown distribution family {family!r}")
        kwargs: dict[str, float] = {}
        for part in filter(None, (p.strip() for p in (argtext or "").split(","))):
            key, _, value = part.partition("=")
            key = key.strip()
            if key not in _FAMILY_PARAMS[family]:
                raise ValueError(f"{family} has no parameter {key!r}")
            kwargs[key] = float(value)
        return cls(family, manifold, **kwargs)


@dataclass(frozen=True)
class Sample:
    points: np.ndarray
    spec: DistributionSpec | None = None
    seed: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(0 if pts.size == 0 else 1, -1)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def _bump_angles(spec: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    base = 1.0 / TWO_PI
    ceiling = base + max(spec.amplitude, 0.0)
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 16)
        theta = rng.uniform(-math.pi, math.pi, m)
        dens = base + spec.amplitude * smooth_bump(wrap_angle(theta - spec.center) / spec.width)
        keep = rng.uniform(0.0, ceiling, m) < dens
        out = np.concatenate([out, theta[keep]])
    return out[:n]


def bump_density(spec: DistributionSpec, theta: np.ndarray) -> np.ndarray:
    """Normalised angular density of a bump-perturbed spec."""
    from scipy.integrate import quad

    mass, _ = quad(lambda u: float(smooth_bump(u)), -1.0, 1.0)
    z = 1.0 + spec.amplitude * spec.width * mass
    return (1.0 / TWO_PI + spec.amplitude * smooth_bump(wrap_angle(theta - spec.center) / spec.width)) / z


def sample_distribution(spec: DistributionSpec, n: int, seed: int) -> Sample:
    if n < 0:
        raise ValueError("n must be nonnegative")
    desc = spec.manifold
    if n == 0:
        return Sample(np.zeros((0, desc.ambient_dim)), spec, seed)
    rng = make_rng(seed)
    family = spec.family
    if family == "von-mises-circle" and spec.kappa == 0.0:
        family = "uniform-circle"

    if family == "uniform-sphere":
        g = rng.standard_normal((n, desc.intrinsic_dim + 1))
        local = g / np.linalg.norm(g, axis=1, keepdims=True)
    else:
        if family == "uniform-circle":
            theta = rng.uniform(-math.pi, math.pi, n)
        elif family == "von-mises-circle":
            theta = rng.vonmises(spec.mu, spec.kappa, n)
        else:
            theta = _bump_angles(spec, n, rng)
        local = np.column_stack([np.cos(theta), np.sin(theta)])
    return Sample(desc.embed(local), spec, seed)


# --------------------------------------------------------------------------
# Empirical chart masses and pushforwards


@dataclass(frozen=True)
class DiscreteMass:
    """Probability mass vector with exact rational entries."""

    masses: tuple[Fraction, ...]

    def __post_init__(self):
        ms = tuple(Fraction(m) for m in self.masses)
        if any(m < 0 for m in ms):
            raise ValueError("masses must be nonnegative")
        if sum(ms) != 1:
            raise ValueError(f"masses sum to {sum(ms)}, not 1")
        object.__setattr__(self, "masses", ms)

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "DiscreteMass":
        total = sum(int(c) for c in counts)
        return cls(tuple(Fraction(int(c), total) for c in counts))

    def __len__(self) -> int:
        return len(self.masses)

    def as_array(self) -> np.ndarray:
        return np.array([float(m) for m in self.masses])


def _require_points(sample: Sample | np.ndarray) -> np.ndarray:
    pts = sample.points if isinstance(sample, Sample) else np.atleast_2d(np.asarray(sample, float))
    if pts.shape[0] == 0:
        raise EmptySampleError("sample is empty")
    return pts


def chart_masses(atlas: Atlas, sample: Sample | np.ndarray) -> DiscreteMass:
    pts = _require_points(sample)
    labels = assign_charts(atlas, pts)
    return DiscreteMass.from_counts(np.bincount(labels, minlength=len(atlas)).tolist())


def push_to_chart(atlas: Atlas, alpha: int, sample: Sample | np.ndarray):
    """Uniformly weighted chart coordinates of the points assigned to ``alpha``."""
    from .transport import WeightedPointCloud

    pts = _require_points(sample)
    chosen = pts[assign_charts(atlas, pts) == alpha]
    if chosen.shape[0] == 0:
        raise EmptyChartError(f"no sample point is assigned to chart {alpha}")
    return WeightedPointCloud.uniform(atlas.charts[alpha].forward(chosen))


def angle_coordinate(desc: ManifoldDescriptor) -> Callable[[np.ndarray], np.ndarray]:
    """Canonical angle in ``[-pi, pi]`` for circle samples (covers all but one point)."""
    if desc.kind != "circle":
        raise DimensionError("angle coordinate is only defined on the circle")

    def coord(points):
        y = desc.local(points)
        return np.arctan2(y[:, 1], y[:, 0])

    return coord
