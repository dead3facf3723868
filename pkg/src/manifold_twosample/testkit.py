"""Test procedures: the two-step atlas test, the Hölder IPM test and the NN IPM test.

Each test returns a :class:`TestReport`.  Thresholds come from a
:class:`ThresholdSpec`, which is one of

* ``analytic``: closed-form concentration thresholds with caller constants,
* ``bootstrap``: the pooled-resample quantile (the recommended default),
* ``fixed``: a user-supplied number (used by the harness for sanity runs).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np

from .critic import CriticArchitecture, CriticParams, TrainConfig, hyperparams_from_theory, train_critic, train_critic_batch
from .errors import EmptyChartError, LevelError, OracleScopeError, SizeError
from .holder import GridFunctionFamily, oracle_ipm, oracle_ipm_batch
from .manifold import Atlas, DiscreteMass, Sample, assign_charts
from .seeding import derive_seed, make_rng
from .transport import l2_divergence, projected_T_from_coords

MIN_BOOTSTRAP = 50


@dataclass(frozen=True)
class TestLevel:
    eta: float

    def __post_init__(self):
        if not 0 < self.eta < 0.5:
            raise LevelError(f"level must lie in (0, 1/2), got {self.eta}")


def _eta(level) -> float:
    return (level if isinstance(level, TestLevel) else TestLevel(float(level))).eta


@dataclass(frozen=True)
class ThresholdSpec:
    mode: str = "bootstrap"
    constants: Mapping[str, float] = field(default_factory=dict)
    n_boot: int = 200
    seed: int = 0
    value: float | None = None  # fixed mode only

    def __post_init__(self):
        if self.mode not in ("analytic", "bootstrap", "fixed"):
            raise ValueError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "bootstrap" and self.n_boot < MIN_BOOTSTRAP:
            raise ValueError(f"bootstrap needs at least {MIN_BOOTSTRAP} replicates")
        if self.mode == "fixed" and (self.value is None or math.isnan(self.value)):
            raise ValueError("fixed mode needs a threshold value")

    def constant(self, name: str) -> float:
        return float(self.constants.get(name, 1.0))


# A pytest collection guard: the class names start with "Test".
TestLevel.__test__ = False  # type: ignore[attr-defined]


@dataclass
class TestReport:
    test: str
    decision: str  # "reject" | "not-reject"
    statistics: dict
    thresholds: dict
    steps: dict  # per-step decisions, "skipped" when not run
    eta: float
    n_x: int
    n_y: int
    mode: str
    seed: int | None = None
    wall_time: float = 0.0
    degenerate: bool = False

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"

    def primary(self) -> tuple[float, float]:
        """Headline (statistic, threshold); for the two-step test this is Step II."""
        key = {"two-step": "T", "holder": "holder", "nn": "nn"}[self.test]
        stat = self.statistics[key]
        return (math.nan if stat is None else stat), self.thresholds[key]

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "decision": self.decision,
            "statistics": self.statistics,
            "thresholds": self.thresholds,
            "steps": self.steps,
            "eta": self.eta,
            "n_x": self.n_x,
            "n_y": self.n_y,
            "mode": self.mode,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, float) and not math.isfinite(v):
                return repr(v)
            return v

        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            return enc(obj)

        return json.dumps(clean(self.to_dict()), sort_keys=True)


TestReport.__test__ = False  # type: ignore[attr-defined]


def _verdict(stat: float | None, threshold: float) -> str:
    return "reject" if stat is not None and stat >= threshold else "not-reject"


# --------------------------------------------------------------------------
# Closed-form thresholds


def threshold_step1(n: int, eta) -> float:
    """Step I threshold ``sqrt(2/n) (1 + sqrt(2 log(1/eta)))``."""
    eta = _eta(eta)
    if n < 1:
        raise SizeError("n must be >= 1")
    return math.sqrt(2.0 / n) * (1.0 + math.sqrt(2.0 * math.log(1.0 / eta)))


def threshold_step2(n: int, eta, c1: float = 1.0, c2: float = 1.0, d: int = 1) -> float:
    """Step II threshold; the large-n branch uses exponent ``1/max(d, 3)``."""
    eta = _eta(eta)
    if c1 <= 0 or c2 <= 0:
        raise ValueError("constants must be positive")
    if n < 1:
        raise SizeError("n must be >= 1")
    log_term = math.log(c1 / eta)
    base = log_term / (c2 * n)
    if n < log_term / c2:
        return base
    return base ** (1.0 / max(d, 3))


def holder_threshold(n: int, eta, s: int = 1, beta: float = 1.0, d: int = 1, c1: float = 1.0) -> float:
    """Hölder IPM threshold ``c1 n^{-(s+beta)/d} + sqrt(4 log(2/eta)) / sqrt(n)``."""
    eta = _eta(eta)
    return c1 * n ** (-(s + beta) / d) + math.sqrt(4.0 * math.log(2.0 / eta) / n)


def nn_threshold(n: int, eta, s: int = 1, beta: float = 1.0, d: int = 1, c1: float = 1.0) -> float:
    """NN IPM threshold ``c1 n^{-(s+beta)/(2(s+beta)+d)} log(n)^2 + sqrt(4 log(2/eta)) / sqrt(n)``."""
    eta = _eta(eta)
    sb = s + beta
    return c1 * n ** (-sb / (2 * sb + d)) * math.log(n) ** 2 + math.sqrt(4.0 * math.log(2.0 / eta) / n)


# --------------------------------------------------------------------------
# Bootstrap


def bootstrap_quantile(stats, eta: float) -> float:
    """Smallest sorted value t with ``#{T <= t} / N >= 1 - eta``."""
    values = np.sort(np.asarray(stats, dtype=float))
    N = values.size
    if N == 0:
        raise ValueError("no bootstrap statistics")
    target = (1 - Fraction(eta).limit_denominator(10**12)) * N
    k = max(1, math.ceil(target))
    return float(values[k - 1])


@dataclass(frozen=True)
class BootstrapResult:
    threshold: float
    statistics: np.ndarray
    degenerate: bool = False

    def __float__(self) -> float:
        return self.threshold


def _points(sample) -> np.ndarray:
    pts = sample.points if isinstance(sample, Sample) else np.asarray(sample, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def bootstrap_indices(n: int, m: int, n_boot: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Resample indices into the pooled ``n + m`` points, one stream per replicate."""
    ix = np.empty((n_boot, n), dtype=np.int64)
    iy = np.empty((n_boot, m), dtype=np.int64)
    for b in range(n_boot):
        draw = make_rng(derive_seed(seed, b)).integers(0, n + m, size=n + m)
        ix[b], iy[b] = draw[:n], draw[n:]
    return ix, iy


def _is_degenerate(pooled: np.ndarray) -> bool:
    return bool(np.all(pooled == pooled[:1]))


def bootstrap_threshold(
    stat: Callable,
    sampleX,
    sampleY,
    eta,
    n_boot: int = 200,
    seed: int = 0,
    batched: bool = False,
) -> BootstrapResult:
    """Quantile of ``stat`` over resamples of the pooled data.

    ``stat(X, Y)`` returns a float; with ``batched`` it receives stacked
    resamples ``(B, n, D)`` and returns ``(B,)``.
    """
    eta = _eta(eta)
    if n_boot < MIN_BOOTSTRAP:
        raise ValueError(f"bootstrap needs at least {MIN_BOOTSTRAP} replicates")
    X, Y = _points(sampleX), _points(sampleY)
    pooled = np.concatenate([X, Y])
    if _is_degenerate(pooled):
        return BootstrapResult(0.0, np.zeros(n_boot), True)
    ix, iy = bootstrap_indices(len(X), len(Y), n_boot, seed)
    if batched:
        stats = np.asarray(stat(pooled[ix], pooled[iy]), dtype=float)
    else:
        stats = np.array([stat(pooled[a], pooled[b]) for a, b in zip(ix, iy)], dtype=float)
    return BootstrapResult(bootstrap_quantile(stats, eta), stats)


# --------------------------------------------------------------------------
# Two-step atlas test


def _check_sizes(X: np.ndarray, Y: np.ndarray) -> None:
    if len(X) == 0 or len(Y) == 0:
        raise SizeError("samples must be nonempty")
    if len(X) != len(Y):
        raise SizeError(f"equal sample sizes required, got {len(X)} and {len(Y)}")


def _safe_T(cx, cy) -> float | None:
    try:
        return projected_T_from_coords(cx, cy)[0]
    except EmptyChartError:
        return None


def _chart_data(atlas: Atlas, pts: np.ndarray):
    labels = assign_charts(atlas, pts)
    coords = [atlas.charts[a].forward(pts[labels == a]) for a in range(len(atlas))]
    return labels, coords


def _l2_from_labels(lx: np.ndarray, ly: np.ndarray, k: int) -> float:
    p = DiscreteMass.from_counts(np.bincount(lx, minlength=k).tolist())
    q = DiscreteMass.from_counts(np.bincount(ly, minlength=k).tolist())
    return l2_divergence(p, q)


def _squared_count_gap(lx: np.ndarray, ly: np.ndarray, k: int) -> int:
    """``n^2 * ||p_hat - q_hat||^2`` for equal sizes n: an integer."""
    diff = np.bincount(lx, minlength=k) - np.bincount(ly, minlength=k)
    return int(np.dot(diff, diff))


def lattice_step1_threshold(gaps, n: int, eta: float) -> float:
    """Step I bootstrap threshold on the lattice of attainable statistics.

    ``gaps`` are bootstrap values of ``n^2 ||p - q||^2``.  The statistic only
    takes values ``sqrt(j) / n``, so the atom at the empirical quantile
    carries visible mass; rejecting on it would push the size above the
    sub-level.  The threshold is therefore the next lattice value above the
    quantile, evaluated through the same exact-rational path as the statistic.
    """
    q = int(bootstrap_quantile(gaps, eta))
    return math.sqrt(Fraction(q + 1, n * n))


def two_step_test(atlas: Atlas, sampleX, sampleY, eta, spec: ThresholdSpec | None = None, d: int | None = None) -> TestReport:
    """Chart-mass test followed by the projected Wasserstein test.

    Both sub-tests run at level ``eta / 2``.  The Step II statistic is always
    computed; its decision is marked skipped when Step I already rejects.
    """
    t0 = time.perf_counter()
    eta = _eta(eta)
    spec = spec or ThresholdSpec()
    X, Y = _points(sampleX), _points(sampleY)
    _check_sizes(X, Y)
    n, k = len(X), len(atlas)
    d = d or atlas.descriptor.intrinsic_dim
    sub = eta / 2

    lx, cx = _chart_data(atlas, X)
    ly, cy = _chart_data(atlas, Y)
    l2 = _l2_from_labels(lx, ly, k)
    T = _safe_T(cx, cy)

    degenerate = False
    if spec.mode == "analytic":
        th1 = threshold_step1(n, sub)
        th2 = threshold_step2(n, sub, spec.constant("c1"), spec.constant("c2"), d)
    elif spec.mode == "fixed":
        th1 = th2 = float(spec.value)
    else:
        pooled = np.concatenate([X, Y])
        if _is_degenerate(pooled):
            th1 = th2 = 0.0
            degenerate = True
        else:
            labels = np.concatenate([lx, ly])
            # Chart coordinates of every pooled point in its own chart.
            order = np.concatenate([np.flatnonzero(lx == a) for a in range(k)])
            order_y = np.concatenate([np.flatnonzero(ly == a) for a in range(k)])
            own = np.empty((2 * n, cx[0].shape[1] if len(cx) else 1))
            own[order] = np.concatenate(cx)
            own[n + order_y] = np.concatenate(cy)
            ix, iy = bootstrap_indices(n, n, spec.n_boot, spec.seed)
            b1 = np.empty(spec.n_boot, dtype=np.int64)
            b2 = np.empty(spec.n_boot)
            for b in range(spec.n_boot):
                la, lb = labels[ix[b]], labels[iy[b]]
                ca, cb = own[ix[b]], own[iy[b]]
                b1[b] = _squared_count_gap(la, lb, k)
                t = _safe_T([ca[la == a] for a in range(k)], [cb[lb == a] for a in range(k)])
                b2[b] = 0.0 if t is None else t
            th1 = lattice_step1_threshold(b1, n, sub)
            th2 = bootstrap_quantile(b2, sub)

    step1 = _verdict(l2, th1)
    if step1 == "reject":
        step2 = "skipped"
        decision = "reject"
    else:
        step2 = _verdict(T, th2)
        decision = step2
    return TestReport(
        test="two-step",
        decision=decision,
        statistics={"l2": l2, "T": T},
        thresholds={"l2": th1, "T": th2},
        steps={"I": step1, "II": step2},
        eta=eta,
        n_x=n,
        n_y=len(Y),
        mode=spec.mode,
        seed=spec.seed if spec.mode == "bootstrap" else None,
        wall_time=time.perf_counter() - t0,
        degenerate=degenerate,
    )


# --------------------------------------------------------------------------
# Hölder IPM test


def _chart_coordinate(sample, coords: Callable | None) -> np.ndarray:
    if coords is not None:
        u = np.asarray(coords(_points(sample)), dtype=float)
    else:
        u = np.asarray(getattr(sample, "points", sample), dtype=float)
    if u.ndim == 2:
        if u.shape[1] != 1:
            raise OracleScopeError("the Hölder oracle needs one-dimensional chart coordinates")
        u = u[:, 0]
    return u


def holder_test(
    sampleX,
    sampleY,
    eta,
    s: int = 1,
    beta: float = 1.0,
    d: int = 1,
    c1: float = 1.0,
    use_oracle: bool = True,
    spec: ThresholdSpec | None = None,
    coords: Callable | None = None,
    family: GridFunctionFamily | None = None,
    arch: CriticArchitecture | None = None,
    train: TrainConfig | None = None,
) -> TestReport:
    """Reject when the Hölder IPM estimate reaches the threshold.

    With ``use_oracle`` the statistic is the exact grid-family maximum on a
    single one-dimensional chart (``coords`` maps samples to it; by default
    the samples already are chart coordinates).  Otherwise the trained
    critic stands in for the Hölder class.
    """
    t0 = time.perf_counter()
    eta = _eta(eta)
    spec = spec or ThresholdSpec(mode="analytic", constants={"c1": c1})
    if use_oracle:
        if d != 1:
            raise OracleScopeError("the Hölder oracle covers d = 1 only")
        family = family or GridFunctionFamily(s=s, beta=beta)
        if family.s != s or family.beta != beta:
            raise OracleScopeError("family smoothness differs from (s, beta)")
        U, V = _chart_coordinate(sampleX, coords), _chart_coordinate(sampleY, coords)
        _check_sizes(U, V)
        stat = oracle_ipm(family, U, V).value
        boot = lambda Ub, Vb: oracle_ipm_batch(family, Ub[..., 0], Vb[..., 0])  # noqa: E731
        pair = (U, V)
    else:
        X, Y = _points(sampleX), _points(sampleY)
        _check_sizes(X, Y)
        arch = arch or hyperparams_from_theory(max(len(X), 2), X.shape[1], d, s, beta)
        train = train or TrainConfig()
        stat = train_critic(arch, X, Y, train)[1]
        boot = lambda Xb, Yb: train_critic_batch(arch, Xb, Yb, train)[1]  # noqa: E731
        pair = (X, Y)
    n = len(pair[0])

    degenerate = False
    if spec.mode == "analytic":
        threshold = holder_threshold(n, eta, s, beta, d, spec.constants.get("c1", c1))
    elif spec.mode == "fixed":
        threshold = float(spec.value)
    else:
        res = bootstrap_threshold(boot, pair[0], pair[1], eta, spec.n_boot, spec.seed, batched=True)
        threshold, degenerate = res.threshold, res.degenerate
    decision = _verdict(stat, threshold)
    return TestReport(
        test="holder",
        decision=decision,
        statistics={"holder": stat},
        thresholds={"holder": threshold},
        steps={"holder": decision},
        eta=eta,
        n_x=n,
        n_y=n,
        mode=spec.mode,
        seed=spec.seed if spec.mode == "bootstrap" else None,
        wall_time=time.perf_counter() - t0,
        degenerate=degenerate,
    )


# --------------------------------------------------------------------------
# NN IPM test


def nn_test(
    sampleX,
    sampleY,
    eta,
    arch: CriticArchitecture | None = None,
    d: int = 1,
    s: int = 1,
    beta: float = 1.0,
    train: TrainConfig | None = None,
    spec: ThresholdSpec | None = None,
    c1: float = 1.0,
    init: CriticParams | None = None,
) -> TestReport:
    """Reject when the trained critic's mean gap reaches the threshold.

    Bootstrap replicates reuse the training configuration and the initial
    network (``init`` if given) of the observed statistic.
    """
    t0 = time.perf_counter()
    eta = _eta(eta)
    spec = spec or ThresholdSpec()
    X, Y = _points(sampleX), _points(sampleY)
    _check_sizes(X, Y)
    n = len(X)
    arch = arch or hyperparams_from_theory(max(n, 2), X.shape[1], d, s, beta)
    train = train or TrainConfig()
    stat = train_critic(arch, X, Y, train, init)[1]

    degenerate = False
    if spec.mode == "analytic":
        threshold = nn_threshold(n, eta, s, beta, d, spec.constants.get("c1", c1))
    elif spec.mode == "fixed":
        threshold = float(spec.value)
    else:
        res = bootstrap_threshold(
            lambda Xb, Yb: train_critic_batch(arch, Xb, Yb, train, init)[1],
            X, Y, eta, spec.n_boot, spec.seed, batched=True,
        )
        threshold, degenerate = res.threshold, res.degenerate
    decision = _verdict(stat, threshold)
    return TestReport(
        test="nn",
        decision=decision,
        statistics={"nn": stat},
        thresholds={"nn": threshold},
        steps={"nn": decision},
        eta=eta,
        n_x=n,
        n_y=n,
        mode=spec.mode,
        seed=spec.seed if spec.mode == "bootstrap" else None,
        wall_time=time.perf_counter() - t0,
        degenerate=degenerate,
    )
