"""Monte Carlo harness: scenarios, rejection-rate estimates and power curves."""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import beta as beta_dist

from .critic import TrainConfig
from .errors import ConfigError
from .holder import GridFunctionFamily
from .manifold import (
    DistributionSpec,
    angle_coordinate,
    build_circle_atlas,
    build_sphere_atlas,
    sample_distribution,
)
from .seeding import MASK64, derive_seed
from .testkit import ThresholdSpec, TestLevel, TestReport, holder_test, nn_test, two_step_test

TESTS = ("two-step", "holder", "nn")
CSV_HEADER = [
    "scenario", "test", "n", "eta", "trials", "rejections", "rate",
    "ci_lo", "ci_hi", "mean_stat", "mean_threshold", "seed",
]


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    manifold: str = "circle"
    ambient_dim: int = 6
    intrinsic_dim: int = 1
    rotation_seed: int = 0
    p: str = "uniform-circle"
    q: str = "uniform-circle"
    test: str = "two-step"
    n: int = 100
    eta: float = 0.05
    threshold: str = "bootstrap"
    threshold_value: float | None = None
    n_boot: int = 200
    c1: float = 1.0
    c2: float = 1.0
    train_steps: int = 40
    train_step_size: float = 0.1
    projection_period: int = 10
    train_seed: int = 0
    holder_knots: int = 32
    holder_quantum: float = 1.0 / 64
    trials: int = 100
    seed: int = 0
    null: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.manifold not in ("circle", "sphere"):
            raise ConfigError(f"{self.name}.manifold", f"unknown manifold {self.manifold!r}")
        if self.test not in TESTS:
            raise ConfigError(f"{self.name}.test", f"unknown test {self.test!r}; choose from {', '.join(TESTS)}")
        if self.trials < 1:
            raise ConfigError(f"{self.name}.trials", "need at least one trial")
        if self.n < 1:
            raise ConfigError(f"{self.name}.n", "sample size must be positive")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError(f"{self.name}.seed", "seed must be an unsigned 64-bit integer")
        try:
            TestLevel(self.eta)
        except ValueError as exc:
            raise ConfigError(f"{self.name}.eta", str(exc)) from None
        try:
            self.threshold_spec(0)
        except ValueError as exc:
            raise ConfigError(f"{self.name}.threshold", str(exc)) from None
        if self.test == "holder" and self.manifold != "circle":
            raise ConfigError(f"{self.name}.test", "the Hölder oracle test needs the circle")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(f"{self.name}.train_steps", str(exc)) from None
        try:
            desc = self.build()[1]
        except ValueError as exc:
            raise ConfigError(f"{self.name}.manifold", str(exc)) from None
        for key in ("p", "q"):
            try:
                DistributionSpec.from_config(getattr(self, key), desc)
            except ValueError as exc:
                raise ConfigError(f"{self.name}.{key}", str(exc)) from None
        if self.null and self.p.replace(" ", "") != self.q.replace(" ", ""):
            raise ConfigError(f"{self.name}.q", "null calibration requires q = p")

    def build(self):
        if self.manifold == "circle":
            return build_circle_atlas(self.ambient_dim, self.rotation_seed)
        return build_sphere_atlas(self.intrinsic_dim, self.ambient_dim, self.rotation_seed)

    def threshold_spec(self, seed: int) -> ThresholdSpec:
        return ThresholdSpec(
            mode=self.threshold,
            constants={"c1": self.c1, "c2": self.c2},
            n_boot=self.n_boot,
            seed=seed,
            value=self.threshold_value,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.train_steps,
            step_size=self.train_step_size,
            projection_period=self.projection_period,
            seed=self.train_seed,
        )

    def as_null(self) -> "Scenario":
        return replace(self, q=self.p, null=True)


@dataclass(frozen=True)
class RiskEstimate:
    rejection_rate: float
    trials: int
    rejections: int
    ci_lo: float
    ci_hi: float
    mean_stat: float
    mean_threshold: float

    @property
    def type2_risk(self) -> float:
        return 1.0 - self.rejection_rate


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial interval for ``k`` successes in ``n`` trials."""
    if not 0 <= k <= n or n < 1:
        raise ValueError("need 0 <= k <= n and n >= 1")
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def trial_seed(master: int, trial: int) -> int:
    return derive_seed(master, trial)


def run_trial(scenario: Scenario, trial: int) -> TestReport:
    """One test execution; the data and bootstrap streams derive from the trial seed."""
    atlas, desc = scenario.build()
    seed = trial_seed(scenario.seed, trial)
    P = DistributionSpec.from_config(scenario.p, desc)
    Q = DistributionSpec.from_config(scenario.q, desc)
    X = sample_distribution(P, scenario.n, derive_seed(seed, 0))
    Y = sample_distribution(Q, scenario.n, derive_seed(seed, 1))
    spec = scenario.threshold_spec(derive_seed(seed, 2))
    if scenario.test == "two-step":
        return two_step_test(atlas, X, Y, scenario.eta, spec)
    if scenario.test == "holder":
        family = GridFunctionFamily(-math.pi, math.pi, knots=scenario.holder_knots, quantum=scenario.holder_quantum)
        return holder_test(
            X, Y, scenario.eta, c1=scenario.c1, spec=spec, coords=angle_coordinate(desc), family=family
        )
    return nn_test(
        X, Y, scenario.eta, d=desc.intrinsic_dim, train=scenario.train_config(), spec=spec, c1=scenario.c1
    )


def _run_indexed(args) -> tuple[int, bool, float, float]:
    scenario, trial = args
    report = run_trial(scenario, trial)
    stat, threshold = report.primary()
    return trial, report.rejected, stat, threshold


def estimate_risks(scenario: Scenario, threads: int = 1) -> RiskEstimate:
    jobs = [(scenario, t) for t in range(scenario.trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_indexed, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        results = [_run_indexed(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    rejections = sum(r[1] for r in results)
    stats = np.array([r[2] for r in results], dtype=float)
    ths = np.array([r[3] for r in results], dtype=float)
    lo, hi = clopper_pearson(rejections, scenario.trials)
    finite = stats[~np.isnan(stats)]
    return RiskEstimate(
        rejection_rate=rejections / scenario.trials,
        trials=scenario.trials,
        rejections=rejections,
        ci_lo=lo,
        ci_hi=hi,
        mean_stat=float(finite.mean()) if finite.size else math.nan,
        mean_threshold=float(ths.mean()),
    )


def power_curve(base: Scenario, n_grid: Iterable[int], threads: int = 1) -> list[tuple[int, RiskEstimate]]:
    grid = [int(n) for n in n_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{base.name}.n_grid", "must be a nonempty strictly increasing list")
    return [(n, estimate_risks(replace(base, n=n), threads)) for n in grid]


# --------------------------------------------------------------------------
# Config files and artifacts


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def csv_row(scenario: Scenario, estimate: RiskEstimate) -> list[str]:
    values = [
        scenario.n, scenario.eta, estimate.trials, estimate.rejections, estimate.rejection_rate,
        estimate.ci_lo, estimate.ci_hi, estimate.mean_stat, estimate.mean_threshold, scenario.seed,
    ]
    return [scenario.name, scenario.test] + [_fmt(v) for v in values]


def write_csv(path, rows: Iterable[tuple[Scenario, RiskEstimate]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for scenario, est in rows:
        writer.writerow(csv_row(scenario, est))
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_json(path, scenario: Scenario, estimates: list[tuple[int, RiskEstimate]]) -> None:
    def num(v):
        return v if isinstance(v, (int, str, bool)) or v is None or math.isfinite(v) else repr(v)

    doc = {
        "scenario": {k: num(v) for k, v in asdict(scenario).items()},
        "estimates": [{"n": n, **{k: num(v) for k, v in asdict(e).items()}} for n, e in estimates],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


_FIELD_TYPES = {f: t for f, t in Scenario.__annotations__.items()}
_CONVERT = {
    "int": int,
    "float": float,
    "str": str,
    "bool": lambda v: v.strip().lower() in ("1", "true", "yes", "on"),
    "float | None": lambda v: float(v),
}


def _parse_section(name: str, section: Mapping[str, str]) -> tuple[Scenario, list[int] | None]:
    kwargs: dict = {"name": name}
    n_grid = None
    for key, raw in section.items():
        if key == "n_grid":
            try:
                n_grid = [int(v) for v in raw.replace(",", " ").split()]
            except ValueError:
                raise ConfigError(f"{name}.n_grid", f"cannot parse {raw!r}") from None
            continue
        if key not in _FIELD_TYPES or key == "name":
            raise ConfigError(f"{name}.{key}", "unknown key")
        try:
            kwargs[key] = _CONVERT[_FIELD_TYPES[key]](raw)
        except ValueError:
            raise ConfigError(f"{name}.{key}", f"cannot parse {raw!r}") from None
    return Scenario(**kwargs), n_grid


def load_config(path, overrides: Mapping[str, object] | None = None) -> list[tuple[Scenario, list[int] | None]]:
    """Read an INI file; each section is a scenario, ``[DEFAULT]`` is shared."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    if not parser.sections():
        raise ConfigError("config", "no scenario sections")
    out = []
    for name in parser.sections():
        scenario, grid = _parse_section(name, parser[name])
        if overrides:
            try:
                scenario = replace(scenario, **{k: v for k, v in overrides.items() if v is not None})
            except ValueError as exc:
                raise ConfigError(name, str(exc)) from None
        out.append((scenario, grid))
    return out
