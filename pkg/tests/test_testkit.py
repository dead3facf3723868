import json
import math

import mpmath
import numpy as np
import pytest

from manifold_twosample.critic import TrainConfig, hyperparams_from_theory, initial_params, negate_params
from manifold_twosample.errors import LevelError, OracleScopeError, SizeError
from manifold_twosample.holder import GridFunctionFamily
from manifold_twosample.manifold import DistributionSpec, angle_coordinate, build_circle_atlas, sample_distribution
from manifold_twosample.seeding import derive_seed
from manifold_twosample.testkit import (
    TestLevel,
    ThresholdSpec,
    bootstrap_indices,
    bootstrap_quantile,
    bootstrap_threshold,
    holder_test,
    lattice_step1_threshold,
    nn_test,
    holder_threshold,
    nn_threshold,
    threshold_step1,
    threshold_step2,
    two_step_test,
)

mpmath.mp.dps = 30


@pytest.fixture(scope="module")
def circle():
    return build_circle_atlas(6, 0)


def on_circle(desc, angles):
    angles = np.asarray(angles, dtype=float)
    return desc.embed(np.column_stack([np.cos(angles), np.sin(angles)]))


def uniform_pair(desc, n, seed):
    spec = DistributionSpec("uniform-circle", desc)
    return sample_distribution(spec, n, derive_seed(seed, 0)), sample_distribution(spec, n, derive_seed(seed, 1))


# --------------------------------------------------------------------------
# Levels and closed-form thresholds


def test_level_bounds():
    for bad in (0.0, 0.5, -0.1, 0.7):
        with pytest.raises(LevelError):
            TestLevel(bad)
    with pytest.raises(LevelError):
        threshold_step1(10, 0.5)


def test_step1_threshold_against_mpmath():
    ref = mpmath.sqrt(mpmath.mpf(2) / 50) * (1 + mpmath.sqrt(2 * mpmath.log(20)))
    assert threshold_step1(50, 0.05) == pytest.approx(float(ref), abs=1e-13)
    assert threshold_step1(50, 0.05) == pytest.approx(0.6895493661, abs=1e-9)


def test_step1_threshold_scaling_and_monotonicity():
    for n in (1, 7, 50, 1000):
        assert threshold_step1(4 * n, 0.05) == pytest.approx(threshold_step1(n, 0.05) / 2, rel=1e-15)
    assert threshold_step1(50, 0.01) > threshold_step1(50, 0.05)


def test_step2_threshold_branches():
    assert threshold_step2(2, 0.05) == pytest.approx(math.log(20) / 2, abs=1e-12)
    assert threshold_step2(2, 0.05) == pytest.approx(1.497866, abs=1e-6)
    assert threshold_step2(100, 0.05, d=1) == pytest.approx((math.log(20) / 100) ** (1 / 3), abs=1e-12)
    assert threshold_step2(100, 0.05, d=1) == pytest.approx(0.3105758382, abs=1e-9)
    assert threshold_step2(100, 0.05, d=5) == pytest.approx((math.log(20) / 100) ** (1 / 5), abs=1e-12)


def test_step2_threshold_non_increasing():
    for c1, c2, d in ((1, 1, 1), (3, 0.5, 2), (1, 2, 4)):
        values = [threshold_step2(n, 0.05, c1, c2, d) for n in range(1, 400)]
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


def test_holder_and_nn_thresholds_against_mpmath():
    n, eta = mpmath.mpf(100), mpmath.mpf("0.05")
    tail = mpmath.sqrt(4 * mpmath.log(2 / eta)) / mpmath.sqrt(n)
    t2 = n ** (-2 / mpmath.mpf(2)) + tail
    t3 = n ** (-mpmath.mpf(2) / 6) * mpmath.log(n) ** 2 + tail
    assert holder_threshold(100, 0.05, 1, 1.0, 2, 1.0) == pytest.approx(float(t2), abs=1e-13)
    assert nn_threshold(100, 0.05, 1, 1.0, 2, 1.0) == pytest.approx(float(t3), abs=1e-12)
    # The analytic NN threshold is above the 2R ceiling of the statistic.
    assert nn_threshold(100, 0.05, 1, 1.0, 2) > 2.0


@pytest.mark.xfail(strict=True, reason="rounded reference values disagree with the formulas beyond 1e-6")
def test_rounded_reference_values():
    assert threshold_step1(50, 0.05) == pytest.approx(0.689568, abs=1e-6)
    assert threshold_step2(100, 0.05, d=1) == pytest.approx(0.310706, abs=1e-6)
    assert holder_threshold(100, 0.05, d=2) == pytest.approx(0.394131, abs=1e-6)
    assert nn_threshold(100, 0.05, d=2) == pytest.approx(4.95341, abs=1e-4)


# --------------------------------------------------------------------------
# Bootstrap


def test_inf_quantile_examples():
    assert bootstrap_quantile([4, 1, 3, 2], 0.25) == 3
    assert bootstrap_quantile([0.7] * 60, 0.05) == 0.7
    assert bootstrap_quantile(np.arange(1, 201), 0.05) == 190
    assert bootstrap_quantile(np.arange(1, 201), 0.025) == 195


def test_bootstrap_threshold_determinism_and_degeneracy():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))

    def stat(a, b):
        return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))

    r1 = bootstrap_threshold(stat, X, Y, 0.05, 100, seed=9)
    r2 = bootstrap_threshold(stat, X, Y, 0.05, 100, seed=9)
    assert r1.threshold == r2.threshold and not r1.degenerate
    np.testing.assert_array_equal(r1.statistics, r2.statistics)
    batched = bootstrap_threshold(
        lambda a, b: np.linalg.norm(a.mean(axis=1) - b.mean(axis=1), axis=1), X, Y, 0.05, 100, seed=9, batched=True
    )
    np.testing.assert_allclose(batched.statistics, r1.statistics, atol=1e-15)
    same = np.ones((10, 2))
    deg = bootstrap_threshold(stat, same, same, 0.05, 60, seed=1)
    assert deg.degenerate and deg.threshold == 0.0
    with pytest.raises(ValueError):
        bootstrap_threshold(stat, X, Y, 0.05, 49)
    with pytest.raises(ValueError):
        ThresholdSpec(n_boot=10)


def test_bootstrap_indices_are_per_replicate_streams():
    ix, iy = bootstrap_indices(5, 5, 60, seed=3)
    ix2, iy2 = bootstrap_indices(5, 5, 80, seed=3)
    np.testing.assert_array_equal(ix, ix2[:60])
    np.testing.assert_array_equal(iy, iy2[:60])
    assert ix.min() >= 0 and max(ix.max(), iy.max()) < 10


def test_lattice_threshold_sits_above_the_quantile():
    gaps = np.array([0, 4, 4, 16, 36] * 20)
    th = lattice_step1_threshold(gaps, 100, 0.2)
    assert th == pytest.approx(math.sqrt(17) / 100, abs=1e-15)


# --------------------------------------------------------------------------
# Two-step test


def test_two_step_rejects_on_disjoint_chart_masses(circle):
    atlas, desc = circle
    X = on_circle(desc, np.linspace(-0.5, 0.5, 50))
    Y = on_circle(desc, np.linspace(math.pi - 0.5, math.pi + 0.5, 50))
    rep = two_step_test(atlas, X, Y, 0.1, ThresholdSpec("analytic"))
    assert rep.statistics["l2"] == pytest.approx(math.sqrt(2), abs=1e-15)
    assert rep.thresholds["l2"] == pytest.approx(threshold_step1(50, 0.05), abs=1e-15)
    assert rep.thresholds["l2"] == pytest.approx(0.6895, abs=1e-4)
    assert rep.steps == {"I": "reject", "II": "skipped"}
    assert rep.rejected


def test_two_step_identical_samples(circle):
    atlas, desc = circle
    X, _ = uniform_pair(desc, 40, 1)
    for spec in (ThresholdSpec("analytic"), ThresholdSpec(seed=2)):
        rep = two_step_test(atlas, X, X, 0.05, spec)
        assert rep.statistics == {"l2": 0.0, "T": 0.0}
        assert rep.decision == "not-reject"


def test_two_step_statistics_symmetric(circle):
    atlas, desc = circle
    X, Y = uniform_pair(desc, 60, 4)
    a = two_step_test(atlas, X, Y, 0.05, ThresholdSpec("analytic"))
    b = two_step_test(atlas, Y, X, 0.05, ThresholdSpec("analytic"))
    assert a.statistics == b.statistics


def test_two_step_unequal_sizes(circle):
    atlas, desc = circle
    X, Y = uniform_pair(desc, 10, 0)
    with pytest.raises(SizeError):
        two_step_test(atlas, X.points, Y.points[:9], 0.05)


def test_two_step_detects_shifted_conditional_law(circle):
    # Equal chart masses (100 points near each pole of the circle); the
    # chart-0 cluster of Y is shifted by 0.3.
    atlas, desc = circle
    rejections = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = on_circle(desc, np.concatenate([rng.normal(0.0, 0.3, 100), rng.normal(math.pi, 0.3, 100)]))
        Y = on_circle(desc, np.concatenate([rng.normal(0.3, 0.3, 100), rng.normal(math.pi, 0.3, 100)]))
        rep = two_step_test(atlas, X, Y, 0.05, ThresholdSpec(seed=seed))
        assert rep.steps["I"] == "not-reject"
        rejections += rep.steps["II"] == "reject"
    assert rejections >= 45


def test_two_step_report_json(circle):
    atlas, desc = circle
    X, Y = uniform_pair(desc, 30, 8)
    rep = two_step_test(atlas, X, Y, 0.05, ThresholdSpec(seed=1))
    doc = json.loads(rep.to_json())
    assert set(doc) == {
        "test", "decision", "statistics", "thresholds", "steps", "eta",
        "n_x", "n_y", "mode", "seed", "wall_time", "degenerate",
    }
    again = two_step_test(atlas, X, Y, 0.05, ThresholdSpec(seed=1))
    assert again.statistics == rep.statistics and again.thresholds == rep.thresholds
    fixed = two_step_test(atlas, X, Y, 0.05, ThresholdSpec("fixed", value=math.inf))
    assert not fixed.rejected and json.loads(fixed.to_json())["thresholds"]["T"] == "inf"


# --------------------------------------------------------------------------
# Hölder test


def test_holder_identical_and_point_masses():
    rep = holder_test(np.array([0.0]), np.array([1.0]), 0.05)
    assert rep.statistics["holder"] == pytest.approx(1.0, abs=1e-12)
    assert rep.thresholds["holder"] == pytest.approx(holder_threshold(1, 0.05), abs=1e-15)
    assert rep.decision == "not-reject"
    u = np.random.default_rng(0).uniform(size=50)
    assert holder_test(u, u, 0.05).statistics["holder"] == 0.0
    assert holder_test(u, u, 0.05, spec=ThresholdSpec(seed=1)).decision == "not-reject"


def test_holder_threshold_example():
    u = np.linspace(0, 1, 100)
    rep = holder_test(np.tile(u[:, None], 3), np.tile(u[:, None], 3), 0.05, d=2, c1=1.0, use_oracle=False)
    assert rep.thresholds["holder"] == pytest.approx(0.3941291165, abs=1e-9)


def test_holder_scope_errors():
    with pytest.raises(OracleScopeError):
        holder_test(np.zeros(3), np.zeros(3), 0.05, d=2)
    with pytest.raises(OracleScopeError):
        holder_test(np.zeros((3, 2)), np.zeros((3, 2)), 0.05)
    with pytest.raises(OracleScopeError):
        holder_test(np.zeros(3), np.zeros(3), 0.05, beta=0.5, family=GridFunctionFamily())


def test_holder_bootstrap_on_circle(circle):
    _, desc = circle
    coord = angle_coordinate(desc)
    fam = GridFunctionFamily(-math.pi, math.pi)
    X = sample_distribution(DistributionSpec("von-mises-circle", desc, kappa=2.0), 100, 1)
    Y = sample_distribution(DistributionSpec("uniform-circle", desc), 100, 2)
    rep = holder_test(X, Y, 0.05, spec=ThresholdSpec(seed=3), coords=coord, family=fam)
    assert rep.rejected
    assert rep.statistics["holder"] >= rep.thresholds["holder"]


# --------------------------------------------------------------------------
# NN test


def test_nn_identical_samples():
    X = np.random.default_rng(1).normal(size=(30, 4))
    for spec in (ThresholdSpec("analytic"), ThresholdSpec(seed=1), ThresholdSpec("fixed", value=1e-9)):
        rep = nn_test(X, X, 0.05, spec=spec)
        assert rep.statistics["nn"] == 0.0 and rep.decision == "not-reject"


def test_nn_analytic_threshold_example():
    X = np.random.default_rng(1).normal(size=(100, 3))
    rep = nn_test(X, X, 0.05, d=2, spec=ThresholdSpec("analytic"))
    assert rep.thresholds["nn"] == pytest.approx(4.9531664014, abs=1e-9)


def test_nn_unequal_sizes():
    with pytest.raises(SizeError):
        nn_test(np.zeros((5, 2)), np.zeros((4, 2)), 0.05)


def test_nn_separated_clusters_rejected():
    arch = None
    rejections = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(50, 6)) * 0.2 + 2.0
        Y = rng.normal(size=(50, 6)) * 0.2 - 2.0
        rep = nn_test(X, Y, 0.05, arch=arch, spec=ThresholdSpec(n_boot=200, seed=seed))
        rejections += rep.rejected
    assert rejections >= 48


def test_nn_swap_with_negated_start():
    rng = np.random.default_rng(5)
    X, Y = rng.normal(size=(60, 6)) + 0.3, rng.normal(size=(60, 6))
    arch = hyperparams_from_theory(60, 6, 1)
    cfg = TrainConfig(seed=2)
    init = initial_params(arch, cfg)
    a = nn_test(X, Y, 0.05, arch=arch, train=cfg, spec=ThresholdSpec(seed=4), init=init)
    b = nn_test(Y, X, 0.05, arch=arch, train=cfg, spec=ThresholdSpec(seed=4), init=negate_params(init))
    assert a.statistics == b.statistics


def test_nn_decision_rate_unchanged_by_swap(circle):
    _, desc = circle
    P = DistributionSpec("uniform-circle", desc)
    Q = DistributionSpec("von-mises-circle", desc, kappa=0.6)
    forward = backward = 0
    for seed in range(30):
        X = sample_distribution(P, 60, derive_seed(seed, 0))
        Y = sample_distribution(Q, 60, derive_seed(seed, 1))
        spec = ThresholdSpec(seed=derive_seed(seed, 2))
        forward += nn_test(X, Y, 0.05, spec=spec).rejected
        backward += nn_test(Y, X, 0.05, spec=spec).rejected
    # Two binomial counts of the same rate; 30 trials each.
    assert abs(forward - backward) <= 8


# --------------------------------------------------------------------------
# Analytic versus bootstrap thresholds under the null


def _null_thresholds(circle, trials=20):
    atlas, desc = circle
    coord = angle_coordinate(desc)
    fam = GridFunctionFamily(-math.pi, math.pi)
    rows = []
    for t in range(trials):
        X, Y = uniform_pair(desc, 100, 300 + t)
        boot = ThresholdSpec(seed=t)
        a = two_step_test(atlas, X, Y, 0.05, ThresholdSpec("analytic"))
        b = two_step_test(atlas, X, Y, 0.05, boot)
        ha = holder_threshold(100, 0.05)
        hb = holder_test(X, Y, 0.05, spec=boot, coords=coord, family=fam).thresholds["holder"]
        rows.append((a.thresholds["l2"] >= b.thresholds["l2"], a.thresholds["T"] >= b.thresholds["T"], ha >= hb))
    return np.array(rows)


def test_analytic_thresholds_dominate_bootstrap(circle):
    rows = _null_thresholds(circle)
    assert rows[:, 0].mean() >= 0.95
    assert rows[:, 2].mean() >= 0.95
    # The NN analytic threshold exceeds the statistic ceiling 2R, so it
    # dominates any bootstrap threshold, which is at most 2R.
    assert nn_threshold(100, 0.05) > 2.0


@pytest.mark.xfail(strict=True, reason="with unit constants the Step II bound is below the bootstrap quantile")
def test_step2_analytic_threshold_dominates_bootstrap(circle):
    rows = _null_thresholds(circle, trials=10)
    assert rows[:, 1].mean() >= 0.95
