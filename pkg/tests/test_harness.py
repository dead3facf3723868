import csv
import json
import math
import os
import subprocess
import sys
from dataclasses import replace

import mpmath
import pytest

from manifold_twosample.cli import OUT_ENV, main, ot_selftest
from manifold_twosample.errors import ConfigError
from manifold_twosample.harness import (
    CSV_HEADER,
    Scenario,
    clopper_pearson,
    estimate_risks,
    load_config,
    power_curve,
    trial_seed,
)

HEADER = "scenario,test,n,eta,trials,rejections,rate,ci_lo,ci_hi,mean_stat,mean_threshold,seed"

NULL_CONFIG = """\
[DEFAULT]
manifold = circle
ambient_dim = 6
n = 30
trials = 4
n_boot = 50

[null-two-step]
test = two-step
p = uniform-circle
q = uniform-circle
"""


def write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_clopper_pearson_reference():
    lo, hi = clopper_pearson(10, 200)
    assert lo == pytest.approx(0.0242, abs=1e-4)
    assert hi == pytest.approx(0.0901, abs=1e-4)
    # Each bound puts exactly 2.5% binomial tail mass beyond the observed count.
    tail_hi = sum(mpmath.binomial(200, j) * mpmath.mpf(hi) ** j * (1 - mpmath.mpf(hi)) ** (200 - j) for j in range(11))
    tail_lo = 1 - sum(mpmath.binomial(200, j) * mpmath.mpf(lo) ** j * (1 - mpmath.mpf(lo)) ** (200 - j) for j in range(10))
    assert float(tail_hi) == pytest.approx(0.025, abs=1e-10)
    assert float(tail_lo) == pytest.approx(0.025, abs=1e-10)
    assert clopper_pearson(0, 20)[0] == 0.0
    assert clopper_pearson(20, 20)[1] == 1.0
    with pytest.raises(ValueError):
        clopper_pearson(3, 2)


def test_forced_thresholds():
    base = Scenario(name="s", q="von-mises-circle(kappa=1.0)", n=20, trials=5, threshold="fixed", threshold_value=0.0)
    never = estimate_risks(replace(base, threshold_value=math.inf))
    assert never.rejection_rate == 0.0 and never.ci_lo == 0.0 <= never.ci_hi
    always = estimate_risks(replace(base, threshold_value=0.0))
    assert always.rejection_rate == 1.0 and always.rejections == 5
    assert always.type2_risk == 0.0


def test_risk_estimate_invariants():
    est = estimate_risks(Scenario(n=30, trials=12, n_boot=50, seed=3))
    assert est.ci_lo <= est.rejection_rate <= est.ci_hi
    assert est.rejection_rate * est.trials == est.rejections


def test_trial_seeds_distinct():
    seeds = {trial_seed(7, t) for t in range(100_000)}
    assert len(seeds) == 100_000


def test_scenario_validation_paths():
    cases = {
        "test": dict(test="bogus"),
        "trials": dict(trials=0),
        "eta": dict(eta=0.6),
        "q": dict(null=True, q="von-mises-circle(kappa=1.0)"),
        "manifold": dict(manifold="torus"),
        "p": dict(p="gaussian"),
    }
    for field, kwargs in cases.items():
        with pytest.raises(ConfigError) as err:
            Scenario(name="x", **kwargs)
        assert f"x.{field}" in str(err.value)


def test_power_curve_grid_checks():
    base = Scenario(name="pc", n=20, trials=3, n_boot=50)
    with pytest.raises(ConfigError, match="pc.n_grid"):
        power_curve(base, [40, 20])
    with pytest.raises(ConfigError):
        power_curve(base, [])
    rows = power_curve(base, [20])
    assert len(rows) == 1 and rows[0][0] == 20


def test_power_curve_decays_type2_risk():
    base = Scenario(name="pc", q="von-mises-circle(kappa=1.0)", trials=60, n_boot=50, seed=11)
    (_, small), (_, large) = power_curve(base, [20, 120])
    assert large.type2_risk <= small.type2_risk
    assert large.ci_hi >= small.ci_lo


def test_threaded_estimate_matches_serial():
    s = Scenario(n=30, trials=6, n_boot=50, seed=5)
    assert estimate_risks(s, threads=2) == estimate_risks(s, threads=1)


def test_config_parsing(tmp_path):
    path = write(tmp_path, NULL_CONFIG + "\n[curve]\nq = von-mises-circle(kappa=2.0)\nn_grid = 10, 20\n")
    (a, ga), (b, gb) = load_config(path)
    assert a.name == "null-two-step" and a.n == 30 and a.n_boot == 50 and ga is None
    assert b.q == "von-mises-circle(kappa=2.0)" and gb == [10, 20]
    assert load_config(path, {"seed": 9, "trials": None})[0][0].seed == 9
    with pytest.raises(ConfigError, match="null-two-step.colour"):
        load_config(write(tmp_path, NULL_CONFIG + "colour = red\n", "bad.ini"))


def test_run_writes_exact_header_and_json(tmp_path):
    out = tmp_path / "out"
    assert main(["calibrate", write(tmp_path, NULL_CONFIG), "--out", str(out)]) == 0
    lines = (out / "calibration.csv").read_text().splitlines()
    assert lines[0] == HEADER == ",".join(CSV_HEADER)
    assert len(lines) == 2
    row = next(csv.DictReader(lines))
    assert row["scenario"] == "null-two-step" and row["trials"] == "4"
    doc = json.loads((out / "null-two-step.json").read_text())
    assert doc["scenario"]["null"] is True and len(doc["estimates"]) == 1


def test_seed_override_is_byte_deterministic(tmp_path):
    cfg = write(tmp_path, NULL_CONFIG)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["run", cfg, "--out", str(out), "--seed", "7"]) == 0
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b",7\n" in outs[0]


def test_numbers_use_17_significant_digits(tmp_path):
    out = tmp_path / "o"
    assert main(["run", write(tmp_path, NULL_CONFIG), "--out", str(out)]) == 0
    row = (out / "results.csv").read_text().splitlines()[1].split(",")
    assert row[3] == "%.17g" % 0.05


def test_exit_codes(tmp_path, capsys):
    bad = NULL_CONFIG.replace("test = two-step", "test = bogus")
    assert main(["run", write(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert "null-two-step.test" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "o")]) == 2
    # A sample too small for any bootstrap diversity still runs; an impossible
    # output path is a runtime failure.
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", write(tmp_path, NULL_CONFIG), "--out", str(blocker / "sub")]) == 3


def test_power_curve_command(tmp_path):
    cfg = write(tmp_path, NULL_CONFIG + "n_grid = 10 20 30\ntrials = 2\n")
    out = tmp_path / "pc"
    assert main(["power-curve", cfg, "--out", str(out)]) == 0
    lines = (out / "power_curve.csv").read_text().splitlines()
    assert [line.split(",")[2] for line in lines[1:]] == ["10", "20", "30"]
    cfg = write(tmp_path, NULL_CONFIG + "n_grid = 30 20\n", "dec.ini")
    assert main(["power-curve", cfg, "--out", str(out)]) == 2


def test_output_directory_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env-out"
    monkeypatch.setenv(OUT_ENV, str(target))
    assert main(["run", write(tmp_path, NULL_CONFIG), "--trials", "1"]) == 0
    assert (target / "results.csv").exists()


def test_ot_selftest(capsys):
    assert ot_selftest(50, 3) == 0
    assert "50 instances, 0 mismatches" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    env = dict(os.environ, **{OUT_ENV: str(tmp_path)})
    proc = subprocess.run(
        [sys.executable, "-m", "manifold_twosample", "ot-selftest", "--trials", "20"],
        capture_output=True, text=True, env=env, check=False,
    )
    assert proc.returncode == 0 and "0 mismatches" in proc.stdout
