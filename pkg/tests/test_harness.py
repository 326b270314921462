import csv
import json
import math

import numpy as np
import pytest

from kswave import energy
from kswave.errors import ConfigError
from kswave.field_ops import PerturbState
from kswave.harness import (ExperimentConfig, build_initial_perturbation, config_from_dict, fit_order,
                            initial_m, load_config, refine, run_experiment, sweep, sweep_points)
from kswave.snapshot_io import write_field_snapshot

FAST = dict(t_end=0.2, dt=0.01, snapshot_stride=5)


def test_load_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(amplitude=2e-3, lam=0.25, family="y_mode", y_mode=2, sweep_eps=[0.1, 0.05])
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    assert "lambda = 0.25" in path.read_text()
    assert load_config(path) == cfg


@pytest.mark.parametrize("raw, msg", [({"bogus": 1}, "unknown"), ({"nz": 1.5}, "integer"),
                                      ({"s": "fast"}, "number"), ({"grid": {"nz": 3}}, "nested"),
                                      ({"adaptive": 1}, "true or false"), ({"sweep_eps": 0.1}, "list")])
def test_config_rejects(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("s = = 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_smallness_advisory():
    assert ExperimentConfig(lam=0.3).validate() == []
    adv = ExperimentConfig(lam=0.5).validate()
    assert len(adv) == 1 and "1/16" in adv[0]
    with pytest.raises(ConfigError):
        ExperimentConfig(lam=0.5).validate(strict=True)


@pytest.mark.parametrize("bad", [dict(family="square"), dict(formulation="both"), dict(nz=4),
                                 dict(eps=0.9), dict(width=0.0), dict(family="custom_file")])
def test_validate_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad).validate()


def test_initial_families(strip, strip_wave):
    zero = build_initial_perturbation(ExperimentConfig(amplitude=0.0), strip)
    assert initial_m(zero, strip_wave) == 0.0
    planar = build_initial_perturbation(ExperimentConfig(family="y_mode", y_mode=0), strip)
    assert np.all(planar.psi == planar.psi[:, :1])
    a = build_initial_perturbation(ExperimentConfig(family="y_mode", y_mode=1, amplitude=1e-3), strip)
    b = build_initial_perturbation(ExperimentConfig(family="y_mode", y_mode=1, amplitude=2e-3), strip)
    assert initial_m(b, strip_wave) == pytest.approx(4 * initial_m(a, strip_wave), rel=1e-13)
    g = build_initial_perturbation(ExperimentConfig(family="gaussian_bump", y_mode=1), strip)
    assert abs(g.psi.mean()) < 1e-12 * np.abs(g.psi).max()


def test_support_violation(strip):
    with pytest.raises(ConfigError, match="buffer"):
        build_initial_perturbation(ExperimentConfig(center=18.0), strip)


def test_custom_file_family(tmp_path, strip):
    Z, _ = strip.mesh()
    f = np.exp(-Z**2)
    write_field_snapshot(tmp_path / "init.fld", PerturbState(strip, 0.0, f, 2 * f, 3 * f))
    st = build_initial_perturbation(ExperimentConfig(family="custom_file", custom_file=str(tmp_path / "init.fld"),
                                                     amplitude=0.5), strip)
    assert np.array_equal(st.psi, 1.5 * f)


def test_zero_amplitude_run(tmp_path):
    res = run_experiment(ExperimentConfig(amplitude=0.0, **FAST), out_dir=tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["M0"] == 0.0 and s["sup_M"] == 0.0
    assert all(s["suites"].values()) and res.suites_passed
    assert not s["blowup"]


def test_summary_c0_recomputable_from_csv(tmp_path):
    run_experiment(ExperimentConfig(amplitude=1e-3, **FAST), out_dir=tmp_path)
    s = json.loads((tmp_path / "summary.json").read_text())
    rep = energy.EnergyReport.from_csv(tmp_path / "energy.csv")
    M = rep.column("M")
    assert s["C0_empirical"] == M.max() / M[0]
    assert s["M0"] == M[0]
    for k in ("diss_phi", "diss_psi", "diss_eps_psi4"):
        assert s["accumulators_over_M0"][k] == rep.rows[-1][k] / M[0]


def test_determinism(tmp_path):
    cfg = ExperimentConfig(amplitude=1e-3, family="y_mode", y_mode=1, **FAST)
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "energy.csv").read_bytes() == (tmp_path / "b" / "energy.csv").read_bytes()


def test_all_three_cross_differences(tmp_path):
    res = run_experiment(ExperimentConfig(formulation="all_three", amplitude=1e-3, t_end=0.3, dt=0.01),
                         out_dir=tmp_path)
    s = res.summary
    assert set(s["cross_max"]) == {"perturbation-primitive_np", "perturbation-primitive_nc",
                                   "primitive_np-primitive_nc"}
    assert s["cross_max"]["primitive_np-primitive_nc"] <= s["cross_threshold"]
    assert s["suites"]["cross_formulation"]
    with open(tmp_path / "cross.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t" and len(rows) == 1 + 4  # t = 0, 0.1, 0.2, 0.3
    for sub in ("perturbation", "primitive_np", "primitive_nc"):
        assert (tmp_path / sub / "run.meta").exists()


def test_failed_run_reported(tmp_path):
    res = run_experiment(ExperimentConfig(dt=1.0, t_end=2.0), out_dir=tmp_path)
    assert not res.suites_passed and not res.summary["suites"]["completed"]
    assert (tmp_path / "ERROR").exists()


def test_refine():
    cfg = refine(ExperimentConfig(nz=256, dt=0.01, snapshot_stride=10), 2)
    assert (cfg.nz, cfg.dt, cfg.snapshot_stride) == (1021, 0.0025, 40)


def test_sweep_points():
    pts = sweep_points(ExperimentConfig(sweep_eps=[0.1, 0.05], sweep_lambda=[0.3, 0.5]))
    assert pts == [{"eps": 0.1, "lambda": 0.3}, {"eps": 0.1, "lambda": 0.5},
                   {"eps": 0.05, "lambda": 0.3}, {"eps": 0.05, "lambda": 0.5}]
    with pytest.raises(ConfigError):
        sweep_points(ExperimentConfig())
    with pytest.raises(ConfigError):
        sweep_points(ExperimentConfig(), {"speed": [1]})


def test_fit_order():
    h = np.array([0.4, 0.2, 0.1])
    assert fit_order(h, 3 * h**2) == pytest.approx(2.0, rel=1e-12)
    assert math.isnan(fit_order([0.1], [1.0]))


def test_refinement_sweep_order_eps0(tmp_path):
    cfg = ExperimentConfig(eps=0.0, formulation="primitive_np", amplitude=0.0, nz=129, t_end=0.5, dt=0.01,
                           sweep_refinement=[0, 1, 2])
    result = sweep(cfg, out_dir=tmp_path)
    assert result["order_fit"] >= 1.9
    assert json.loads((tmp_path / "order_fit.json").read_text())["drift_order"] == result["order_fit"]


def test_lambda_sweep_advisory_flips_and_isolation(tmp_path):
    cfg = ExperimentConfig(amplitude=1e-3, **FAST)
    result = sweep(cfg, out_dir=tmp_path, axes={"lambda": [0.3, 0.5], "eps": [0.05, 0.9]}, workers=2)
    rows = {(r["lambda"], r["eps"]): r for r in result["rows"]}
    assert rows[(0.3, 0.05)]["advisory"] is False and rows[(0.5, 0.05)]["advisory"] is True
    assert rows[(0.3, 0.9)]["status"] == "error" and "ConfigError" in rows[(0.3, 0.9)]["error"]
    assert rows[(0.3, 0.05)]["status"] == "ok"
    assert (tmp_path / "point_000" / "summary.json").exists()
    with open(tmp_path / "sweep.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 4 and {r["status"] for r in table} == {"ok", "error"}


def test_eps_sweep_reports_decay_rates(tmp_path):
    cfg = ExperimentConfig(amplitude=1e-3, t_end=0.5, dt=0.01, snapshot_stride=5)
    result = sweep(cfg, out_dir=tmp_path, axes={"eps": [0.2, 0.1]})
    for r in result["rows"]:
        assert r["status"] == "ok" and np.isfinite(r["gradpsi_decay_rate"])
