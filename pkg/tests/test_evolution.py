import math
import warnings

import numpy as np
import pytest

from kswave import field_ops as fo
from kswave.errors import CFLError, ParameterError, PositivityError
from kswave.evolution import (NCStepper, NPStepper, PerturbationStepper, SchemeConfig, _DiffusionSolve,
                              config_hash, run, step_perturbation, write_run_meta)
from kswave.field_ops import PerturbState, Representation, StripGrid


def bump(grid, a=1e-3, k=1):
    Z, Y = grid.mesh()
    f = a * np.exp(-Z**2) * (1 + np.cos(2 * math.pi * k * Y / grid.lam))
    return PerturbState(grid, 0.0, f, f.copy(), f.copy())


def test_scheme_config_validation():
    assert SchemeConfig(dt=0.1, t_end=1.0).n_steps == 10
    assert SchemeConfig(dt=0.3, t_end=1.0).n_steps == 4
    for bad in (dict(dt=0.0, t_end=1.0), dict(dt=0.1, t_end=-1.0), dict(dt=0.1, t_end=1.0, theta=1.5),
                dict(dt=0.1, t_end=1.0, snapshot_stride=0), dict(dt=0.1, t_end=1.0, np_nonlinear_form="x")):
        with pytest.raises(ParameterError):
            SchemeConfig(**bad)


def test_config_hash_is_git_blob_hash():
    assert config_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert config_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_diffusion_solve_y_mode():
    g = StripGrid(2.0, 33, 1.0, 16)
    Z, Y = g.mesh()
    k = 2 * math.pi * 2
    m = 3
    # discrete Dirichlet eigenmode in z times a Fourier mode in y: both factors are scalings
    f = np.sin(m * math.pi * (Z + g.L_z) / (2 * g.L_z)) * np.cos(k * Y)
    solve = _DiffusionSolve(g, nu=0.5, theta=1.0)
    dt = 0.1
    x = solve(f, dt)
    a = 1.0 * dt * 0.5
    sig_y = (2 * math.cos(k * g.dy) - 2) / g.dy**2
    sig_z = (2 * math.cos(m * math.pi * g.dz / (2 * g.L_z)) - 2) / g.dz**2
    expected = f / ((1 - a * sig_z) * (1 - a * sig_y))
    assert np.allclose(x, expected, rtol=0, atol=1e-13)
    assert not x[0].any() and not x[-1].any()


def test_zero_perturbation_is_fixed(strip, strip_wave):
    tr = run(PerturbState.zero(strip), strip_wave, 0.05, 1.0, SchemeConfig(dt=0.01, t_end=0.2, snapshot_stride=5))
    assert tr.error is None and tr.drift == 0.0
    assert tr.report.column("M").max() == 0.0
    assert tr.steps == 20


def test_cfl_violation(strip, strip_wave):
    tr = run(bump(strip), strip_wave, 0.05, 1.0, SchemeConfig(dt=1.0, t_end=2.0))
    assert tr.error is not None and not tr.blowup
    with pytest.raises(CFLError):
        run(bump(strip), strip_wave, 0.05, 1.0, SchemeConfig(dt=1.0, t_end=2.0), raise_errors=True)


def test_adaptive_mode_clips_dt(strip, strip_wave):
    cfg = SchemeConfig(dt=1.0, t_end=0.5, adaptive=True)
    tr = run(bump(strip), strip_wave, 0.05, 1.0, cfg, keep_snapshots=False)
    assert tr.error is None and tr.steps > 1
    assert tr.final.t == pytest.approx(0.5)


def test_np_positivity_tripwire(strip, strip_wave):
    Z, _ = strip.mesh()
    big = PerturbState(strip, 0.0, 5.0 * np.exp(-Z**2), strip.zeros(), strip.zeros())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        state = fo.primitive_from_wave(strip_wave, strip, Representation.NP, big)
    with pytest.raises(PositivityError):
        run(state, strip_wave, 0.05, 1.0, SchemeConfig(dt=0.001, t_end=0.01), raise_errors=True)


def test_blowup_recorded_and_error_file(tmp_path, strip, strip_wave):
    Z, _ = strip.mesh()
    big = PerturbState(strip, 0.0, 5.0 * np.exp(-Z**2), strip.zeros(), strip.zeros())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        state = fo.primitive_from_wave(strip_wave, strip, Representation.NP, big)
    tr = run(state, strip_wave, 0.05, 1.0, SchemeConfig(dt=0.001, t_end=0.01), out_dir=tmp_path)
    assert tr.blowup and tr.error_step is not None
    assert (tmp_path / "ERROR").read_text().startswith("PositivityError")
    assert (tmp_path / "run.meta").exists() and (tmp_path / "series.csv").exists()


def test_run_directory_layout(tmp_path, strip, strip_wave):
    cfg = SchemeConfig(dt=0.01, t_end=0.1, snapshot_stride=2, field_stride=2)
    run(bump(strip), strip_wave, 0.05, 1.0, cfg, out_dir=tmp_path, meta={"seed": 3})
    snaps = sorted(p.name for p in tmp_path.glob("snap_*.fld"))
    assert snaps == ["snap_000000.fld", "snap_000004.fld", "snap_000008.fld"]
    meta = (tmp_path / "run.meta").read_text()
    assert "seed = 3" in meta and "config_hash" in meta
    assert (tmp_path / "energy.csv").read_text().count("\n") == 7  # header + t = 0, 0.02, ..., 0.1


def test_determinism(tmp_path, strip, strip_wave):
    cfg = SchemeConfig(dt=0.01, t_end=0.2, snapshot_stride=5)
    for d in ("a", "b"):
        run(bump(strip), strip_wave, 0.05, 1.0, cfg, out_dir=tmp_path / d)
    assert (tmp_path / "a" / "energy.csv").read_bytes() == (tmp_path / "b" / "energy.csv").read_bytes()


def test_single_step_helpers_keep_history(strip, strip_wave):
    cfg = SchemeConfig(dt=0.01, t_end=1.0)
    stepper = PerturbationStepper(strip, strip_wave, 0.05, 1.0, cfg)
    st = bump(strip)
    a = step_perturbation(st, strip_wave, 0.05, 1.0, cfg, stepper=stepper)
    b = step_perturbation(a, strip_wave, 0.05, 1.0, cfg, stepper=stepper)
    assert b.t == pytest.approx(0.02) and stepper.steps == 2


def test_perturbation_and_np_agree_for_small_data(strip, strip_wave):
    cfg = SchemeConfig(dt=0.01, t_end=0.5, snapshot_stride=50)
    pert = bump(strip, a=1e-4)
    tp = run(pert, strip_wave, 0.05, 1.0, cfg)
    npz = fo.primitive_from_wave(strip_wave, strip, Representation.NP, pert)
    tn = run(npz, strip_wave, 0.05, 1.0, cfg)
    n_pert = strip_wave.N[:, None] + fo.div(tp.final.phi, strip)
    # agreement limited by the steady-state drift of the primitive form on this grid
    assert np.max(np.abs(n_pert - tn.final.n)) < 2 * tn.n_drift + 1e-6


@pytest.mark.parametrize("cls", [NPStepper, NCStepper, PerturbationStepper])
def test_stepper_representation(cls, strip, strip_wave):
    st = cls(strip, strip_wave, 0.05, 1.0, SchemeConfig(dt=0.01, t_end=0.1))
    assert st.representation in tuple(Representation)


def test_write_run_meta(tmp_path):
    path = write_run_meta(tmp_path, {"b": 1, "a": "x"})
    lines = path.read_text().splitlines()
    assert lines[:2] == ['a = "x"', "b = 1"]
    assert lines[2] == f'config_hash = "{config_hash(chr(10).join(lines[:2]))}"'
