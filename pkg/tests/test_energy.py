import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kswave import energy
from kswave import field_ops as fo
from kswave.errors import FormatError, ParameterError
from kswave.field_ops import PerturbState, StripGrid
from kswave.wave_profile import WaveParams, explicit_wave_eps0, uniform_grid

# frozen constants
C_P = 0.15915494309189535  # 1 / (2 pi)
LAMBDA_MAX_S1 = 0.39269908169872414  # pi / 8


def test_constants():
    assert energy.POINCARE_CONSTANT == pytest.approx(C_P, rel=1e-16)
    assert energy.lambda_max(1.0) == pytest.approx(LAMBDA_MAX_S1, rel=1e-15)
    assert energy.lambda_max(2.0) == pytest.approx(LAMBDA_MAX_S1 / 2, rel=1e-15)
    assert energy.smallness_value(1.0, 0.3) == pytest.approx(0.3 * C_P, rel=1e-15)
    assert energy.smallness_value(1.0, energy.lambda_max(1.0)) == pytest.approx(1 / 16, rel=1e-15)


@pytest.mark.parametrize("scheme", ["fd", "spectral"])
def test_sobolev_norm_of_y_mode(scheme):
    # f = cos(k y), constant in z: ||f||^2_{H^K} = L_z lam sum_j sigma^(2j) with sigma the discrete symbol
    g = StripGrid(2.0, 33, 0.5, 16, scheme)
    _, Y = g.mesh()
    k = 2 * math.pi * 2 / g.lam
    f = np.cos(k * Y)
    if scheme == "spectral":
        s1, s2 = k, k * k
    else:
        s1 = math.sin(k * g.dy) / g.dy
        s2 = (2 - 2 * math.cos(k * g.dy)) / g.dy**2
    base = 2.0 * 2.0 * g.lam / 2.0  # int cos^2 over [-2, 2] x [0, lam)
    # j-th y-derivative magnitudes: 1, s1, s2, s1*s2 for fd compositions
    expect = {0: base, 1: base * (1 + s1**2), 2: base * (1 + s1**2 + s2**2),
              3: base * (1 + s1**2 + s2**2 + (s1 * s2) ** 2)}
    for K, val in expect.items():
        assert energy.weighted_sobolev_norm(f, K, g) == pytest.approx(val, rel=1e-12)
    assert energy.weighted_sobolev_norm(f, 2, g, weight=np.full(g.nz, 3.0)) == pytest.approx(3 * expect[2], rel=1e-12)


def test_norm_order_bounds():
    g = StripGrid(2.0, 33, 0.5, 16)
    with pytest.raises(ParameterError):
        energy.weighted_sobolev_norm(np.zeros(g.shape), 4, g)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-6, 1e3), st.integers(0, 3))
def test_norm_homogeneous_of_degree_two(a, k):
    g = StripGrid(2.0, 33, 0.5, 16)
    Z, Y = g.mesh()
    f = np.exp(-(Z**2)) * (1 + np.sin(2 * math.pi * Y / g.lam))
    n1 = energy.weighted_sobolev_norm(f, k, g)
    assert energy.weighted_sobolev_norm(a * f, k, g) == pytest.approx(a * a * n1, rel=1e-12)


def test_fourier_index_norm_vs_physical():
    g = StripGrid(2.0, 33, 0.5, 16, "spectral")
    _, Y = g.mesh()
    f = np.cos(2 * math.pi * Y / g.lam)
    # integer index: mode 1 contributes 1 per derivative order
    assert energy.fourier_sobolev_norm(f, 3, g) == pytest.approx(4 * energy.weighted_sobolev_norm(f, 0, g), rel=1e-12)
    assert energy.norm_equivalence_factor(2 * math.pi, 3) == 1.0


def test_poincare_ratio_oracles():
    lam = 0.3
    y = np.arange(64) * lam / 64
    assert energy.poincare_ratio(np.sin(2 * math.pi * y / lam), lam) == pytest.approx(C_P, abs=1e-14)
    assert energy.poincare_ratio(np.sin(6 * math.pi * y / lam), lam) == pytest.approx(C_P / 3, abs=1e-14)
    assert energy.poincare_ratio(np.full(64, 7.0), lam) == 0.0


def test_poincare_battery():
    res = energy.poincare_check(0.3, 32, n_samples=100, seed=0, s=1.0)
    assert res.passed
    assert res.worst_ratio <= C_P + 1e-6
    assert abs(res.extremal_ratio - C_P) <= 1e-6
    assert res.admissible and res.lambda_max == pytest.approx(LAMBDA_MAX_S1)
    assert "PASS" in res.to_text()
    assert not energy.poincare_check(0.5, 32, s=1.0).admissible


def test_coefficients_closed_form_eps0():
    # eps = 0: N = s^2 sigma(-sz), N' = -s^3 sigma(-sz) sigma(sz), P' = s^2 sigma(-sz) sigma(sz)
    s = 1.0
    w = explicit_wave_eps0(s, uniform_grid(15.0, dz=0.01))
    sig_m = 1 / (1 + np.exp(w.z * s))
    sig_p = 1 - sig_m
    coef = energy.dissipation_coefficients(w)
    N = s * s * sig_m
    dN = -s**3 * sig_m * sig_p
    assert np.allclose(coef["a"], dN**2 / N**3, rtol=1e-12)
    assert np.allclose(coef["b"], s * s * sig_m * sig_p / N, rtol=1e-12)
    assert min(energy.coefficient_positivity(w).values()) > 0


def test_coefficients_positive_on_long_domain():
    # tails where s + P rounds to zero must still give positive coefficients
    g = StripGrid(120.0, 3073, 0.3, 32)
    wave = fo.wave_on_grid(WaveParams(1.0, 0.05), g)
    mins = energy.coefficient_positivity(wave)
    assert all(v > 0 for v in mins.values())


def test_weight_field(strip, strip_wave):
    w = energy.WeightField.from_wave(strip_wave, strip)
    assert w.check(strip_wave)
    assert w.w[0] == pytest.approx(1 / 1.05, rel=1e-6)


def test_m0_quadratic_scaling(strip, strip_wave):
    Z, Y = strip.mesh()
    f = np.exp(-Z**2) * (1 + np.cos(2 * math.pi * Y / strip.lam))
    w = energy.WeightField.from_wave(strip_wave, strip)
    m1 = energy.m_functional(energy.snapshot_norms(PerturbState(strip, 0, f, f, f), w, 0.05))
    m2 = energy.m_functional(energy.snapshot_norms(PerturbState(strip, 0, 2 * f, 2 * f, 2 * f), w, 0.05))
    assert m2 == pytest.approx(4 * m1, rel=1e-13)
    assert energy.m_functional(energy.snapshot_norms(PerturbState.zero(strip), w, 0.05)) == 0.0


def _norms(rates, m=1.0):
    return {"phi_H3w": m, "psi_H3": 0.0, "gradpsi_H2w": 0.0, "diss_phi_rate": rates[0],
            "diss_psi_rate": rates[1], "diss_eps_psi4_rate": rates[2], "dy_n_L2": 0.0, "dy_psi_L2": 0.0}


def test_accumulator_trapezoid_exact_for_linear_rates():
    rep = energy.EnergyReport(0.05)
    for t in np.linspace(0, 2, 9):
        energy.dissipation_accumulate(rep, t, _norms((1 + t, 2.0, 3 * t), m=1 + math.sin(t)))
    last = rep.rows[-1]
    assert last["diss_phi"] == pytest.approx(4.0, rel=1e-14)  # int_0^2 (1+t)
    assert last["diss_psi"] == pytest.approx(4.0, rel=1e-14)
    assert last["diss_eps_psi4"] == pytest.approx(6.0, rel=1e-14)
    M = rep.column("M")
    assert np.all(np.diff(M) >= 0) and M[-1] == pytest.approx(1 + math.sin(1.5), rel=1e-15)
    with pytest.raises(ParameterError):
        energy.dissipation_accumulate(rep, 2.0, _norms((0, 0, 0)))


def test_big_m():
    assert np.array_equal(energy.big_m([1.0, 3.0, 2.0, 5.0]), [1.0, 3.0, 3.0, 5.0])


def test_report_csv_roundtrip(tmp_path):
    rep = energy.EnergyReport(0.05)
    for t in (0.0, 0.1, 0.2):
        energy.dissipation_accumulate(rep, t, _norms((1 / 3, 0.1, 0.2)), {"lem31_a": math.pi})
    path = rep.to_csv(tmp_path / "e.csv")
    assert path.read_text().splitlines()[0] == ",".join(energy.ENERGY_COLUMNS)
    back = energy.EnergyReport.from_csv(path)
    assert back.rows == rep.rows
    (tmp_path / "bad.csv").write_text("t,M\n0,1\n")
    with pytest.raises(FormatError):
        energy.EnergyReport.from_csv(tmp_path / "bad.csv")


def test_fit_decay_rate():
    t = np.linspace(0, 5, 51)
    assert energy.fit_decay_rate(t, 3 * np.exp(-2 * t)) == pytest.approx(2.0, rel=1e-12)
    assert math.isnan(energy.fit_decay_rate(t[:1], [1.0]))


def test_tracker_and_y_mode_decay(strip, strip_wave):
    Z, Y = strip.mesh()
    f = 1e-3 * np.exp(-Z**2) * np.cos(2 * math.pi * Y / strip.lam)
    states = [PerturbState(strip, t, np.exp(-t) * f, np.exp(-t) * f, np.exp(-t) * f) for t in (0.0, 0.5, 1.0)]
    rep = energy.evaluate_trajectory(states, strip_wave)
    assert len(rep) == 3
    assert rep.buffer_violation < 1e-30
    dec = energy.y_mode_decay(states)
    assert np.allclose(dec["dy_n_L2"], rep.column("dy_n_L2"), rtol=1e-14)
    assert dec["dy_psi_L2"][2] == pytest.approx(np.exp(-2) * dec["dy_psi_L2"][0], rel=1e-12)
    assert rep.column("lem31_a")[0] > 0
