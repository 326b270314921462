"""Weighted Sobolev norms and the time series built from them.

The weight is w(z) = 1/N(z).  Norms sum trapezoid/rectangle quadratures of
every mixed difference d_z^i d_y^j with i + j <= k, using the stencils of
:mod:`kswave.field_ops`.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import field_ops as fo
from .errors import FormatError, ParameterError
from .field_ops import PerturbState, StripGrid
from .wave_profile import WaveProfile

POINCARE_CONSTANT = 1.0 / (2.0 * math.pi)
SMALLNESS_BOUND = 1.0 / 16.0

ENERGY_COLUMNS = (
    "t", "phi_H3w", "psi_H3", "gradpsi_H2w", "M",
    "diss_phi", "diss_psi", "diss_eps_psi4",
    "lem31_a", "lem31_b", "lem31_c", "eps_P_psi2",
    "dy_n_L2", "dy_psi_L2",
)


@dataclass(frozen=True, eq=False)
class WeightField:
    grid: StripGrid
    w: np.ndarray

    @classmethod
    def from_wave(cls, wave: WaveProfile, grid: StripGrid) -> "WeightField":
        fo._check_wave(wave, grid)
        return cls(grid, 1.0 / wave.N)

    def check(self, wave: WaveProfile, tol: float = 1e-9) -> bool:
        floor = 1.0 / wave.params.n_minus
        return bool(np.all(self.w >= floor * (1 - tol)) and np.all(np.diff(self.w) >= -tol * self.w[1:])
                    and np.allclose(self.w * wave.N, 1.0, rtol=1e-14, atol=0))

    @property
    def column(self) -> np.ndarray:
        return self.w[:, None]


def _components(f):
    f = np.asarray(f, dtype=float)
    return [f] if f.ndim == 2 else list(f)


def _weights(grid, weight):
    q = grid.quadrature_weights()
    if weight is None:
        return q
    w = weight.w if isinstance(weight, WeightField) else np.asarray(weight, dtype=float)
    return q * (w[:, None] if w.ndim == 1 else w)


def derivative_table(f, grid: StripGrid, order: int) -> dict[tuple[int, int], np.ndarray]:
    """All mixed differences d_z^i d_y^j f with i + j <= order (f scalar)."""
    table = {}
    for i in range(order + 1):
        base = fo.partial(f, grid, i, 0)
        for j in range(order + 1 - i):
            table[(i, j)] = base if j == 0 else fo.partial(base, grid, 0, j)
    return table


def order_norms(f, grid: StripGrid, max_order: int, weight=None) -> np.ndarray:
    """Array whose entry l is sum_{i+j=l} int |d_z^i d_y^j f|^2 w (components summed)."""
    q = _weights(grid, weight)
    out = np.zeros(max_order + 1)
    for comp in _components(f):
        for (i, j), d in derivative_table(comp, grid, max_order).items():
            out[i + j] += float(np.sum(d * d * q))
    return out


def weighted_sobolev_norm(f, k: int, grid: StripGrid, weight=None) -> float:
    """Squared H^k_w norm (H^k when ``weight`` is None); vector fields sum their components."""
    if not 0 <= k <= 3:
        raise ParameterError(f"norm order must be 0..3, got {k}")
    for comp in _components(f):
        fo._check(comp, grid)
    return float(order_norms(f, grid, k, weight).sum())


def fourier_sobolev_norm(f, k: int, grid: StripGrid, weight=None) -> float:
    """Squared norm with integer Fourier index n**(2j) for the y-derivatives."""
    if not 0 <= k <= 3:
        raise ParameterError(f"norm order must be 0..3, got {k}")
    q = _weights(grid, weight)[:, 0] / grid.dy * grid.lam
    idx = np.fft.fftfreq(grid.ny, d=1.0 / grid.ny)
    total = 0.0
    for comp in _components(f):
        for i in range(k + 1):
            coef = np.fft.fft(fo.partial(comp, grid, i, 0), axis=1) / grid.ny
            power = np.abs(coef) ** 2
            for j in range(k + 1 - i):
                total += float(np.sum(q[:, None] * power * idx ** (2 * j)))
    return total


def norm_equivalence_factor(lam: float, k: int) -> float:
    r = lam / (2.0 * math.pi)
    return max(1.0, r ** (2 * k), r ** (-2 * k))


# --- localized integrals -------------------------------------------------------------


def dissipation_coefficients(wave: WaveProfile) -> dict[str, np.ndarray]:
    """(N')^2/N^3, P'/N and P N'/N^2 from the reduced ODE at the profile samples."""
    N, P = wave.N, wave.P
    # stored derivatives stay resolved in the tails where s + P rounds to zero
    dN, dP = wave.derivatives()
    return {
        "a": dN**2 / N**3,
        "b": dP / N,
        "c": P * dN / N**2,
        "P_prime": dP,
    }


def coefficient_positivity(wave: WaveProfile) -> dict[str, float]:
    """Minimum over the grid of each coefficient; all must be > 0 for a valid wave."""
    coef = dissipation_coefficients(wave)
    return {k: float(np.min(coef[k])) for k in ("a", "b", "c")}


def lemma_diagnostics(state: PerturbState, wave: WaveProfile) -> dict[str, float]:
    grid = state.grid
    fo._check_wave(wave, grid)
    coef = dissipation_coefficients(wave)
    mins = coefficient_positivity(wave)
    if min(mins.values()) <= 0:
        warnings.warn(f"non-positive dissipation coefficient {mins}: profile corrupted",
                      RuntimeWarning, stacklevel=2)
    phi_sq = state.phi1**2 + state.phi2**2
    return {
        "lem31_a": fo.integrate(coef["a"][:, None] * phi_sq, grid),
        "lem31_b": fo.integrate(coef["b"][:, None] * state.phi1**2, grid),
        "lem31_c": fo.integrate(coef["c"][:, None] * state.phi2**2, grid),
        "eps_P_psi2": wave.eps * fo.integrate(coef["P_prime"][:, None] * state.psi**2, grid),
    }


# --- snapshot evaluation and time series ----------------------------------------------


def snapshot_norms(state: PerturbState, weight: WeightField, eps: float) -> dict[str, float]:
    """Instantaneous norms and dissipation integrands of one perturbation snapshot."""
    grid = state.grid
    phi_w = order_norms(state.phi, grid, 4, weight)
    psi_w = order_norms(state.psi, grid, 4, weight)
    psi = order_norms(state.psi, grid, 3, None)
    gpsi = fo.grad(state.psi, grid)
    gpsi_w = order_norms(gpsi, grid, 2, weight)
    div_phi = fo.div(state.phi, grid)
    return {
        "phi_H3w": float(phi_w[:4].sum()),
        "psi_H3": float(psi.sum()),
        "gradpsi_H2w": float(gpsi_w.sum()),
        "diss_phi_rate": float(phi_w[1:5].sum()),
        "diss_psi_rate": float(psi_w[1:4].sum()),
        "diss_eps_psi4_rate": float(eps * psi_w[4]),
        "dy_n_L2": fo.integrate(fo.d_y(div_phi, grid) ** 2, grid),
        "dy_psi_L2": fo.integrate(fo.d_y(state.psi, grid) ** 2, grid),
    }


def m_functional(norms: dict[str, float]) -> float:
    return norms["phi_H3w"] + norms["psi_H3"] + norms["gradpsi_H2w"]


def big_m(values) -> np.ndarray:
    """Running supremum of the three-norm sum."""
    values = np.asarray(values, dtype=float)
    return np.maximum.accumulate(values) if values.size else values


@dataclass
class EnergyReport:
    """Rows of ``energy.csv`` plus bookkeeping that is not written to the CSV."""

    eps: float
    rows: list[dict[str, float]] = field(default_factory=list)
    max_active_weight: float = 0.0
    buffer_violation: float = 0.0
    _rates: tuple[float, float, float] | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ENERGY_COLUMNS)
            for r in self.rows:
                writer.writerow([format(r[c], ".17g") for c in ENERGY_COLUMNS])
        return path

    @classmethod
    def from_csv(cls, path, eps: float = float("nan")) -> "EnergyReport":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != ENERGY_COLUMNS:
                raise FormatError(f"unexpected energy.csv header {header}")
            rows = [dict(zip(ENERGY_COLUMNS, map(float, line))) for line in reader]
        return cls(eps, rows)


def dissipation_accumulate(report: EnergyReport, t: float, norms: dict[str, float],
                           lemma: dict[str, float] | None = None) -> EnergyReport:
    """Append one snapshot, integrating the dissipation rates by the trapezoid rule in time."""
    rates = (norms["diss_phi_rate"], norms["diss_psi_rate"], norms["diss_eps_psi4_rate"])
    m_now = m_functional(norms)
    if report.rows:
        last = report.rows[-1]
        dt = t - last["t"]
        if not dt > 0:
            raise ParameterError(f"snapshot times must increase: {last['t']} then {t}")
        prev = report._rates
        acc = [last[c] + 0.5 * dt * (a + b) for c, a, b in
               zip(("diss_phi", "diss_psi", "diss_eps_psi4"), prev, rates)]
        m_sup = max(last["M"], m_now)
    else:
        acc = [0.0, 0.0, 0.0]
        m_sup = m_now
    row = {"t": float(t), "phi_H3w": norms["phi_H3w"], "psi_H3": norms["psi_H3"],
           "gradpsi_H2w": norms["gradpsi_H2w"], "M": m_sup,
           "diss_phi": acc[0], "diss_psi": acc[1], "diss_eps_psi4": acc[2],
           "dy_n_L2": norms["dy_n_L2"], "dy_psi_L2": norms["dy_psi_L2"]}
    lemma = lemma or {}
    for key in ("lem31_a", "lem31_b", "lem31_c", "eps_P_psi2"):
        row[key] = float(lemma.get(key, 0.0))
    report.rows.append(row)
    report._rates = rates
    return report


class EnergyTracker:
    """Evaluates snapshots of a perturbation run into an :class:`EnergyReport`."""

    def __init__(self, wave: WaveProfile, grid: StripGrid, buffer_fraction: float = 0.1):
        self.wave = wave
        self.grid = grid
        self.weight = WeightField.from_wave(wave, grid)
        self.buffer_fraction = buffer_fraction
        self.report = EnergyReport(wave.eps)

    def __call__(self, state: PerturbState) -> dict[str, float]:
        norms = snapshot_norms(state, self.weight, self.wave.eps)
        lemma = lemma_diagnostics(state, self.wave)
        dissipation_accumulate(self.report, state.t, norms, lemma)
        self._track_support(state)
        return self.report.rows[-1]

    def _track_support(self, state):
        mags = np.max(np.abs(np.stack([state.phi1, state.phi2, state.psi])), axis=(0, 2))
        peak = float(mags.max())
        if peak > 0:
            active = mags > 1e-14 * peak
            self.report.max_active_weight = max(self.report.max_active_weight,
                                                float(self.weight.w[active].max()))
        self.report.buffer_violation = max(self.report.buffer_violation,
                                           state.buffer_violation(self.buffer_fraction))


def evaluate_trajectory(states, wave: WaveProfile) -> EnergyReport:
    states = list(states)
    if not states:
        return EnergyReport(wave.eps)
    tracker = EnergyTracker(wave, states[0].grid)
    for st in states:
        tracker(st)
    return tracker.report


def y_mode_decay(states, wave: WaveProfile | None = None) -> dict[str, np.ndarray]:
    """Transversal L2 norms ||d_y n||^2 and ||d_y psi||^2 over a list of perturbation snapshots.

    n - N = div(phi) and N is planar, so ``wave`` is not needed for the values.
    """
    t, dn, dpsi = [], [], []
    for st in states:
        g = st.grid
        t.append(st.t)
        dn.append(fo.integrate(fo.d_y(fo.div(st.phi, g), g) ** 2, g))
        dpsi.append(fo.integrate(fo.d_y(st.psi, g) ** 2, g))
    return {"t": np.array(t), "dy_n_L2": np.array(dn), "dy_psi_L2": np.array(dpsi)}


def fit_decay_rate(t, series, start_fraction: float = 0.0) -> float:
    """Exponential rate r in series ~ exp(-r t) by least squares on the positive tail."""
    t = np.asarray(t, dtype=float)
    series = np.asarray(series, dtype=float)
    keep = (t >= t[0] + start_fraction * (t[-1] - t[0])) & (series > 0)
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(t[keep], np.log(series[keep]), 1)[0]
    return float(-slope)


# --- Poincare battery --------------------------------------------------------------------


@dataclass
class PoincareResult:
    lam: float
    ny: int
    worst_ratio: float
    extremal_ratio: float
    c_p: float
    n_samples: int
    passed: bool
    s: float | None = None
    smallness: float | None = None
    admissible: bool | None = None
    lambda_max: float | None = None

    def to_text(self) -> str:
        lines = [
            f"C_p (sharp periodic)      {self.c_p:.15f}",
            f"worst ratio ({self.n_samples} polys)  {self.worst_ratio:.15f}",
            f"first-mode ratio          {self.extremal_ratio:.15f}",
            f"battery                   {'PASS' if self.passed else 'FAIL'}",
        ]
        if self.s is not None:
            lines += [
                f"s*lambda*C_p              {self.smallness:.6g} (bound 1/16 = 0.0625)",
                f"admissible                {self.admissible}",
                f"lambda_max(s={self.s:g})       {self.lambda_max:.6g}",
            ]
        return "\n".join(lines)


def poincare_ratio(f, lam: float) -> float:
    """||f - mean f|| / (lambda ||f'||) for periodic samples, spectral derivative, 0 when f is constant."""
    f = np.asarray(f, dtype=float)
    ny = f.size
    dy = lam / ny
    k = 2.0 * np.pi * np.fft.fftfreq(ny, d=dy)
    sym = 1j * k
    sym[ny // 2] = 0.0
    df = np.real(np.fft.ifft(np.fft.fft(f) * sym))
    dev = math.sqrt(float(np.sum((f - f.mean()) ** 2)) * dy)
    slope = math.sqrt(float(np.sum(df * df)) * dy)
    if dev <= 1e-14 * (1.0 + float(np.max(np.abs(f)))):
        return 0.0
    return dev / (lam * slope)


def lambda_max(s: float, c_p: float = POINCARE_CONSTANT) -> float:
    return SMALLNESS_BOUND / (s * c_p)


def smallness_value(s: float, lam: float, c_p: float = POINCARE_CONSTANT) -> float:
    return s * lam * c_p


def poincare_check(lam: float, ny: int, n_samples: int = 100, seed: int = 0, s: float | None = None,
                   tol: float = 1e-6) -> PoincareResult:
    """Poincare ratio over random trigonometric polynomials up to mode ny/2 - 1 plus the first mode."""
    if ny < 4:
        raise ParameterError("ny must be at least 4")
    rng = np.random.default_rng(seed)
    y = np.arange(ny) * lam / ny
    modes = np.arange(0, ny // 2)
    arg = 2.0 * np.pi * np.outer(modes, y) / lam
    worst = 0.0
    for _ in range(n_samples):
        a = rng.standard_normal(modes.size)
        b = rng.standard_normal(modes.size)
        f = a @ np.cos(arg) + b @ np.sin(arg)
        worst = max(worst, poincare_ratio(f, lam))
    extremal = poincare_ratio(np.sin(2.0 * np.pi * y / lam), lam)
    worst = max(worst, extremal)
    c_p = POINCARE_CONSTANT
    passed = worst <= c_p + tol and abs(extremal - c_p) <= tol
    result = PoincareResult(lam, ny, worst, extremal, c_p, n_samples + 1, passed)
    if s is not None:
        result.s = s
        result.smallness = smallness_value(s, lam)
        result.admissible = result.smallness <= SMALLNESS_BOUND
        result.lambda_max = lambda_max(s)
    return result
