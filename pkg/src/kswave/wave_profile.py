"""Planar traveling-wave profiles of the Cole-Hopf transformed chemotaxis system.

The profile (N, P) is the heteroclinic orbit of the planar system

    N' = -(s + P) N
    P' = (eps P**2 - s P - N) / eps

running from E- = ((1+eps) s**2, -s) to E+ = (0, 0).  The chemical profile C
is recovered from P = -C'/C.

The orbit is integrated in the variables (log N, log(-P)) so that both
exponential tails keep full relative precision; the weight 1/N used by the
energy diagnostics depends on that.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.special import expit

from .errors import FormatError, ParameterError, ShootingError, StiffnessError

EPS_MAX_DEFAULT = 0.5
EPS_MIN_DEFAULT = 1e-3
EXPONENT_BOUND = 700.0


@dataclass(frozen=True)
class WaveParams:
    s: float
    eps: float
    c_plus: float = 1.0
    eps_max: float = EPS_MAX_DEFAULT

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise ParameterError(f"wave speed must be positive, got s={self.s}")
        if not (self.c_plus > 0 and math.isfinite(self.c_plus)):
            raise ParameterError(f"c_plus must be positive, got {self.c_plus}")
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise ParameterError(f"eps must be non-negative, got {self.eps}")
        if self.eps > self.eps_max:
            raise ParameterError(f"eps={self.eps} exceeds eps_max={self.eps_max}")

    @property
    def n_minus(self) -> float:
        """Left limit of the cell density, (1 + eps) s**2."""
        return (1.0 + self.eps) * self.s**2


@dataclass(frozen=True, eq=False)
class WaveProfile:
    params: WaveParams
    z: np.ndarray
    N: np.ndarray
    P: np.ndarray
    C: np.ndarray
    log_C: np.ndarray
    z_center: float = 0.0
    c_clamped: bool = False
    meta: dict = field(default_factory=dict)
    dN: np.ndarray | None = None
    dP: np.ndarray | None = None

    def __post_init__(self):
        for name in ("z", "N", "P", "C", "log_C", "dN", "dP"):
            if getattr(self, name) is None:
                continue
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.z.shape == self.N.shape == self.P.shape == self.C.shape):
            raise ParameterError("profile arrays must share the grid shape")

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def eps(self) -> float:
        return self.params.eps

    def derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        """(N', P') evaluated from the reduced ODE at the stored samples.

        Solvers that know the derivatives more accurately (closed form,
        linearized tail) store them; otherwise the ODE right-hand side is used.
        At eps = 0 the second component comes from differentiating P = -N/s.
        """
        if self.dN is not None and self.dP is not None:
            return self.dN, self.dP
        s, eps = self.s, self.eps
        dN = -(s + self.P) * self.N
        if eps > 0:
            dP = (eps * self.P**2 - s * self.P - self.N) / eps
        else:
            dP = -dN / s
        return dN, dP


@dataclass
class Equilibrium:
    name: str
    state: tuple[float, float]
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, unit length
    kind: str
    defective: bool = False


def wave_ode_rhs(N, P, params: WaveParams):
    """Right-hand side (dN/dz, dP/dz) of the reduced first-order wave system."""
    eps = params.eps
    if eps <= 0:
        raise ParameterError("wave_ode_rhs needs eps > 0; use explicit_wave_eps0 for eps = 0")
    s = params.s
    return -(s + P) * N, (eps * P * P - s * P - N) / eps


def _jacobian(N, P, s, eps):
    return np.array([[-(s + P), -N], [-1.0 / eps, (2.0 * eps * P - s) / eps]])


def _eig_unit(J):
    vals, vecs = np.linalg.eig(J)
    vals = np.real_if_close(vals)
    vecs = np.real_if_close(vecs)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    scale = max(1.0, float(np.max(np.abs(vals))))
    defective = bool(abs(vals[1] - vals[0]) < 1e-8 * scale)
    if defective:
        lam = 0.5 * (vals[0] + vals[1])
        v = vecs[:, 0]
        # generalized eigenvector: (J - lam I) g = v
        g, *_ = np.linalg.lstsq(J - lam * np.eye(2), v, rcond=None)
        g = g - np.dot(g, v) * v
        vecs = np.column_stack([v, g])
        vals = np.array([lam, lam])
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    return vals, vecs, defective


def equilibria_and_linearization(params: WaveParams) -> tuple[Equilibrium, Equilibrium]:
    """Return (E-, E+) with their Jacobians and eigen-decompositions.

    E- is a saddle, E+ a stable node with eigenvalues -s and -s/eps.  At eps = 1
    the two E+ eigenvalues coincide; the Jacobian is then defective and the
    second column holds a generalized eigenvector (``defective=True``).
    """
    s, eps = params.s, params.eps
    if eps <= 0:
        raise ParameterError("equilibria are only defined for eps > 0")
    out = []
    for name, state in (("E-", (params.n_minus, -s)), ("E+", (0.0, 0.0))):
        J = _jacobian(state[0], state[1], s, eps)
        vals, vecs, defective = _eig_unit(J)
        if vals[0] < 0 < vals[1]:
            kind = "saddle"
        elif vals[1] < 0:
            kind = "stable node"
        else:
            kind = "other"
        if defective:
            warnings.warn(f"{name} Jacobian is defective at eps={eps}", RuntimeWarning, stacklevel=2)
        out.append(Equilibrium(name, state, J, vals, vecs, kind, defective))
    return out[0], out[1]


def uniform_grid(half_length: float, dz: float | None = None, nz: int | None = None) -> np.ndarray:
    if half_length <= 0:
        raise ParameterError("half_length must be positive")
    if nz is None:
        if dz is None or dz <= 0:
            raise ParameterError("need a positive dz or an nz")
        nz = int(round(2.0 * half_length / dz)) + 1
    if nz < 3:
        raise ParameterError("grid needs at least 3 nodes")
    return np.linspace(-half_length, half_length, nz)


def log_chemical_from_p(P, c_plus: float, z) -> np.ndarray:
    """log C(z) = log c_plus + int_z^{z_max} P, composite Simpson from the right end."""
    P = np.asarray(P, dtype=float)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(P)):
        raise ParameterError("P samples must be finite")
    if P.size < 2:
        return np.full_like(P, math.log(c_plus))
    h = float(z[1] - z[0])
    if P.size == 2:
        tail = np.array([0.5 * h * (P[0] + P[1]), 0.0])
    else:
        tail = cumulative_simpson(P[::-1], dx=h, initial=0.0)[::-1]
    return math.log(c_plus) + tail


def chemical_from_p(P, c_plus: float, z, exponent_bound: float = EXPONENT_BOUND) -> np.ndarray:
    """Reconstruct C from P = -C'/C with C(z_max) = c_plus.

    Exponents outside +-exponent_bound are clamped (C set to 0 or the overflow
    ceiling) with a RuntimeWarning; values are never negative.
    """
    C, _ = _clamped_exp(log_chemical_from_p(P, c_plus, z), exponent_bound)
    return C


def _clamped_exp(log_C, bound=EXPONENT_BOUND):
    low = log_C < -bound
    high = log_C > bound
    C = np.exp(np.clip(log_C, -bound, bound))
    C[low] = 0.0
    clamped = bool(low.any() or high.any())
    if clamped:
        warnings.warn(
            f"chemical exponent clamped at +-{bound} on {int(low.sum() + high.sum())} nodes",
            RuntimeWarning,
            stacklevel=3,
        )
    return C, clamped


def _assemble(params, z, N, P, z_center, meta, dN=None, dP=None):
    log_C = log_chemical_from_p(P, params.c_plus, z)
    C, clamped = _clamped_exp(log_C)
    return WaveProfile(params, z, N, P, C, log_C, z_center=z_center, c_clamped=clamped, meta=meta,
                       dN=dN, dP=dP)


def explicit_wave_eps0(s: float, z_grid, c_plus: float = 1.0) -> WaveProfile:
    """Closed-form eps = 0 wave: N = s**2/(1+e^{sz}), P = -s/(1+e^{sz})."""
    params = WaveParams(s=s, eps=0.0, c_plus=c_plus)
    z = np.asarray(z_grid, dtype=float)
    logistic = expit(-s * z)
    slope = s * s * logistic * expit(s * z)
    return _assemble(params, z, s * s * logistic, -s * logistic, 0.0, {"method": "closed form"},
                     dN=-s * slope, dP=slope)


def solve_wave(
    params: WaveParams,
    half_length: float = 20.0,
    dz: float | None = 1e-3,
    *,
    nz: int | None = None,
    tol: float = 1e-8,
    delta: float | None = None,
    min_eps: float = EPS_MIN_DEFAULT,
    max_step: float | None = None,
) -> WaveProfile:
    """Shoot the heteroclinic orbit from E- and sample it on [-half_length, half_length].

    The trajectory leaves E- along its unstable eigenvector at distance
    ``delta`` (default 1e-6 s**2) and is integrated with an adaptive explicit
    Runge-Kutta method (DOP853) capped at ``eps/(4s)`` per step.  The point
    where P = -s/2 is moved to z = 0.  Nodes before the launch point are filled
    from the linearization at E-.

    Raises:
        ParameterError: eps outside (min_eps, eps_max].
        ShootingError: the orbit leaves the box [0, n-] x [-s, 0] or never
            reaches P = -s/2.
        StiffnessError: the step controller hit its minimum step.
    """
    s, eps = params.s, params.eps
    if eps <= 0:
        raise ParameterError("solve_wave needs eps > 0; use explicit_wave_eps0")
    if eps < min_eps:
        raise ParameterError(f"eps={eps} below min_eps={min_eps}; explicit RK would be unreliable")
    z = uniform_grid(half_length, dz, nz)
    n_minus = params.n_minus
    delta = 1e-6 * s * s if delta is None else float(delta)
    if not 0 < delta < 0.1 * s * s:
        raise ParameterError("shooting offset delta must lie in (0, 0.1 s**2)")
    max_step = eps / (4.0 * s) if max_step is None else max_step
    rtol = min(max(tol * 1e-4, 1e-13), 1e-6)

    e_minus, _ = equilibria_and_linearization(params)
    mu = float(e_minus.eigenvalues[1])
    v = e_minus.eigenvectors[:, 1].copy()
    if v[0] > 0:
        v = -v
    N0 = n_minus + delta * v[0]
    P0 = -s + delta * v[1]

    def rhs(_, y):
        N = math.exp(y[0])
        mP = math.exp(y[1])
        return [mP - s, -mP - s / eps + N / (mP * eps)]

    def hit_center(_, y):
        return y[1] - math.log(0.5 * s)

    hit_center.terminal = True
    hit_center.direction = -1

    def leave_box(_, y):
        # positive inside the box N < n-(1+1e-9), -P < s(1+1e-9)
        return min(math.log(n_minus) + 1e-9 - y[0], math.log(s) + 1e-9 - y[1])

    leave_box.terminal = True

    opts = dict(method="DOP853", rtol=rtol, atol=rtol, max_step=max_step, dense_output=True)
    y0 = [math.log(N0), math.log(-P0)]
    span = 40.0 * math.log(s * s / delta + 2.0) / mu + 10.0 / s
    first = solve_ivp(rhs, (0.0, span), y0, events=[hit_center, leave_box], **opts)
    _check_ivp(first, params)
    if first.t_events[1].size:
        raise ShootingError(f"trajectory left the invariant box at z={first.t_events[1][0]:.6g}")
    if not first.t_events[0].size:
        raise ShootingError("trajectory never reached P = -s/2")
    z_hit = float(first.t_events[0][0])
    y_hit = first.y_events[0][0]
    second = solve_ivp(rhs, (z_hit, z_hit + half_length + max_step), y_hit, events=[leave_box], **opts)
    _check_ivp(second, params)
    if second.t_events[0].size:
        raise ShootingError(f"trajectory left the invariant box at z={second.t_events[0][0]:.6g}")

    zz = z + z_hit
    log_N = np.empty_like(z)
    log_mP = np.empty_like(z)
    before = zz < 0.0
    mid = (zz >= 0.0) & (zz <= z_hit)
    after = zz > z_hit
    lin = delta * np.exp(mu * zz[before])
    log_N[before] = np.log(n_minus + lin * v[0])
    log_mP[before] = np.log(s - lin * v[1])
    if mid.any():
        log_N[mid], log_mP[mid] = first.sol(zz[mid])
    if after.any():
        log_N[after], log_mP[after] = second.sol(zz[after])
    N = np.exp(log_N)
    P = -np.exp(log_mP)
    dN = -(s + P) * N
    dP = (eps * P * P - s * P - N) / eps
    # the tail before the launch point: derivatives of the linearization, free of cancellation
    dN[before] = mu * lin * v[0]
    dP[before] = mu * lin * v[1]

    # the dense output can overshoot by a few ulps in the saturated tails
    N = np.minimum(N, n_minus)
    P = np.maximum(P, -s)
    if np.any(np.diff(N) > 8 * np.finfo(float).eps * n_minus) or np.any(np.diff(P) < -8 * np.finfo(float).eps * s):
        raise ShootingError("sampled profile is not monotone")

    meta = {
        "method": "shooting",
        "delta": delta,
        "tol": tol,
        "rtol": rtol,
        "max_step": max_step,
        "launch_offset": -z_hit,
        "unstable_eigenvalue": mu,
        "nfev": int(first.nfev + second.nfev),
    }
    profile = _assemble(params, z, N, P, 0.0, meta, dN=dN, dP=dP)
    tail = 1e-6
    if abs(N[0] / n_minus - 1.0) > tail or N[-1] > tail * s * s:
        warnings.warn(
            "domain too short for the tails to reach their limits "
            f"(N[0]/n- - 1 = {N[0] / n_minus - 1.0:.3g}, N[-1] = {N[-1]:.3g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return profile


def _check_ivp(result, params):
    if result.status == -1:
        if "step size" in result.message.lower():
            raise StiffnessError(f"step controller failed at eps={params.eps}: {result.message}")
        raise ShootingError(result.message)


def resample(profile: WaveProfile, z_grid) -> WaveProfile:
    """Cubic interpolation of (log N, P) onto another grid inside the profile's domain."""
    from scipy.interpolate import CubicSpline

    z_new = np.asarray(z_grid, dtype=float)
    if z_new[0] < profile.z[0] - 1e-12 or z_new[-1] > profile.z[-1] + 1e-12:
        raise ParameterError("resampling grid must lie inside the profile domain")
    log_N = CubicSpline(profile.z, np.log(profile.N))(z_new)
    P = CubicSpline(profile.z, profile.P)(z_new)
    return _assemble(profile.params, z_new, np.exp(log_N), P, profile.z_center, dict(profile.meta))


# --- validation -------------------------------------------------------------


@dataclass
class Check:
    name: str
    residual: float
    passed: bool
    note: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]
    empirical_bounds: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_text(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<22s} {c.residual:.3e}  {c.note}" for c in self.checks]
        lines += [f"      sup {k:<18s} {v:.6g}" for k, v in self.empirical_bounds.items()]
        return "\n".join(lines)


def derivative(f, h: float) -> np.ndarray:
    """First derivative: 4th-order centered interior, 2nd-order one-sided at the ends."""
    f = np.asarray(f, dtype=float)
    g = np.gradient(f, h, edge_order=2)
    if f.size >= 5:
        g[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return g


def _interp_center(profile, arr):
    return float(np.interp(profile.z_center, profile.z, arr))


def validate_profile(profile: WaveProfile, tol: float = 1e-6, tail_tol: float = 1e-6) -> ValidationReport:
    """Run every profile invariant and the weight bounds around the center point.

    Residuals of the two first-order relations use discrete derivatives of the
    stored arrays, so they measure both the ODE error and the grid resolution.
    """
    s, eps = profile.s, profile.eps
    n_minus = profile.params.n_minus
    z, N, P, C = profile.z, profile.N, profile.P, profile.C
    h = profile.dz
    ulp = 8 * np.finfo(float).eps
    checks = []

    def add(name, residual, passed, note=""):
        checks.append(Check(name, float(residual), bool(passed), note))

    rise_N = float(np.max(np.diff(N)))
    add("N_decreasing", max(rise_N, 0.0), rise_N <= ulp * n_minus and N[0] > N[-1])
    drop_P = float(np.max(-np.diff(P)))
    add("P_increasing", max(drop_P, 0.0), drop_P <= ulp * s and P[-1] > P[0])

    add("N_left_limit", abs(N[0] - n_minus) / n_minus, abs(N[0] - n_minus) <= tail_tol * n_minus)
    add("P_left_limit", abs(P[0] + s) / s, abs(P[0] + s) <= tail_tol * s)
    add("N_right_limit", abs(N[-1]) / s**2, abs(N[-1]) <= tail_tol * s**2)
    add("P_right_limit", abs(P[-1]) / s, abs(P[-1]) <= tail_tol * s)

    box = max(0.0, float(np.max(N - n_minus)) / n_minus, float(np.max(-s - P)) / s)
    add("bound_box", box, box <= ulp and np.all(N > 0) and np.all(P < 0))

    log_N = np.log(N)
    dlogN = derivative(log_N, h)
    dP = derivative(P, h)
    res_n = float(np.max(np.abs(-dlogN - (s + P))))
    add("residual_N_relation", res_n, res_n < tol)
    res_p = float(np.max(np.abs(-s * P - eps * dP - (N - eps * P * P))))
    add("residual_P_relation", res_p, res_p < tol)

    P_c = _interp_center(profile, P)
    add("center_P", abs(P_c + 0.5 * s) / s, abs(P_c + 0.5 * s) <= max(tol, 1e-9) * s + 1e-12)
    N_c = _interp_center(profile, N)
    add("center_N_lower_bound", N_c - 0.25 * s * s, N_c >= 0.25 * s * s, "N(z_center) - s^2/4")

    rise_C = float(np.max(-np.diff(C))) if C.size > 1 else 0.0
    add("C_increasing", max(rise_C, 0.0), rise_C <= ulp * profile.params.c_plus and C[-1] > C[0])
    c_err = abs(C[-1] - profile.params.c_plus) / profile.params.c_plus
    add("C_right_limit", c_err, c_err <= tol)

    right = z >= profile.z_center
    ratio = -dlogN[right]
    worst = float(np.min(ratio - 0.5 * s)) if right.any() else 0.0
    add("weight_growth_right", worst, worst >= -tol, "min(w'/w) - s/2 for z >= z_center")
    left = z <= profile.z_center
    excess = float(np.max((1.0 / N[left]) / (16.0 / s**4 * N[left]))) if left.any() else 0.0
    add("weight_bound_left", excess, excess <= 1.0 + tol, "max w / (16 N / s^4) for z <= z_center")

    dN_exact, dP_exact = profile.derivatives()
    bounds = {
        "|N'|": float(np.max(np.abs(dN_exact))),
        "|N''|": float(np.max(np.abs(derivative(dN_exact, h)))),
        "|P'|": float(np.max(np.abs(dP_exact))),
        "|P''|": float(np.max(np.abs(derivative(dP_exact, h)))),
    }
    return ValidationReport(checks, bounds)


# --- profile files ------------------------------------------------------------

_CSV_HEADER = "z,N,P,C"
_META_KEYS = ("s", "eps", "c_plus", "dz", "tol", "z_center")


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def export_profile(profile: WaveProfile, path) -> Path:
    """Write ``z,N,P,C`` rows with 17 significant digits plus a ``.meta.json`` sidecar."""
    path = Path(path)
    data = np.column_stack([profile.z, profile.N, profile.P, profile.C])
    np.savetxt(path, data, delimiter=",", header=_CSV_HEADER, comments="", fmt="%.17g")
    meta = {
        "s": profile.s,
        "eps": profile.eps,
        "c_plus": profile.params.c_plus,
        "dz": profile.dz,
        "tol": profile.meta.get("tol", 0.0),
        "z_center": profile.z_center,
        "nz": int(profile.z.size),
        "method": profile.meta.get("method", ""),
    }
    if "delta" in profile.meta:
        meta["delta"] = profile.meta["delta"]
    _meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def import_profile(path, eps_max: float = EPS_MAX_DEFAULT) -> WaveProfile:
    """Load a profile written by :func:`export_profile`, validating the layout strictly."""
    path = Path(path)
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise FormatError(f"missing sidecar {meta_file}")
    try:
        meta = json.loads(meta_file.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad sidecar {meta_file}: {exc}") from exc
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"sidecar lacks keys {missing}")
    with open(path) as fh:
        header = fh.readline().strip()
    if header != _CSV_HEADER:
        raise FormatError(f"expected header {_CSV_HEADER!r}, got {header!r}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if data.shape[1] != 4 or data.shape[0] < 3:
        raise FormatError(f"expected >= 3 rows of 4 columns, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise FormatError("non-finite values in profile")
    z, N, P, C = data.T
    steps = np.diff(z)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps.mean())) > 1e-9 * max(1.0, abs(z).max()):
        raise FormatError("z grid must be strictly increasing and uniform")
    if abs(steps.mean() - float(meta["dz"])) > 1e-9 * float(meta["dz"]):
        raise FormatError("dz in sidecar does not match the grid")
    if np.any(N < 0) or np.any(C < 0):
        raise FormatError("negative density or chemical values")
    params = WaveParams(float(meta["s"]), float(meta["eps"]), float(meta["c_plus"]), eps_max=eps_max)
    info = {k: meta[k] for k in meta if k not in ("s", "eps", "c_plus")}
    log_C = log_chemical_from_p(P, params.c_plus, z)
    with np.errstate(divide="ignore"):
        stored = np.where(C > 0, np.log(np.where(C > 0, C, 1.0)), -np.inf)
    ok = C > 0
    if np.any(np.abs(stored[ok] - log_C[ok]) > 1e-6 * (1.0 + np.abs(log_C[ok]))):
        raise FormatError("C column is inconsistent with P")
    return WaveProfile(params, z, N, P, C, log_C, z_center=float(meta["z_center"]),
                       c_clamped=bool(np.any(~ok)), meta=info)
