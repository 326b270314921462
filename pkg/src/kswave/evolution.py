"""IMEX time stepping in the co-moving frame.

Every formulation is advanced with the same scheme: diffusion is treated
theta-implicitly through the approximate factorization

    (I - a D_zz)(I - a D_yy) du = dt (nu Lap u^n + E*),   a = theta dt nu,

solved line by line (tridiagonal in z with Dirichlet end rows, circulant in y
through the FFT), and every other term E is extrapolated with second-order
Adams-Bashforth after a forward-Euler start.  z-boundary rows never change:
perturbations stay zero there, primitive fields stay clamped to the far field.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from . import field_ops as fo
from .energy import EnergyReport, EnergyTracker
from .errors import BlowUpError, CFLError, ParameterError, PositivityError
from .field_ops import PerturbState, PrimitiveState, Representation, StripGrid
from .snapshot_io import write_field_snapshot
from .wave_profile import WaveProfile

log = logging.getLogger(__name__)


@dataclass
class SchemeConfig:
    dt: float
    t_end: float
    theta: float = 0.5
    cfl_safety: float = 0.4
    snapshot_stride: int = 10
    field_stride: int | None = None  # persist every k-th snapshot; None keeps first and last
    adaptive: bool = False
    np_nonlinear_form: str = "gradient"
    blowup_factor: float = 1e6
    negativity_tol: float = 1e-8

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.t_end < 0:
            raise ParameterError("t_end must be non-negative")
        if not 0 <= self.theta <= 1:
            raise ParameterError("theta must lie in [0, 1]")
        if self.snapshot_stride < 1:
            raise ParameterError("snapshot_stride must be >= 1")
        if self.np_nonlinear_form not in ("gradient", "convective"):
            raise ParameterError("np_nonlinear_form must be 'gradient' or 'convective'")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


class _DiffusionSolve:
    """Factored implicit operator (I - a D_zz)(I - a D_yy) with a = theta dt nu."""

    def __init__(self, grid: StripGrid, nu: float, theta: float):
        self.grid = grid
        self.nu = nu
        self.theta = theta
        self._dt = None

    def _factor(self, dt):
        g = self.grid
        a = self.theta * dt * self.nu
        r = a / g.dz**2
        ab = np.zeros((3, g.nz))
        ab[0, 2:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        ab[1, 0] = ab[1, -1] = 1.0
        ab[2, :-2] = -r
        self._ab = ab
        self._ysym = 1.0 - a * fo.d_yy_symbol(g)
        self._dt = dt

    def __call__(self, rhs: np.ndarray, dt: float) -> np.ndarray:
        rhs = rhs.copy()
        rhs[0, :] = 0.0
        rhs[-1, :] = 0.0
        if self.nu == 0 or self.theta == 0:
            return rhs
        if dt != self._dt:
            self._factor(dt)
        x = solve_banded((1, 1), self._ab, rhs, check_finite=False)
        x = np.real(np.fft.ifft(np.fft.fft(x, axis=1) / self._ysym, axis=1))
        x[0, :] = 0.0
        x[-1, :] = 0.0
        return x


class _ImexStepper:
    representation: Representation
    diffusion: dict[str, float]

    def __init__(self, grid: StripGrid, wave: WaveProfile, eps: float, s: float, cfg: SchemeConfig):
        fo._check_wave(wave, grid)
        self.grid = grid
        self.wave = wave
        self.eps = float(eps)
        self.s = float(s)
        self.cfg = cfg
        self.N = wave.N[:, None]
        self.P = wave.P[:, None]
        self.solvers = {k: _DiffusionSolve(grid, nu, cfg.theta) for k, nu in self.diffusion.items()}
        self.steps = 0
        self._prev = None
        self._prev_dt = None
        self._sup0 = None

    # subclasses provide explicit() and speed()
    def explicit(self, f: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def speed(self, f) -> tuple[float, float]:
        raise NotImplementedError

    def _wrap(self, t, fields):
        raise NotImplementedError

    def stable_dt(self, f) -> float:
        vz, vy = self.speed(f)
        bound = self.cfg.cfl_safety * self.grid.dz / max(vz, 1e-300)
        if vy > 0:
            bound = min(bound, self.cfg.cfl_safety * self.grid.dy / vy)
        return bound

    def reset(self):
        self._prev = None
        self._prev_dt = None
        self.steps = 0
        self._sup0 = None

    def step(self, state, dt: float | None = None):
        """Advance one step and return the new state (the input is not modified)."""
        f = state.fields()
        if self._sup0 is None:
            self._sup0 = max(float(np.max(np.abs(a))) for a in f.values())
        dt = self.cfg.dt if dt is None else dt
        bound = self.stable_dt(f)
        if self.cfg.adaptive:
            dt = min(dt, bound)
        elif dt > bound * (1 + 1e-12):
            raise CFLError(f"dt={dt:.3g} exceeds the explicit bound {bound:.3g} at step {self.steps}")
        E = self.explicit(f)
        if self._prev is None:
            Estar = E
        else:
            r = dt / self._prev_dt
            Estar = {k: (1.0 + 0.5 * r) * E[k] - 0.5 * r * self._prev[k] for k in E}
        new = {}
        for k, u in f.items():
            nu = self.diffusion[k]
            rhs = Estar[k] if nu == 0 else nu * fo.laplacian(u, self.grid) + Estar[k]
            new[k] = u + self.solvers[k](dt * rhs, dt)
        self._prev, self._prev_dt = E, dt
        self.steps += 1
        out = self._wrap(state.t + dt, new)
        self._check(out)
        return out

    def _check(self, state):
        f = state.fields()
        for k, a in f.items():
            if not np.all(np.isfinite(a)):
                raise BlowUpError(f"non-finite values in {k} at step {self.steps}", self.steps, state.t)
        sup = max(float(np.max(np.abs(a))) for a in f.values())
        if sup > self.cfg.blowup_factor * (self._sup0 + 1.0):
            raise BlowUpError(f"sup-norm {sup:.3e} tripped the blow-up threshold at step {self.steps}",
                              self.steps, state.t)


class PerturbationStepper(_ImexStepper):
    representation = Representation.PERTURB

    def __init__(self, grid, wave, eps, s, cfg):
        self.diffusion = {"phi1": 1.0, "phi2": 1.0, "psi": float(eps)}
        super().__init__(grid, wave, eps, s, cfg)

    def explicit(self, f):
        g, s, eps = self.grid, self.s, self.eps
        phi1, phi2, psi = f["phi1"], f["phi2"], f["psi"]
        div_phi = fo.d_z(phi1, g) + fo.d_y(phi2, g)
        psi_z = fo.d_z(psi, g)
        psi_y = fo.d_y(psi, g)
        N, P = self.N, self.P
        return {
            "phi1": s * fo.d_z(phi1, g) + N * psi_z + P * div_phi + div_phi * psi_z,
            "phi2": s * fo.d_z(phi2, g) + N * psi_y + div_phi * psi_y,
            "psi": s * psi_z - 2.0 * eps * P * psi_z - eps * (psi_z**2 + psi_y**2) + div_phi,
        }

    def speed(self, f):
        g = self.grid
        vz = self.s + float(np.max(np.abs(self.P))) + float(np.max(np.abs(fo.d_z(f["psi"], g))))
        vy = float(np.max(np.abs(fo.d_y(f["psi"], g))))
        return vz, vy

    def _wrap(self, t, fields):
        return PerturbState(self.grid, t, fields["phi1"], fields["phi2"], fields["psi"])


class NPStepper(_ImexStepper):
    representation = Representation.NP

    def __init__(self, grid, wave, eps, s, cfg):
        self.diffusion = {"n": 1.0, "p1": float(eps), "p2": float(eps)}
        super().__init__(grid, wave, eps, s, cfg)

    def explicit(self, f):
        g, s, eps = self.grid, self.s, self.eps
        n, p1, p2 = f["n"], f["p1"], f["p2"]
        if self.cfg.np_nonlinear_form == "gradient":
            # 2 (p.grad) p = grad |p|^2 for curl-free p
            q = p1 * p1 + p2 * p2
            nl1, nl2 = -eps * fo.d_z(q, g), -eps * fo.d_y(q, g)
        else:
            nl1 = -2.0 * eps * (p1 * fo.d_z(p1, g) + p2 * fo.d_y(p1, g))
            nl2 = -2.0 * eps * (p1 * fo.d_z(p2, g) + p2 * fo.d_y(p2, g))
        return {
            "n": s * fo.d_z(n, g) + fo.d_z(n * p1, g) + fo.d_y(n * p2, g),
            "p1": s * fo.d_z(p1, g) + nl1 + fo.d_z(n, g),
            "p2": s * fo.d_z(p2, g) + nl2 + fo.d_y(n, g),
        }

    def speed(self, f):
        return self.s + float(np.max(np.abs(f["p1"]))), float(np.max(np.abs(f["p2"])))

    def _wrap(self, t, fields):
        return PrimitiveState(self.grid, t, Representation.NP, fields)

    def _check(self, state):
        super()._check(state)
        _check_positive(state, self)


class NCStepper(_ImexStepper):
    representation = Representation.NC

    def __init__(self, grid, wave, eps, s, cfg):
        self.diffusion = {"n": 1.0, "logc": float(eps)}
        super().__init__(grid, wave, eps, s, cfg)

    def explicit(self, f):
        g, s, eps = self.grid, self.s, self.eps
        n, L = f["n"], f["logc"]
        L_z, L_y = fo.d_z(L, g), fo.d_y(L, g)
        return {
            "n": s * fo.d_z(n, g) - fo.d_z(n * L_z, g) - fo.d_y(n * L_y, g),
            "logc": s * L_z + eps * (L_z**2 + L_y**2) - n,
        }

    def speed(self, f):
        g = self.grid
        return (self.s + float(np.max(np.abs(fo.d_z(f["logc"], g)))),
                float(np.max(np.abs(fo.d_y(f["logc"], g)))))

    def _wrap(self, t, fields):
        return PrimitiveState(self.grid, t, Representation.NC, fields)

    def _check(self, state):
        # the log-chemical field is unbounded in the left tail; only n enters the tripwire
        n = state.n
        if not all(np.all(np.isfinite(a)) for a in state.fields().values()):
            raise BlowUpError(f"non-finite values at step {self.steps}", self.steps, state.t)
        if float(np.max(np.abs(n))) > self.cfg.blowup_factor * (self._sup_n0 + 1.0):
            raise BlowUpError(f"density tripped the blow-up threshold at step {self.steps}",
                              self.steps, state.t)
        _check_positive(state, self)

    def step(self, state, dt=None):
        if self._sup0 is None:
            self._sup_n0 = float(np.max(np.abs(state.n)))
        return super().step(state, dt)


def _check_positive(state, stepper):
    n_min = float(np.min(state.n))
    scale = stepper.wave.params.n_minus
    if n_min < -stepper.cfg.negativity_tol * scale:
        raise PositivityError(f"density lost positivity (min {n_min:.3e}) at step {stepper.steps}",
                              stepper.steps, state.t)


STEPPERS = {
    Representation.PERTURB: PerturbationStepper,
    Representation.NP: NPStepper,
    Representation.NC: NCStepper,
}


def make_stepper(state, wave, eps, s, cfg) -> _ImexStepper:
    return STEPPERS[Representation(state.representation)](state.grid, wave, eps, s, cfg)


def step_perturbation(state: PerturbState, wave: WaveProfile, eps: float, s: float, cfg: SchemeConfig,
                      stepper: PerturbationStepper | None = None) -> PerturbState:
    """One step of the antiderivative system; pass ``stepper`` to keep the AB2 history."""
    stepper = stepper or PerturbationStepper(state.grid, wave, eps, s, cfg)
    return stepper.step(state)


def step_primitive_np(state: PrimitiveState, wave: WaveProfile, eps: float, s: float, cfg: SchemeConfig,
                      stepper: NPStepper | None = None) -> PrimitiveState:
    if state.representation is not Representation.NP:
        raise ParameterError("step_primitive_np needs an NP_FORM state")
    stepper = stepper or NPStepper(state.grid, wave, eps, s, cfg)
    return stepper.step(state)


def step_primitive_nc(state: PrimitiveState, wave: WaveProfile, eps: float, s: float, cfg: SchemeConfig,
                      stepper: NCStepper | None = None) -> PrimitiveState:
    if state.representation is not Representation.NC:
        raise ParameterError("step_primitive_nc needs an NC_FORM state")
    stepper = stepper or NCStepper(state.grid, wave, eps, s, cfg)
    return stepper.step(state)


# --- trajectories -------------------------------------------------------------------


def density(state, wave: WaveProfile) -> np.ndarray:
    """Cell density n of any representation."""
    if state.representation is Representation.PERTURB:
        return wave.N[:, None] + fo.div(state.phi, state.grid)
    return state.n


@dataclass
class Trajectory:
    representation: Representation
    states: list = field(default_factory=list)
    report: EnergyReport | None = None
    series: dict[str, list[float]] = field(default_factory=lambda: {"t": [], "drift_sup": [], "n_drift_sup": [],
                                                                    "min_n": []})
    final: object = None
    steps: int = 0
    error: str | None = None
    error_step: int | None = None
    blowup: bool = False

    @property
    def drift(self) -> float:
        """Largest sup-norm deviation of any field from its initial value over the snapshots."""
        return max(self.series["drift_sup"]) if self.series["drift_sup"] else 0.0

    @property
    def n_drift(self) -> float:
        return max(self.series["n_drift_sup"]) if self.series["n_drift_sup"] else 0.0


def config_hash(text: str) -> str:
    """git-style blob hash of a config text."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_run_meta(out_dir: Path, meta: dict) -> Path:
    body = "\n".join(f"{k} = {json.dumps(v)}" for k, v in sorted(meta.items()))
    path = Path(out_dir) / "run.meta"
    path.write_text(body + f"\nconfig_hash = \"{config_hash(body)}\"\n")
    return path


def run(initial, wave: WaveProfile, eps: float, s: float, cfg: SchemeConfig, out_dir=None,
        hooks: tuple[Callable, ...] = (), keep_snapshots: bool = True, meta: dict | None = None,
        raise_errors: bool = False) -> Trajectory:
    """Advance ``initial`` to ``cfg.t_end``, evaluating diagnostics every ``snapshot_stride`` steps.

    Perturbation runs feed an :class:`EnergyTracker`; every run records the
    sup-norm drift of its fields from the initial state.  With ``out_dir`` the
    run writes ``run.meta``, ``snap_%06d.fld`` files and ``energy.csv``; a failed
    run still writes what it has plus an ``ERROR`` marker.  Stepper errors are
    recorded on the trajectory (re-raised with ``raise_errors``).
    """
    rep = Representation(initial.representation)
    stepper = make_stepper(initial, wave, eps, s, cfg)
    traj = Trajectory(rep)
    tracker = EnergyTracker(wave, initial.grid) if rep is Representation.PERTURB else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        run_meta = {"representation": rep.value, "eps": eps, "s": s, "L_z": initial.grid.L_z,
                    "nz": initial.grid.nz, "lambda": initial.grid.lam, "ny": initial.grid.ny,
                    "y_scheme": initial.grid.y_scheme, **{f"scheme.{k}": v for k, v in asdict(cfg).items()}}
        run_meta.update(meta or {})
        write_run_meta(out_dir, run_meta)
    init_fields = {k: v.copy() for k, v in initial.fields().items()}
    n0 = density(initial, wave)
    snap_count = 0

    def snapshot(state, step, final=False):
        nonlocal snap_count
        f = state.fields()
        traj.series["t"].append(state.t)
        traj.series["drift_sup"].append(max(float(np.max(np.abs(f[k] - init_fields[k]))) for k in f))
        n = density(state, wave)
        traj.series["n_drift_sup"].append(float(np.max(np.abs(n - n0))))
        traj.series["min_n"].append(float(np.min(n)))
        if tracker is not None:
            tracker(state)
        if keep_snapshots:
            traj.states.append(state)
        for hook in hooks:
            hook(step, state)
        if out_dir is not None:
            stride = cfg.field_stride
            if (stride is None and (snap_count == 0 or final)) or (stride is not None and snap_count % stride == 0):
                write_field_snapshot(out_dir / f"snap_{step:06d}.fld", state)
        snap_count += 1

    state = initial
    snapshot(state, 0)
    n_steps = cfg.n_steps
    step = 0
    try:
        while state.t < cfg.t_end - 1e-12 * max(1.0, cfg.t_end):
            dt = min(cfg.dt, cfg.t_end - state.t)
            state = stepper.step(state, dt)
            step += 1
            last = state.t >= cfg.t_end - 1e-12 * max(1.0, cfg.t_end)
            if step % cfg.snapshot_stride == 0 or last:
                snapshot(state, step, final=last)
            if step > 10 * n_steps + 10:
                raise ParameterError("time loop did not terminate")
    except (BlowUpError, CFLError) as exc:
        traj.error = str(exc)
        traj.error_step = step + 1
        traj.blowup = isinstance(exc, BlowUpError)
        log.warning("run stopped: %s", exc)
        if out_dir is not None:
            (out_dir / "ERROR").write_text(f"{type(exc).__name__} step={step + 1} t={state.t!r}\n{exc}\n")
            write_series(out_dir / "series.csv", traj)
        if raise_errors:
            traj.final, traj.steps = state, step
            if tracker is not None:
                traj.report = tracker.report
                if out_dir is not None:
                    tracker.report.to_csv(out_dir / "energy.csv")
            raise
    traj.final = state
    traj.steps = step
    if tracker is not None:
        traj.report = tracker.report
        if out_dir is not None:
            tracker.report.to_csv(out_dir / "energy.csv")
    if out_dir is not None:
        write_series(out_dir / "series.csv", traj)
    return traj


def write_series(path, traj: Trajectory) -> Path:
    """Drift series ``t,drift_sup,n_drift_sup,min_n`` at %.17g."""
    names = ("t", "drift_sup", "n_drift_sup", "min_n")
    table = np.column_stack([np.asarray(traj.series[k], dtype=float) for k in names])
    np.savetxt(path, table, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
    return Path(path)
