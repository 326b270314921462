"""Configuration-driven experiments and parameter sweeps."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from . import energy
from . import field_ops as fo
from .errors import ConfigError, KSWaveError
from .evolution import SchemeConfig, Trajectory, density, run
from .field_ops import PerturbState, Representation, StripGrid
from .snapshot_io import read_field_snapshot
from .wave_profile import WaveParams, WaveProfile, export_profile, validate_profile

log = logging.getLogger(__name__)

FAMILIES = ("gaussian_bump", "y_mode", "custom_file")
FORMULATIONS = ("perturbation", "primitive_np", "primitive_nc", "all_three")
SWEEP_AXES = ("amplitude", "eps", "lambda", "refinement")
_FORMULATION_REP = {
    "perturbation": Representation.PERTURB,
    "primitive_np": Representation.NP,
    "primitive_nc": Representation.NC,
}


@dataclass
class ExperimentConfig:
    s: float = 1.0
    eps: float = 0.05
    c_plus: float = 1.0
    eps_max: float = 0.5
    L_z: float = 20.0
    nz: int = 256
    lam: float = 0.3
    ny: int = 32
    y_scheme: str = "fd"
    dt: float = 0.01
    t_end: float = 1.0
    theta: float = 0.5
    cfl_safety: float = 0.4
    snapshot_stride: int = 10
    field_stride: int | None = None
    adaptive: bool = False
    np_nonlinear_form: str = "gradient"
    family: str = "gaussian_bump"
    amplitude: float = 1e-3
    center: float = 0.0
    width: float = 1.0
    y_mode: int = 0
    custom_file: str = ""
    formulation: str = "perturbation"
    output_dir: str = "runs/default"
    seed: int = 0
    wave_dz: float = 1e-3
    wave_tol: float = 1e-8
    buffer_fraction: float = 0.1
    sweep_amplitude: list = field(default_factory=list)
    sweep_eps: list = field(default_factory=list)
    sweep_lambda: list = field(default_factory=list)
    sweep_refinement: list = field(default_factory=list)

    def wave_params(self) -> WaveParams:
        return WaveParams(self.s, self.eps, self.c_plus, eps_max=self.eps_max)

    def grid(self) -> StripGrid:
        return StripGrid(self.L_z, self.nz, self.lam, self.ny, self.y_scheme)

    def scheme(self) -> SchemeConfig:
        return SchemeConfig(dt=self.dt, t_end=self.t_end, theta=self.theta, cfl_safety=self.cfl_safety,
                            snapshot_stride=self.snapshot_stride, field_stride=self.field_stride,
                            adaptive=self.adaptive, np_nonlinear_form=self.np_nonlinear_form)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_toml(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if k.startswith("sweep_") and not v:
                continue
            if v is None:
                continue
            key = "lambda" if k == "lam" else k
            lines.append(f"{key} = {json.dumps(v)}")
        return "\n".join(lines) + "\n"

    def validate(self, strict: bool = False) -> list[str]:
        """Raise ConfigError on invalid settings; return advisories (errors too when strict)."""
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"formulation must be one of {FORMULATIONS}")
        if self.family == "custom_file" and not self.custom_file:
            raise ConfigError("family custom_file needs custom_file = PATH")
        if self.y_mode < 0:
            raise ConfigError("y_mode must be >= 0")
        if self.width <= 0:
            raise ConfigError("width must be positive")
        try:
            self.wave_params()
            self.grid()
            self.scheme()
        except KSWaveError as exc:
            raise ConfigError(str(exc)) from exc
        advisories = []
        small = energy.smallness_value(self.s, self.lam)
        if small > energy.SMALLNESS_BOUND:
            advisories.append(
                f"s*lambda*C_p = {small:.4g} > 1/16: outside the small-strip stability regime "
                f"(lambda_max = {energy.lambda_max(self.s):.4g} for s = {self.s:g})")
        if strict and advisories:
            raise ConfigError("; ".join(advisories))
        return advisories


def _coerce(name, value, template):
    if name.startswith("sweep_"):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return value
    if template is None or name == "field_stride":
        return None if value is None else int(value)
    kind = type(template)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, value in raw.items():
        name = "lam" if key == "lambda" else key
        if isinstance(value, dict):
            raise ConfigError(f"nested table [{key}] not allowed; config is flat key = value")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[name] = _coerce(name, value, getattr(defaults, name))
    return replace(defaults, **values)


def load_config(path) -> ExperimentConfig:
    import tomli

    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


# --- initial data -----------------------------------------------------------------------


def build_initial_perturbation(cfg: ExperimentConfig, grid: StripGrid, wave: WaveProfile | None = None
                               ) -> PerturbState:
    """Initial antiderivative perturbation (phi0, psi0) of the configured family.

    gaussian_bump: a exp(-(z - z_c)^2 / width^2), times cos(2 pi k y / lambda) when k > 0.
    y_mode: the same Gaussian times (1 + cos(2 pi k y / lambda)), a planar part plus mode k.
    custom_file: a PERTURB snapshot file, scaled by the amplitude.
    With ``wave`` the resulting M0 is logged.

    Raises:
        ConfigError: the data does not vanish in the buffer zones.
    """
    if cfg.family == "custom_file":
        state = read_field_snapshot(cfg.custom_file, grid)
        if not isinstance(state, PerturbState):
            raise ConfigError("custom_file must hold a PERTURB snapshot")
        state = PerturbState(grid, 0.0, cfg.amplitude * state.phi1, cfg.amplitude * state.phi2,
                             cfg.amplitude * state.psi)
    else:
        Z, Y = grid.mesh()
        bump = np.exp(-((Z - cfg.center) ** 2) / cfg.width**2)
        mode = np.cos(2.0 * np.pi * cfg.y_mode * Y / grid.lam)
        if cfg.family == "y_mode":
            shape = bump * (1.0 + mode)
        else:
            shape = bump * (mode if cfg.y_mode > 0 else 1.0)
        f = cfg.amplitude * shape
        state = PerturbState(grid, 0.0, f.copy(), f.copy(), f.copy())
    peak = max(float(np.max(np.abs(a))) for a in (state.phi1, state.phi2, state.psi))
    if peak > 0 and state.buffer_violation(cfg.buffer_fraction) > 1e-12 * peak:
        raise ConfigError(
            f"initial perturbation does not vanish in the buffer zone "
            f"(|z| >= {(1 - cfg.buffer_fraction) * grid.L_z:g})")
    if wave is not None:
        log.info("initial perturbation %s: M0 = %.6g", cfg.family, initial_m(state, wave))
    return state


def initial_m(state: PerturbState, wave: WaveProfile) -> float:
    weight = energy.WeightField.from_wave(wave, state.grid)
    return energy.m_functional(energy.snapshot_norms(state, weight, wave.eps))


# --- single experiment -------------------------------------------------------------------


@dataclass
class RunResult:
    config: ExperimentConfig
    out_dir: Path
    summary: dict
    trajectories: dict[str, Trajectory]
    wave: WaveProfile

    @property
    def blowup(self) -> bool:
        return bool(self.summary.get("blowup"))

    @property
    def suites_passed(self) -> bool:
        return all(self.summary["suites"].values())


def _profile_tol(dz):
    # 4th-order residual differences on the run grid
    return max(1e-6, dz**4)


def _suite_energy(report: energy.EnergyReport) -> bool:
    if not len(report):
        return True
    cols = np.array([[r[c] for c in energy.ENERGY_COLUMNS] for r in report.rows])
    if not np.all(np.isfinite(cols)):
        return False
    nonneg = [c for c in energy.ENERGY_COLUMNS if c != "t"]
    if np.any(cols[:, [energy.ENERGY_COLUMNS.index(c) for c in nonneg]] < 0):
        return False
    for c in ("M", "diss_phi", "diss_psi", "diss_eps_psi4"):
        if np.any(np.diff(report.column(c)) < 0):
            return False
    return True


def _initial_states(cfg, wave, grid, perturb0, formulations):
    nc0 = fo.primitive_from_wave(wave, grid, Representation.NC, perturb0)
    states = {}
    for name in formulations:
        if name == "perturbation":
            states[name] = perturb0
        elif name == "primitive_nc":
            states[name] = nc0
        elif len(formulations) > 1:
            # one consistent initial condition for the cross-formulation comparison
            states[name] = fo.to_np_form(nc0)
        else:
            states[name] = fo.primitive_from_wave(wave, grid, Representation.NP, perturb0)
    return states


def run_experiment(cfg: ExperimentConfig, out_dir=None, strict: bool = False, figures: bool = False,
                   keep_snapshots: bool = False) -> RunResult:
    """Run the configured formulation(s) and write the run directory and ``summary.json``."""
    advisories = cfg.validate(strict=strict)
    for a in advisories:
        log.warning("advisory: %s", a)
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml())
    grid = cfg.grid()
    params = cfg.wave_params()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        wave = fo.wave_on_grid(params, grid, tol=cfg.wave_tol)
    export_profile(wave, out / "wave.csv")
    perturb0 = build_initial_perturbation(cfg, grid, wave)
    scheme = cfg.scheme()

    formulations = list(_FORMULATION_REP) if cfg.formulation == "all_three" else [cfg.formulation]
    states = _initial_states(cfg, wave, grid, perturb0, formulations)
    n_snapshots = {name: {} for name in formulations}
    trajectories = {}
    for name in formulations:
        sub = out / name if len(formulations) > 1 else out

        def keep_n(step, state, store=n_snapshots[name]):
            store[round(state.t, 12)] = density(state, wave)

        hooks = (keep_n,) if len(formulations) > 1 else ()
        trajectories[name] = run(states[name], wave, cfg.eps, cfg.s, scheme, out_dir=sub, hooks=hooks,
                                 keep_snapshots=keep_snapshots,
                                 meta={"formulation": name, "seed": cfg.seed, "family": cfg.family,
                                       "amplitude": cfg.amplitude})

    validation = validate_profile(wave, tol=_profile_tol(grid.dz))
    positivity = energy.coefficient_positivity(wave)
    summary = {
        "formulation": cfg.formulation,
        "advisories": advisories,
        "smallness": energy.smallness_value(cfg.s, cfg.lam),
        "blowup": any(t.blowup for t in trajectories.values()),
        "errors": {k: t.error for k, t in trajectories.items() if t.error},
        "steps": {k: t.steps for k, t in trajectories.items()},
        "drift_sup": {k: t.drift for k, t in trajectories.items()},
        "n_drift_sup": {k: t.n_drift for k, t in trajectories.items()},
        "wave_validation": {c.name: c.residual for c in validation.checks},
        "coefficient_minima": positivity,
    }
    suites = {
        "wave_profile": validation.passed,
        "coefficient_positivity": min(positivity.values()) > 0,
        "no_blowup": not summary["blowup"],
        "completed": not summary["errors"],
    }
    pert = trajectories.get("perturbation")
    if pert is not None and pert.report is not None and len(pert.report):
        rep = pert.report
        M = rep.column("M")
        m0 = float(M[0])
        last = rep.rows[-1]
        summary.update({
            "M0": m0,
            "sup_M": float(M.max()),
            "C0_empirical": float(M.max() / m0) if m0 > 0 else 0.0,
            "final_norms": {k: last[k] for k in ("phi_H3w", "psi_H3", "gradpsi_H2w")},
            "accumulators": {k: last[k] for k in ("diss_phi", "diss_psi", "diss_eps_psi4")},
            "accumulators_over_M0": {k: (last[k] / m0 if m0 > 0 else 0.0)
                                     for k in ("diss_phi", "diss_psi", "diss_eps_psi4")},
            "max_active_weight": rep.max_active_weight,
            "buffer_violation": rep.buffer_violation,
        })
        dyn = rep.column("dy_n_L2")
        peak = float(dyn.max())
        summary["dy_n_decay_factor"] = float(peak / dyn[-1]) if dyn[-1] > 0 else (math.inf if peak > 0 else 1.0)
        suites["energy_report"] = _suite_energy(rep)
    if len(formulations) > 1:
        cross = _cross_differences(n_snapshots)
        with open(out / "cross.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("t",) + tuple(cross["pairs"]))
            for i, t in enumerate(cross["t"]):
                writer.writerow([format(t, ".17g")] + [format(cross["pairs"][p][i], ".17g") for p in cross["pairs"]])
        summary["cross_max"] = {p: float(max(v)) if v else 0.0 for p, v in cross["pairs"].items()}
        drift = fixed_point_drift(cfg, wave)
        summary["fixed_point_drift"] = drift
        threshold = 5.0 * max(drift.values())
        summary["cross_threshold"] = threshold
        suites["cross_formulation"] = summary["cross_max"]["primitive_np-primitive_nc"] <= threshold
    summary["suites"] = suites
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n")
    if figures:
        from . import plotting

        plotting.render_run(out, wave, trajectories)
    return RunResult(cfg, out, summary, trajectories, wave)


def fixed_point_drift(cfg: ExperimentConfig, wave: WaveProfile | None = None) -> dict[str, float]:
    """Sup-norm drift of the unperturbed wave in the two primitive formulations."""
    grid = cfg.grid()
    if wave is None:
        wave = fo.wave_on_grid(cfg.wave_params(), grid, tol=cfg.wave_tol)
    scheme = cfg.scheme()
    out = {}
    for name, rep in (("primitive_np", Representation.NP), ("primitive_nc", Representation.NC)):
        state = fo.primitive_from_wave(wave, grid, rep)
        out[name] = run(state, wave, cfg.eps, cfg.s, scheme, keep_snapshots=False).drift
    return out


def _cross_differences(n_snapshots):
    names = list(n_snapshots)
    times = sorted(set.intersection(*(set(v) for v in n_snapshots.values())))
    pairs = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            pairs[f"{a}-{b}"] = [float(np.max(np.abs(n_snapshots[a][t] - n_snapshots[b][t]))) for t in times]
    return {"t": times, "pairs": pairs}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# --- sweeps -----------------------------------------------------------------------------


def refine(cfg: ExperimentConfig, level: int) -> ExperimentConfig:
    """Halve dz and dt ``level`` times, keeping the snapshot times."""
    factor = 2**level
    return replace(cfg, nz=(cfg.nz - 1) * factor + 1, dt=cfg.dt / factor,
                   snapshot_stride=cfg.snapshot_stride * factor)


def sweep_points(cfg: ExperimentConfig, axes: dict[str, list] | None = None) -> list[dict]:
    axes = axes if axes is not None else {a: getattr(cfg, f"sweep_{a}") for a in SWEEP_AXES
                                          if getattr(cfg, f"sweep_{a}")}
    for a in axes:
        if a not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {a!r}; choose from {SWEEP_AXES}")
    if not axes:
        raise ConfigError("no sweep axes given (set sweep_amplitude, sweep_eps, sweep_lambda or sweep_refinement)")
    names = list(axes)
    return [dict(zip(names, combo)) for combo in product(*(axes[n] for n in names))]


def _point_config(cfg, point):
    c = replace(cfg, sweep_amplitude=[], sweep_eps=[], sweep_lambda=[], sweep_refinement=[])
    for axis, value in point.items():
        if axis == "amplitude":
            c = replace(c, amplitude=float(value))
        elif axis == "eps":
            c = replace(c, eps=float(value))
        elif axis == "lambda":
            c = replace(c, lam=float(value))
    if "refinement" in point:
        c = refine(c, int(point["refinement"]))
    return c


def _run_point(args):
    cfg, point, out_dir = args
    row = {"point": out_dir.name, **point}
    try:
        pcfg = _point_config(cfg, point)
        row["advisory"] = bool(pcfg.validate())
        row["smallness"] = energy.smallness_value(pcfg.s, pcfg.lam)
        row["dz"] = pcfg.grid().dz
        row["dt"] = pcfg.dt
        res = run_experiment(pcfg, out_dir=out_dir)
        s = res.summary
        row.update({
            "status": "error" if s["errors"] else "ok",
            "blowup": s["blowup"],
            "M0": s.get("M0", float("nan")),
            "sup_M": s.get("sup_M", float("nan")),
            "C0_empirical": s.get("C0_empirical", float("nan")),
            "drift_max": max(s["drift_sup"].values()),
            "n_drift_max": max(s["n_drift_sup"].values()),
            "suites_passed": res.suites_passed,
        })
        pert = res.trajectories.get("perturbation")
        if pert is not None and pert.report is not None and len(pert.report) > 2:
            rep = pert.report
            row["gradpsi_decay_rate"] = energy.fit_decay_rate(rep.times, rep.column("gradpsi_H2w"), 0.5)
    except Exception as exc:  # one failed point must not stop the sweep
        row.update({"status": "error", "error": f"{type(exc).__name__}: {exc}"})
    return row


SWEEP_COLUMNS = ("point", "amplitude", "eps", "lambda", "refinement", "dz", "dt", "smallness", "advisory",
                 "status", "blowup", "M0", "sup_M", "C0_empirical", "drift_max", "n_drift_max",
                 "gradpsi_decay_rate", "suites_passed", "error")


def fit_order(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = (err > 0) & np.isfinite(err)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[keep]), np.log(err[keep]), 1)[0])


def sweep(cfg: ExperimentConfig, out_dir=None, axes: dict[str, list] | None = None, workers: int = 1,
          figures: bool = False) -> dict:
    """Run every point of the axis product; write ``sweep.csv`` (and an order fit for refinement)."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = sweep_points(cfg, axes)
    jobs = [(cfg, p, out / f"point_{i:03d}") for i, p in enumerate(points)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in r.items()})
    result = {"rows": rows}
    if any("refinement" in p for p in points):
        ok = [r for r in rows if r.get("status") == "ok"]
        order = fit_order([r["dz"] for r in ok], [r["n_drift_max"] for r in ok])
        result["order_fit"] = order
        (out / "order_fit.json").write_text(json.dumps(_jsonable({"drift_order": order}), indent=1) + "\n")
    if figures:
        from . import plotting

        plotting.render_sweep(out, rows)
    return result
