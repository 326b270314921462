"""Command line entry point: ``kswave {wave,run,sweep,check,poincare}``.

Exit codes: 0 success, 2 validation failure, 3 blow-up detected, 4 config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import energy
from . import field_ops as fo
from .errors import ConfigError, KSWaveError, ParameterError
from .evolution import run
from .field_ops import PerturbState, Representation
from .harness import ExperimentConfig, load_config, run_experiment, sweep
from .wave_profile import explicit_wave_eps0, export_profile, solve_wave, uniform_grid, validate_profile

EXIT_OK, EXIT_VALIDATION, EXIT_BLOWUP, EXIT_CONFIG = 0, 2, 3, 4


def _section(title: str, lines) -> None:
    print(f"=== {title} ===")
    for line in lines:
        print(line)
    print(f"=== end {title} ===")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for a in cfg.validate(strict=args.strict):
        print(f"advisory: {a}", file=sys.stderr)
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve(cfg: ExperimentConfig):
    if cfg.eps == 0:
        return explicit_wave_eps0(cfg.s, uniform_grid(cfg.L_z, dz=cfg.wave_dz), cfg.c_plus)
    return solve_wave(cfg.wave_params(), half_length=cfg.L_z, dz=cfg.wave_dz, tol=cfg.wave_tol)


def cmd_wave(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    wave = _solve(cfg)
    report = validate_profile(wave)
    export_profile(wave, out / "wave.csv")
    (out / "validation.txt").write_text(report.to_text() + "\n")
    _section("wave", [f"s = {wave.s:g}", f"eps = {wave.eps:g}", f"nodes = {wave.z.size}",
                      f"dz = {wave.dz:.6g}", f"z_center = {wave.z_center:.12g}",
                      f"N_left = {wave.N[0]:.15g}", f"n_minus = {wave.params.n_minus:.15g}"])
    _section("validation", report.to_text().splitlines())
    if args.figures:
        from . import plotting

        plotting.plot_profile(wave, out / "profile.png")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    res = run_experiment(cfg, out_dir=out, strict=args.strict, figures=args.figures)
    s = res.summary
    lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(s.items()) if k != "wave_validation"]
    _section("summary", lines)
    _section("suites", [f"{k}: {'PASS' if v else 'FAIL'}" for k, v in s["suites"].items()])
    if res.blowup:
        return EXIT_BLOWUP
    return EXIT_OK if res.suites_passed else EXIT_VALIDATION


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    result = sweep(cfg, out_dir=out, workers=args.workers, figures=args.figures)
    rows = result["rows"]
    lines = []
    for r in rows:
        axes = ", ".join(f"{a}={r[a]}" for a in ("amplitude", "eps", "lambda", "refinement") if a in r)
        extra = r.get("error") or f"C0={r.get('C0_empirical', float('nan')):.6g} drift={r.get('n_drift_max', 0):.3e}"
        lines.append(f"{r['point']}  {axes}  {r.get('status')}  {extra}")
    if "order_fit" in result:
        lines.append(f"drift order fit = {result['order_fit']:.4f}")
    _section("sweep", lines)
    if rows and all(r.get("status") == "error" for r in rows):
        return EXIT_VALIDATION
    return EXIT_OK


def check_suites(cfg: ExperimentConfig) -> dict[str, bool]:
    """Invariant suites that need no long evolution."""
    results = {}
    wave = _solve(cfg)
    results["wave_profile"] = validate_profile(wave).passed
    results["coefficient_positivity"] = min(energy.coefficient_positivity(wave).values()) > 0
    results["poincare"] = energy.poincare_check(cfg.lam, cfg.ny, seed=cfg.seed).passed

    grid = cfg.grid()
    rng = np.random.default_rng(cfg.seed)
    Z, Y = grid.mesh()
    f = np.exp(-Z**2) * np.sin(2 * np.pi * Y / grid.lam) + 1e-3 * rng.standard_normal(grid.shape) * np.exp(-Z**2)
    results["curl_of_gradient"] = float(np.max(np.abs(fo.curl(fo.grad(f, grid), grid)[2:-2]))) < 1e-8
    shifted = np.roll(f, 1, axis=1)
    results["y_shift_commutes"] = bool(np.allclose(fo.d_yy(shifted, grid), np.roll(fo.d_yy(f, grid), 1, axis=1),
                                                   rtol=0, atol=1e-10 * np.max(np.abs(fo.d_yy(f, grid)))))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gwave = fo.wave_on_grid(cfg.wave_params(), grid, tol=cfg.wave_tol)
    short = replace(cfg.scheme(), t_end=min(cfg.t_end, 10 * cfg.dt), snapshot_stride=1)
    zero = run(PerturbState.zero(grid), gwave, cfg.eps, cfg.s, short, keep_snapshots=False)
    results["zero_perturbation_fixed"] = zero.error is None and zero.drift == 0.0
    np_run = run(fo.primitive_from_wave(gwave, grid, Representation.NP), gwave, cfg.eps, cfg.s, short,
                 keep_snapshots=False)
    results["np_fixed_point_finite"] = np_run.error is None and np.isfinite(np_run.drift)
    return results


def cmd_check(args) -> int:
    cfg = _config(args)
    results = check_suites(cfg)
    _section("check", [f"{k}: {'PASS' if v else 'FAIL'}" for k, v in results.items()])
    return EXIT_OK if all(results.values()) else EXIT_VALIDATION


def cmd_poincare(args) -> int:
    if args.config:
        cfg = _config(args)
        lam, ny, s, seed = cfg.lam, cfg.ny, cfg.s, cfg.seed
    else:
        lam, ny, s, seed = args.lam, args.ny, args.s, args.seed
    result = energy.poincare_check(lam, ny, n_samples=args.samples, seed=seed, s=s)
    _section("poincare", result.to_text().splitlines())
    return EXIT_OK if result.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kswave", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", metavar="PATH", help="flat TOML config (defaults when omitted)")
        p.add_argument("--out", metavar="DIR", help="output directory (default: output_dir from config)")
        p.add_argument("--strict", action="store_true", help="turn advisories into errors")
        p.add_argument("--figures", action="store_true", help="also write PNG figures")
        if workers:
            p.add_argument("--workers", type=int, default=1, metavar="N")

    common(sub.add_parser("wave", help="solve, validate and export the wave profile"))
    common(sub.add_parser("run", help="run a single experiment"))
    common(sub.add_parser("sweep", help="run a parameter sweep"), workers=True)
    common(sub.add_parser("check", help="run the invariant suites only"))
    p = sub.add_parser("poincare", help="Poincare constant battery")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {"wave": cmd_wave, "run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "poincare": cmd_poincare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KSWaveError as exc:
        print(f"validation failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
