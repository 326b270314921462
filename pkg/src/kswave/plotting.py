"""PNG figures written next to the CSV outputs (``--figures``)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_profile(wave, path) -> Path:
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    ax[0].plot(wave.z, wave.N, label="N")
    ax[0].plot(wave.z, wave.P, label="P")
    ax[0].axvline(wave.z_center, color="0.6", lw=0.8, ls=":")
    ax[0].set_xlabel("z")
    ax[0].legend()
    ax[1].semilogy(wave.z, wave.C, label="C")
    ax[1].semilogy(wave.z, wave.N, label="N")
    ax[1].set_xlabel("z")
    ax[1].legend()
    fig.suptitle(f"s = {wave.s:g}, eps = {wave.eps:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_energy(report, path) -> Path:
    t = report.times
    fig, ax = plt.subplots(1, 2, figsize=(10, 3.8))
    for col in ("M", "phi_H3w", "psi_H3", "gradpsi_H2w", "dy_n_L2"):
        y = report.column(col)
        ax[0].semilogy(t, np.where(y > 0, y, np.nan), label=col)
    ax[0].set_xlabel("t")
    ax[0].legend(fontsize=8)
    for col in ("diss_phi", "diss_psi", "diss_eps_psi4"):
        ax[1].plot(t, report.column(col), label=col)
    ax[1].set_xlabel("t")
    ax[1].set_title("accumulated dissipation")
    ax[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_drift(trajectories, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for name, traj in trajectories.items():
        t = np.asarray(traj.series["t"])
        d = np.asarray(traj.series["n_drift_sup"])
        ax.semilogy(t, np.where(d > 0, d, np.nan), label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("sup |n - n(0)|")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_run(out_dir, wave, trajectories) -> list[Path]:
    out = Path(out_dir)
    paths = [plot_profile(wave, out / "profile.png"), plot_drift(trajectories, out / "drift.png")]
    pert = trajectories.get("perturbation")
    if pert is not None and pert.report is not None and len(pert.report):
        paths.append(plot_energy(pert.report, out / "energy.png"))
    return paths


def render_sweep(out_dir, rows) -> list[Path]:
    out = Path(out_dir)
    ok = [r for r in rows if r.get("status") == "ok"]
    paths = []
    if not ok:
        return paths
    if "refinement" in ok[0]:
        fig, ax = plt.subplots(figsize=(5, 3.8))
        ax.loglog([r["dz"] for r in ok], [r["n_drift_max"] for r in ok], "o-")
        ax.set_xlabel("dz")
        ax.set_ylabel("max n drift")
        path = out / "refinement.png"
    else:
        axis = next(a for a in ("amplitude", "eps", "lambda") if a in ok[0])
        fig, ax = plt.subplots(figsize=(5, 3.8))
        ax.plot([r[axis] for r in ok], [r["C0_empirical"] for r in ok], "o-")
        if axis == "amplitude":
            ax.set_xscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("empirical C0")
        path = out / f"sweep_{axis}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths
