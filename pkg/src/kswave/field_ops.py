"""Grids, difference operators and state conversions on the truncated strip.

Fields are arrays of shape ``(nz, ny)``: axis 0 is the co-moving coordinate
z in [-L_z, L_z] (nodes at both ends), axis 1 the periodic coordinate y in
[0, lambda) (the node y = lambda is identified with y = 0).  Vector fields
carry a leading axis of length 2 holding the (z, y) components.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import CurlError, GridMismatchError, ParameterError
from .wave_profile import WaveParams, WaveProfile, explicit_wave_eps0, solve_wave

MAX_NODES = 1 << 24


@dataclass(frozen=True)
class StripGrid:
    L_z: float
    nz: int
    lam: float
    ny: int
    y_scheme: str = "fd"

    def __post_init__(self):
        if self.L_z <= 0 or self.lam <= 0:
            raise ParameterError("L_z and lambda must be positive")
        if self.nz < 16:
            raise ParameterError("nz must be at least 16")
        if self.ny < 4 or self.ny % 2:
            raise ParameterError("ny must be even and at least 4")
        if self.nz * self.ny > MAX_NODES:
            raise ParameterError(f"grid {self.nz}x{self.ny} exceeds the memory budget of {MAX_NODES} nodes")
        if self.y_scheme not in ("fd", "spectral"):
            raise ParameterError("y_scheme must be 'fd' or 'spectral'")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nz, self.ny)

    @property
    def dz(self) -> float:
        return 2.0 * self.L_z / (self.nz - 1)

    @property
    def dy(self) -> float:
        return self.lam / self.ny

    @cached_property
    def z(self) -> np.ndarray:
        return np.linspace(-self.L_z, self.L_z, self.nz)

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.z, self.y, indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def refined(self, level: int = 1) -> "StripGrid":
        """Halve dz ``level`` times; ny is kept."""
        return StripGrid(self.L_z, (self.nz - 1) * 2**level + 1, self.lam, self.ny, self.y_scheme)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights in z times the rectangle rule in y."""
        wz = np.full(self.nz, self.dz)
        wz[0] = wz[-1] = 0.5 * self.dz
        return wz[:, None] * self.dy

    def buffer_mask(self, fraction: float = 0.1) -> np.ndarray:
        """Boolean z-mask of the buffer zones next to z = +-L_z."""
        width = fraction * self.L_z
        return np.abs(self.z) >= self.L_z - width - 1e-12


def _check(f, grid):
    if np.shape(f)[-2:] != grid.shape:
        raise GridMismatchError(f"field shape {np.shape(f)} does not match grid {grid.shape}")


# --- one-dimensional building blocks -------------------------------------------


def d_z(f, grid: StripGrid) -> np.ndarray:
    """Centered first difference in z, one-sided second order at both ends."""
    _check(f, grid)
    return np.gradient(f, grid.dz, axis=-2, edge_order=2)


def d_zz(f, grid: StripGrid) -> np.ndarray:
    _check(f, grid)
    f = np.asarray(f, dtype=float)
    h2 = grid.dz**2
    out = np.empty_like(f)
    out[..., 1:-1, :] = (f[..., 2:, :] - 2.0 * f[..., 1:-1, :] + f[..., :-2, :]) / h2
    out[..., 0, :] = (2.0 * f[..., 0, :] - 5.0 * f[..., 1, :] + 4.0 * f[..., 2, :] - f[..., 3, :]) / h2
    out[..., -1, :] = (2.0 * f[..., -1, :] - 5.0 * f[..., -2, :] + 4.0 * f[..., -3, :] - f[..., -4, :]) / h2
    return out


def _spectral_y(f, grid, order):
    k = grid.wavenumbers
    sym = (1j * k) ** order
    if order % 2:
        sym[grid.ny // 2] = 0.0
    return np.real(np.fft.ifft(np.fft.fft(f, axis=-1) * sym, axis=-1))


def d_y(f, grid: StripGrid) -> np.ndarray:
    _check(f, grid)
    if grid.y_scheme == "spectral":
        return _spectral_y(f, grid, 1)
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * grid.dy)


def d_yy(f, grid: StripGrid) -> np.ndarray:
    _check(f, grid)
    if grid.y_scheme == "spectral":
        return _spectral_y(f, grid, 2)
    return (np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)) / grid.dy**2


def d_yy_symbol(grid: StripGrid) -> np.ndarray:
    """Fourier symbol of :func:`d_yy`, used by the periodic implicit solves."""
    k = grid.wavenumbers
    if grid.y_scheme == "spectral":
        return -(k**2)
    return (2.0 * np.cos(k * grid.dy) - 2.0) / grid.dy**2


def partial(f, grid: StripGrid, i: int, j: int) -> np.ndarray:
    """Mixed derivative d_z^i d_y^j built from the first and second difference stencils."""
    out = np.asarray(f, dtype=float)
    for _ in range(i // 2):
        out = d_zz(out, grid)
    if i % 2:
        out = d_z(out, grid)
    if grid.y_scheme == "spectral" and j:
        return _spectral_y(out, grid, j)
    for _ in range(j // 2):
        out = d_yy(out, grid)
    if j % 2:
        out = d_y(out, grid)
    return out


# --- vector calculus ---------------------------------------------------------------


def grad(f, grid: StripGrid) -> np.ndarray:
    return np.stack([d_z(f, grid), d_y(f, grid)])


def div(G, grid: StripGrid) -> np.ndarray:
    G = np.asarray(G)
    if G.shape[0] != 2:
        raise GridMismatchError("vector field needs a leading axis of length 2")
    return d_z(G[0], grid) + d_y(G[1], grid)


def laplacian(f, grid: StripGrid) -> np.ndarray:
    return d_zz(f, grid) + d_yy(f, grid)


def curl(G, grid: StripGrid) -> np.ndarray:
    """Scalar curl d_z G_y - d_y G_z."""
    G = np.asarray(G)
    return d_z(G[1], grid) - d_y(G[0], grid)


def integrate(f, grid: StripGrid) -> float:
    _check(f, grid)
    return float(np.sum(np.asarray(f) * grid.quadrature_weights()))


def inner(F, G, grid: StripGrid) -> float:
    """L2 inner product, summed over vector components when present."""
    prod = np.asarray(F) * np.asarray(G)
    if prod.ndim == 3:
        prod = prod.sum(axis=0)
    return integrate(prod, grid)


# --- Cole-Hopf pair --------------------------------------------------------------


def cole_hopf_forward(logc, grid: StripGrid) -> np.ndarray:
    """p = -grad(log c)."""
    _check(logc, grid)
    if not np.all(np.isfinite(logc)):
        raise ParameterError("log c must be finite")
    return -grad(logc, grid)


def curl_residual(p, grid: StripGrid) -> float:
    """max|curl p| scaled by max|p|/min(dz, dy); zero for exact discrete gradients."""
    scale = float(np.max(np.abs(p))) / min(grid.dz, grid.dy)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(curl(p, grid)))) / scale


def cole_hopf_inverse(p, anchor: float, grid: StripGrid, curl_tol: float = 1e-8) -> np.ndarray:
    """Recover log c from p = -grad(log c) by path integration.

    Integrates -p_z along z on the row y = 0, then -p_y along y on every z line,
    and shifts so the node (z = L_z, y = lambda/2) carries ``anchor``.

    Raises:
        CurlError: p is not a discrete gradient (scaled curl above curl_tol).
    """
    p = np.asarray(p, dtype=float)
    _check(p[0], grid)
    residual = curl_residual(p, grid)
    if residual > curl_tol:
        raise CurlError(f"input is not a gradient: scaled curl {residual:.3e} > {curl_tol:.1e}")
    base = cumulative_trapezoid(-p[0][:, 0], dx=grid.dz, initial=0.0)
    along_y = cumulative_trapezoid(-p[1], dx=grid.dy, axis=1, initial=0.0)
    logc = base[:, None] + along_y
    return logc - logc[-1, grid.ny // 2] + anchor


# --- states ------------------------------------------------------------------------


class Representation(str, enum.Enum):
    PERTURB = "PERTURB"
    NP = "NP_FORM"
    NC = "NC_FORM"

    @property
    def field_names(self) -> tuple[str, ...]:
        return _FIELD_NAMES[self]


_FIELD_NAMES = {
    Representation.PERTURB: ("phi1", "phi2", "psi"),
    Representation.NP: ("n", "p1", "p2"),
    Representation.NC: ("n", "logc"),
}


@dataclass
class PerturbState:
    grid: StripGrid
    t: float
    phi1: np.ndarray
    phi2: np.ndarray
    psi: np.ndarray

    representation = Representation.PERTURB

    def __post_init__(self):
        for name in ("phi1", "phi2", "psi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            _check(arr, self.grid)
            setattr(self, name, arr)

    @property
    def phi(self) -> np.ndarray:
        return np.stack([self.phi1, self.phi2])

    def fields(self) -> dict[str, np.ndarray]:
        return {"phi1": self.phi1, "phi2": self.phi2, "psi": self.psi}

    def copy(self) -> "PerturbState":
        return PerturbState(self.grid, self.t, self.phi1.copy(), self.phi2.copy(), self.psi.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.phi1, self.phi2, self.psi))

    def buffer_violation(self, fraction: float = 0.1) -> float:
        """Largest |field| value inside the boundary buffer zones."""
        mask = self.grid.buffer_mask(fraction)
        return max(float(np.max(np.abs(a[mask]))) for a in (self.phi1, self.phi2, self.psi))

    @classmethod
    def zero(cls, grid: StripGrid, t: float = 0.0) -> "PerturbState":
        return cls(grid, t, grid.zeros(), grid.zeros(), grid.zeros())


@dataclass
class PrimitiveState:
    grid: StripGrid
    t: float
    representation: Representation
    data: dict[str, np.ndarray]
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.representation = Representation(self.representation)
        if self.representation is Representation.PERTURB:
            raise ParameterError("use PerturbState for the perturbation representation")
        expected = set(self.representation.field_names)
        if set(self.data) != expected:
            raise ParameterError(f"{self.representation.value} needs fields {sorted(expected)}")
        for k, v in self.data.items():
            arr = np.asarray(v, dtype=float)
            _check(arr, self.grid)
            self.data[k] = arr

    @property
    def n(self) -> np.ndarray:
        return self.data["n"]

    @property
    def p(self) -> np.ndarray:
        if self.representation is Representation.NP:
            return np.stack([self.data["p1"], self.data["p2"]])
        return cole_hopf_forward(self.data["logc"], self.grid)

    @property
    def logc(self) -> np.ndarray:
        return self.data["logc"]

    def fields(self) -> dict[str, np.ndarray]:
        return dict(self.data)

    def copy(self) -> "PrimitiveState":
        return PrimitiveState(self.grid, self.t, self.representation,
                              {k: v.copy() for k, v in self.data.items()}, dict(self.flags))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.data.values())


# --- conversions -------------------------------------------------------------------


def wave_on_grid(params: WaveParams, grid: StripGrid, **solver_kwargs) -> WaveProfile:
    """Traveling wave sampled on the z nodes of ``grid`` (closed form when eps = 0)."""
    if params.eps == 0:
        return explicit_wave_eps0(params.s, grid.z, params.c_plus)
    return solve_wave(params, half_length=grid.L_z, dz=None, nz=grid.nz, **solver_kwargs)


def _check_wave(wave: WaveProfile, grid: StripGrid):
    if wave.z.shape != (grid.nz,) or not np.allclose(wave.z, grid.z, rtol=0, atol=1e-9 * grid.L_z):
        raise GridMismatchError("wave profile is not sampled on the grid's z nodes")


def reconstruct_primitive(perturb: PerturbState, wave: WaveProfile) -> PrimitiveState:
    """n = N + div(phi), p = (P, 0) + grad(psi).  Negative n is flagged, never clamped."""
    grid = perturb.grid
    _check_wave(wave, grid)
    n = wave.N[:, None] + div(perturb.phi, grid)
    gpsi = grad(perturb.psi, grid)
    p1 = wave.P[:, None] + gpsi[0]
    state = PrimitiveState(grid, perturb.t, Representation.NP, {"n": n, "p1": p1, "p2": gpsi[1]})
    n_min = float(np.min(n))
    if n_min < 0:
        state.flags["negative_n"] = n_min
        warnings.warn(f"reconstructed density is negative (min {n_min:.3e}); perturbation too large",
                      RuntimeWarning, stacklevel=2)
    return state


def extract_perturbation_gradient_part(primitive: PrimitiveState, wave: WaveProfile):
    """Derivative-level perturbation (u, v) = (n - N, p - (P, 0))."""
    if primitive.representation is not Representation.NP:
        raise ParameterError("extract_perturbation_gradient_part needs an NP_FORM state")
    _check_wave(wave, primitive.grid)
    u = primitive.n - wave.N[:, None]
    v = np.stack([primitive.data["p1"] - wave.P[:, None], primitive.data["p2"].copy()])
    return u, v


def primitive_from_wave(wave: WaveProfile, grid: StripGrid, representation=Representation.NP,
                        perturb: PerturbState | None = None) -> PrimitiveState:
    """Primitive state of the wave plus an optional antiderivative perturbation.

    For NC_FORM the chemical variable is log c = log C - psi.
    """
    representation = Representation(representation)
    perturb = perturb if perturb is not None else PerturbState.zero(grid)
    np_state = reconstruct_primitive(perturb, wave)
    if representation is Representation.NP:
        return np_state
    logc = wave.log_C[:, None] - perturb.psi
    return PrimitiveState(grid, perturb.t, Representation.NC, {"n": np_state.n, "logc": logc},
                          dict(np_state.flags))


def to_np_form(state: PrimitiveState) -> PrimitiveState:
    if state.representation is Representation.NP:
        return state
    p = cole_hopf_forward(state.logc, state.grid)
    return PrimitiveState(state.grid, state.t, Representation.NP, {"n": state.n.copy(), "p1": p[0], "p2": p[1]})
