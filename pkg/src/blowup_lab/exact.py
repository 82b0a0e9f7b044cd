"""Explicit critical-mass blow-up solutions and the pseudo-conformal map.

All three families are Q-profiles dilated by a time-dependent width; they are
used as oracles for the integrator.  The discrete residual
i u_t + Delta u + |u|^{4/N} u - W u is evaluated with spectral derivatives in
x and a fourth-order centered difference in t.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ComplexField, GridSpec, laplacian_array, nonlinearity_f
from .groundstate import GroundStateBundle

MIN_WIDTH_CELLS = 4.0


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class ExplicitSolutionSpec:
    kind: str  # "cnls-S", "stark", "repulsive-harmonic"
    dim: int
    E: tuple[float, ...] = ()
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cnls-S", "stark", "repulsive-harmonic"):
            raise ValueError(f"unknown explicit solution {self.kind!r}")
        if not np.all(np.isfinite(self.E)) or not np.isfinite(self.omega):
            raise ValueError("parameters must be finite")

    def evaluate(self, t: float, grid: GridSpec, bundle: GroundStateBundle) -> ComplexField:
        if self.kind == "cnls-S":
            return eval_S_cnls(t, grid, bundle)
        if self.kind == "stark":
            return eval_S_stark(t, self.E, grid, bundle)
        return eval_S_harmonic(t, self.omega, grid, bundle)

    def potential(self, grid: GridSpec, sign: float = 1.0) -> np.ndarray:
        """W on the grid, as displayed with the hypotheses (times ``sign``)."""
        if self.kind == "stark":
            return sign * sum(e * x for e, x in zip(_vec(self.E, grid.dim), grid.coords))
        if self.kind == "repulsive-harmonic":
            return sign * (-(self.omega**2) * grid.r2)
        return np.zeros(grid.shape)


def _vec(E, dim):
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if E.size == 1 and dim > 1:
        E = np.array([E[0]] + [0.0] * (dim - 1))
    if E.size != dim:
        raise ValueError("E must have N components")
    return E


def _check_width(width: float, grid: GridSpec):
    if abs(width) < MIN_WIDTH_CELLS * grid.h:
        raise ResolutionError(f"profile width {abs(width):.3g} below {MIN_WIDTH_CELLS:g} cells")


def eval_S_cnls(t: float, grid: GridSpec, bundle: GroundStateBundle) -> ComplexField:
    """|t|^{-N/2} Q(x/t) e^{-i/t} e^{i|x|^2/(4t)} for t < 0."""
    if not t < 0:
        raise ValueError("the pseudo-conformal soliton is defined for t < 0")
    return eval_S_stark(t, np.zeros(grid.dim), grid, bundle)


def eval_S_stark(t: float, E, grid: GridSpec, bundle: GroundStateBundle) -> ComplexField:
    """Soliton in a linear field: centre t^2 E, extra phase t E.x - t^3|E|^2/3."""
    if t == 0:
        raise ValueError("t must be nonzero")
    _check_width(t, grid)
    N = grid.dim
    E = _vec(E, N)
    ys = [x - t * t * e for x, e in zip(grid.coords, E)]
    r2 = sum(y * y for y in ys)
    q = bundle.profile(np.sqrt(r2) / abs(t))
    ex = sum(e * x for e, x in zip(E, grid.coords))
    phase = r2 / (4 * t) - 1.0 / t + t * ex - t**3 / 3.0 * float(E @ E)
    return ComplexField(grid, abs(t) ** (-N / 2) * q * np.exp(1j * phase))


def eval_S_harmonic(t: float, omega: float, grid: GridSpec, bundle: GroundStateBundle) -> ComplexField:
    """Blow-up solution for the repulsive harmonic potential -omega^2|x|^2.

    The amplitude uses |2 omega / sinh(2 omega t)|^{N/2} so the profile stays
    real and positive for t < 0.
    """
    if t == 0:
        raise ValueError("t must be nonzero")
    if omega == 0:
        return eval_S_cnls(t, grid, bundle)
    N = grid.dim
    sh = np.sinh(2 * omega * t)
    ch = np.cosh(2 * omega * t)
    if sh == 0:
        raise ValueError("sinh(2 omega t) vanishes")
    width = sh / (2 * omega)
    _check_width(width, grid)
    r2 = grid.r2
    q = bundle.profile(np.sqrt(r2) / abs(width))
    phase = (omega * r2 / (2 * sh * ch) - 2 * omega * ch / sh
             + 0.5 * omega * r2 * np.tanh(2 * omega * t))
    return ComplexField(grid, abs(width) ** (-N / 2) * q * np.exp(1j * phase))


# -- residual oracle ----------------------------------------------------------

def pde_residual(family, t: float, grid: GridSpec, W=None, dt: float = 1e-3,
                 mask_radius: float | None = None) -> float:
    """L2 norm of i u_t + Delta u + |u|^{4/N} u - W u at time t.

    ``family(t)`` returns the field at time t.  ``mask_radius`` restricts the
    norm to |x| < mask_radius (for potentials that are only meaningful away
    from the box edge).
    """
    f = [family(t + k * dt).values for k in (-2, -1, 1, 2)]
    ut = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * dt)
    u = family(t).values
    res = 1j * ut + laplacian_array(u, grid) + nonlinearity_f(u, grid.dim)
    if W is not None:
        res = res - W * u
    if mask_radius is not None:
        res = np.where(grid.r < mask_radius, res, 0.0)
    return float(np.sqrt(np.sum(np.abs(res) ** 2) * grid.cell_volume))


def potential_sign_report(spec: ExplicitSolutionSpec, t: float, grid: GridSpec,
                          bundle: GroundStateBundle, mask_fraction: float = 0.6) -> dict[str, float]:
    """Residual of the family under W = +V and W = -V (V the displayed potential)."""
    fam = lambda s: spec.evaluate(s, grid, bundle)  # noqa: E731
    R = mask_fraction * grid.L
    return {f"{lab}": pde_residual(fam, t, grid, W=spec.potential(grid, sg), mask_radius=R)
            for lab, sg in (("+", 1.0), ("-", -1.0))}


# -- pseudo-conformal transform -----------------------------------------------

def spectral_resample(values: np.ndarray, grid: GridSpec, axes_points) -> np.ndarray:
    """Trigonometric interpolant of ``values`` evaluated on a tensor grid.

    ``axes_points`` gives the new sample positions along each axis; points
    outside [-L, L) wrap periodically.
    """
    M = grid.M
    k = 2.0 * np.pi * np.fft.fftfreq(M, grid.h)
    coef = np.fft.fftn(values) / M**grid.dim
    # the Nyquist mode is split symmetrically so real data interpolates to real
    mats = []
    for pts in axes_points:
        pts = np.asarray(pts, dtype=float)
        A = np.exp(1j * np.outer(pts + grid.L, k))
        A[:, M // 2] = np.cos(np.pi / grid.h * (pts + grid.L))
        mats.append(A)
    if grid.dim == 1:
        return mats[0] @ coef
    return mats[0] @ coef @ mats[1].T


def pseudo_conformal(u: ComplexField, t: float, sign: int = 1) -> ComplexField:
    """Map u (the field at time -1/t) to |t|^{-N/2} u(sign x/t) e^{i|x|^2/(4t)}."""
    if t == 0:
        raise ValueError("t must be nonzero")
    grid = u.grid
    pts = sign * grid.axis / t
    if np.max(np.abs(pts)) > grid.L * (1 + 1e-12):
        edge = np.abs(u.values[..., 0]).max() if grid.dim == 2 else abs(u.values[0])
        if edge > 1e-10:
            raise ResolutionError("stretched sample points leave the box where u is not negligible")
    vals = spectral_resample(u.values, grid, [pts] * grid.dim)
    return ComplexField(grid, abs(t) ** (-grid.dim / 2) * vals * np.exp(1j * grid.r2 / (4 * t)))
