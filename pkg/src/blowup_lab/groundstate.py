"""Ground state Q of -Delta Q + Q - Q^{1+4/N} = 0 and derived constants.

N = 1 uses the closed form Q(x) = 3^{1/4} sech^{1/2}(2x).  N = 2 is obtained
by shooting on Q(0) for the radial ODE Q'' + Q'/r - Q + Q^3 = 0 with a
classical RK4 march, bisecting between "Q crosses zero" (Q(0) too large) and
"Q' turns positive" (Q(0) too small).  Past the point where the shot is
trustworthy the profile is continued by the linear tail c K_0(r).
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicHermiteSpline

from .fields import ComplexField, GridSpec, gradient_sq, integrate as grid_integrate
from .fields import laplacian_array, load_snapshot, mass, save_snapshot

log = logging.getLogger(__name__)

Q0_1D = 3.0**0.25


class ShootingError(RuntimeError):
    def __init__(self, msg, bracket):
        super().__init__(f"{msg} (bracket tried: {bracket})")
        self.bracket = bracket


@dataclass(frozen=True)
class RadialMesh:
    h_r: float = 1e-3
    R_max: float = 30.0

    def nodes(self) -> np.ndarray:
        n = int(round(self.R_max / self.h_r))
        return self.h_r * np.arange(n + 1)


@dataclass
class RadialProfile:
    """Real radial function sampled on a uniform mesh, with an evaluator for
    arbitrary radii and the first two radial derivatives."""

    r: np.ndarray
    values: np.ndarray
    dim: int
    deriv: np.ndarray | None = None
    _spline: CubicHermiteSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.deriv is not None and self._spline is None:
            self._spline = CubicHermiteSpline(self.r, self.values, self.deriv)

    @property
    def h_r(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def R_max(self) -> float:
        return float(self.r[-1])

    def __call__(self, rr, nu: int = 0):
        rr = np.asarray(rr, dtype=float)
        out = np.zeros_like(rr)
        inside = rr <= self.R_max
        out[inside] = self._spline(rr[inside], nu)
        return out


class _ClosedForm1D:
    """Q(x) = 3^{1/4} sech^{1/2}(2x) and its derivatives, evaluated at |x|."""

    def __call__(self, rr, nu: int = 0):
        x = np.asarray(rr, dtype=float)
        with np.errstate(over="ignore"):
            sech = 1.0 / np.cosh(2.0 * x)
        q = Q0_1D * np.sqrt(sech)
        if nu == 0:
            return q
        th = np.tanh(2.0 * x)
        if nu == 1:
            return -q * th
        if nu == 2:
            return q - 3.0 * q * sech**2
        raise ValueError("only derivatives up to order 2")


class _ShotProfile:
    """Spline of the shooting solution on [0, r_match], c K_0(r) beyond."""

    def __init__(self, spline: CubicHermiteSpline, r_match: float, c_tail: float):
        self.spline = spline
        self.r_match = r_match
        self.c_tail = c_tail

    def __call__(self, rr, nu: int = 0):
        rr = np.asarray(rr, dtype=float)
        out = np.empty_like(rr)
        inner = rr <= self.r_match
        out[inner] = self.spline(rr[inner], nu)
        t = rr[~inner]
        c = self.c_tail
        if nu == 0:
            out[~inner] = c * special.k0(t)
        elif nu == 1:
            out[~inner] = -c * special.k1(t)
        else:
            out[~inner] = c * (special.k0(t) + special.k1(t) / t)
        return out


@dataclass
class GroundStateBundle:
    dim: int
    Q: RadialProfile
    mass_sq: float
    virial_sq: float
    gn_constant: float
    residual: float
    mesh: RadialMesh
    evaluator: object = field(repr=False, default=None)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def q0(self) -> float:
        return float(self.evaluator(np.array([0.0]))[0])

    def profile(self, rr, nu: int = 0):
        """Q, Q' or Q'' (radial derivatives) at radii ``rr``."""
        return self.evaluator(np.abs(np.asarray(rr, dtype=float)), nu)

    def sample(self, grid: GridSpec, scale: float = 1.0, shift=None) -> np.ndarray:
        """Q((x + shift)/scale) on the grid (no amplitude factor)."""
        return self.profile(_shifted_radius(grid, scale, shift))

    def gradient_sample(self, grid: GridSpec, scale: float = 1.0, shift=None) -> list[np.ndarray]:
        """(grad Q)(y) at y = (x + shift)/scale, Cartesian components."""
        ys = _shifted_coords(grid, scale, shift)
        rr = np.sqrt(sum(y * y for y in ys))
        dq = self.profile(rr, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return [np.where(rr > 0, dq * y / rr, 0.0) for y in ys]

    def on_grid(self, grid: GridSpec) -> ComplexField:
        """Sampled continuum profile Q on the grid (memoized)."""
        key = ("sample", grid)
        if key not in self._cache:
            self._cache[key] = ComplexField(grid, self.sample(grid))
        return self._cache[key]

    def discrete_on_grid(self, grid: GridSpec, tol: float = 1e-13) -> ComplexField:
        """Ground state of the spectrally discretized equation on this periodic grid.

        Differs from the sampled profile by the periodic images of the tail
        (~e^{-L}); used by the linearized operators so that L_- Q = 0 holds to
        solver precision on the box.
        """
        key = ("discrete", grid)
        if key not in self._cache:
            q0 = self.sample(grid)
            self._cache[key] = ComplexField(grid, petviashvili(q0, grid, tol=tol))
        return self._cache[key]

    def to_meta(self) -> dict:
        return {"N": self.dim, "mass_sq": self.mass_sq, "virial_sq": self.virial_sq,
                "residual": self.residual, "gn_constant": self.gn_constant,
                "h_r": self.mesh.h_r, "R_max": self.mesh.R_max}


def _shifted_coords(grid: GridSpec, scale: float, shift):
    coords = grid.coords
    if shift is None:
        shift = (0.0,) * grid.dim
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (grid.dim,))
    return [(c + s) / scale for c, s in zip(coords, shift)]


def _shifted_radius(grid: GridSpec, scale: float, shift):
    ys = _shifted_coords(grid, scale, shift)
    return np.sqrt(sum(y * y for y in ys))


# -- N = 2 shooting -----------------------------------------------------------

def _series_coeffs(a: float, terms: int = 8) -> np.ndarray:
    """Coefficients c_k of Q = sum c_k r^{2k} near the origin (N = 2)."""
    c = np.zeros(terms)
    c[0] = a
    for k in range(terms - 1):
        cube = sum(c[i] * c[j] * c[k - i - j] for i in range(k + 1) for j in range(k + 1 - i))
        c[k + 1] = (c[k] - cube) / (2 * k + 2) ** 2
    return c


def _rk4_shot(a: float, h: float, r_end: float, record: bool = False, r_series: float = 0.05):
    """March Q'' = Q - Q^3 - Q'/r, using the power series for r <= r_series.

    Returns (event, r_stop[, r, Q, P]): event +1 when Q < 0, -1 when Q' > 0,
    0 when r_end is reached.
    """
    c = _series_coeffs(a)
    k0 = max(1, int(round(r_series / h)))
    n = int(round(r_end / h))
    r0 = h * np.arange(k0 + 1)
    q0 = np.polynomial.polynomial.polyval(r0 * r0, c)
    p0 = np.polynomial.polynomial.polyval(r0 * r0, c[1:] * 2 * np.arange(1, len(c))) * r0
    r, q, p = r0[-1], q0[-1], p0[-1]
    if record:
        rs = np.empty(n + 1)
        qs = np.empty(n + 1)
        ps = np.empty(n + 1)
        rs[: k0 + 1], qs[: k0 + 1], ps[: k0 + 1] = r0, q0, p0
    h2 = 0.5 * h
    event = 0
    i = k0
    for i in range(k0 + 1, n + 1):
        k1q = p
        k1p = q - q * q * q - p / r
        qq, pp = q + h2 * k1q, p + h2 * k1p
        rm = r + h2
        k2q = pp
        k2p = qq - qq * qq * qq - pp / rm
        qq, pp = q + h2 * k2q, p + h2 * k2p
        k3q = pp
        k3p = qq - qq * qq * qq - pp / rm
        qq, pp = q + h * k3q, p + h * k3p
        r = i * h
        k4q = pp
        k4p = qq - qq * qq * qq - pp / r
        q += h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if record:
            rs[i], qs[i], ps[i] = r, q, p
        if q < 0.0:
            event = 1
            break
        if p > 0.0:
            event = -1
            break
    if record:
        return event, r, rs[: i + 1], qs[: i + 1], ps[: i + 1]
    return event, r


def shoot_q0(h: float = 1e-3, bracket=(2.0, 2.5), r_end: float = 25.0, max_iter: int = 80):
    lo, hi = bracket
    ev_lo, _ = _rk4_shot(lo, h, r_end)
    ev_hi, _ = _rk4_shot(hi, h, r_end)
    if not (ev_lo == -1 and ev_hi == 1):
        raise ShootingError("bracket does not straddle the ground state", bracket)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        ev, _ = _rk4_shot(mid, h, r_end)
        if ev == 1:
            hi = mid
        else:
            lo = mid
    return lo, hi


def _fd_residual(r, q, N, h):
    """ODE residual Q'' + (N-1)Q'/r - Q + Q^{1+4/N} by 4th-order differences
    on the even extension."""
    ext = np.concatenate([q[2:0:-1], q])
    d2 = (-ext[4:] + 16 * ext[3:-1] - 30 * ext[2:-2] + 16 * ext[1:-3] - ext[:-4]) / (12 * h * h)
    d1 = (ext[:-4] - 8 * ext[1:-3] + 8 * ext[3:-1] - ext[4:]) / (12 * h)
    rr = r[: len(d2)]
    qq = q[: len(d2)]
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = np.where(rr > 0, d2 + (N - 1) * d1 / rr, N * d2)
    return lap - qq + qq ** (1 + 4.0 / N)


def solve_ground_state(N: int, mesh: RadialMesh | None = None) -> GroundStateBundle:
    if N not in (1, 2):
        raise ValueError(f"unsupported dimension {N}")
    mesh = mesh or RadialMesh()
    r = mesh.nodes()
    if N == 1:
        ev = _ClosedForm1D()
        q, dq, d2q = ev(r), ev(r, 1), ev(r, 2)
        residual = float(np.max(np.abs(d2q - q + q**5)))
        mass_sq = 2.0 * integrate.quad(lambda x: ev(np.array([x]))[0] ** 2, 0, np.inf, limit=200)[0]
        virial_sq = 2.0 * integrate.quad(lambda x: x * x * ev(np.array([x]))[0] ** 2, 0, np.inf,
                                         limit=200)[0]
        profile = RadialProfile(r, q, 1, dq)
    else:
        ev, residual = _solve_radial_2d(mesh)
        q, dq = ev(r), ev(r, 1)
        profile = RadialProfile(r, q, 2, dq)
        w = 2.0 * np.pi
        rm = ev.r_match
        inner = r <= rm
        mass_sq = w * (integrate.simpson(q[inner] ** 2 * r[inner], x=r[inner])
                       + integrate.quad(lambda t: ev.c_tail**2 * special.k0(t) ** 2 * t,
                                        r[inner][-1], np.inf, limit=200)[0])
        virial_sq = w * (integrate.simpson(q[inner] ** 2 * r[inner] ** 3, x=r[inner])
                         + integrate.quad(lambda t: ev.c_tail**2 * special.k0(t) ** 2 * t**3,
                                          r[inner][-1], np.inf, limit=200)[0])
    gn = (1.0 + 2.0 / N) / mass_sq ** (2.0 / N)
    return GroundStateBundle(N, profile, mass_sq, virial_sq, gn, residual, mesh, ev)


def _solve_radial_2d(mesh: RadialMesh):
    h = mesh.h_r
    lo, hi = shoot_q0(h)
    a = 0.5 * (lo + hi)
    r_end = min(mesh.R_max, 25.0)
    _, _, r1, q1, _ = _rk4_shot(lo, h, r_end, record=True)
    _, _, r2, q2, _ = _rk4_shot(hi, h, r_end, record=True)
    _, _, rs, qs, ps = _rk4_shot(a, h, r_end, record=True)
    n = min(len(q1), len(q2), len(qs))
    spread = np.abs(q1[:n] - q2[:n]) / np.maximum(np.abs(qs[:n]), 1e-300)
    bad = np.nonzero(spread > 1e-7)[0]
    limit = rs[bad[0]] if bad.size else rs[n - 1]
    r_match = min(12.0, limit - 1.0)
    if r_match < 5.0:
        raise ShootingError("shot diverges before the tail can be matched", (lo, hi))
    k = int(round(r_match / h))
    r_match = rs[k]
    c_tail = qs[k] / special.k0(r_match)
    spline = CubicHermiteSpline(rs[: k + 1], qs[: k + 1], ps[: k + 1])
    ev = _ShotProfile(spline, r_match, c_tail)
    res_inner = _fd_residual(rs[: k + 1], qs[: k + 1], 2, h)
    # the K_0 tail solves the linearized equation; its residual is Q^3
    res_tail = (c_tail * special.k0(r_match)) ** 3
    residual = float(max(np.max(np.abs(res_inner[:-2])), res_tail))
    log.debug("N=2 shooting: Q(0)=%.15f r_match=%.2f residual=%.2e", a, r_match, residual)
    return ev, residual


# -- discrete ground state ----------------------------------------------------

def petviashvili(q0: np.ndarray, grid: GridSpec, tol: float = 1e-13, max_iter: int = 500) -> np.ndarray:
    """Petviashvili iteration for -Delta Q + Q = Q^{1+4/N} on the periodic grid."""
    p = 1.0 + 4.0 / grid.dim
    gamma = p / (p - 1.0)
    sym = 1.0 + grid.k2
    q = np.real(q0).astype(float)
    for _ in range(max_iter):
        qh = np.fft.fftn(q)
        nl = np.fft.fftn(np.abs(q) ** (p - 1.0) * q)
        m = np.real(np.sum(sym * np.abs(qh) ** 2)) / np.real(np.sum(np.conj(qh) * nl))
        q = np.real(np.fft.ifftn(m**gamma * nl / sym))
        res = -np.real(laplacian_array(q, grid)) + q - np.abs(q) ** (p - 1.0) * q
        if np.max(np.abs(res)) < tol:
            break
    return q


# -- Gagliardo-Nirenberg ------------------------------------------------------

def gn_quotient(v: ComplexField, bundle: GroundStateBundle) -> float:
    """J(v) = ||v||_p^p / [(1+2/N)(||v||_2/||Q||_2)^{4/N} ||grad v||_2^2]."""
    N = v.grid.dim
    p = 2.0 + 4.0 / N
    lp = grid_integrate(np.abs(v.values) ** p, v.grid)
    ratio = (mass(v) / bundle.mass_sq) ** (2.0 / N)
    return lp / ((1.0 + 2.0 / N) * ratio * gradient_sq(v.values, v.grid))


def gn_sharpness(bundle: GroundStateBundle, trials) -> list[float]:
    out = []
    for v in trials:
        if mass(v) == 0:
            raise ValueError("trial field must be nonzero")
        out.append(gn_quotient(v, bundle))
    return out


def critical_energy(u: ComplexField) -> float:
    from .fields import energy
    return energy(u)


# -- subcritical check --------------------------------------------------------

@dataclass
class GlobalBoundReport:
    sup_grad: float
    initial_grad: float
    ratio: float
    blowup_triggered: bool
    grad_series: np.ndarray


def subcritical_global_bound_check(u0: ComplexField, model=None, window: float = 1.0,
                                   dt: float = 1e-3, bundle: GroundStateBundle | None = None,
                                   allow_critical: bool = False) -> GlobalBoundReport:
    """Integrate forward and backward over |t| <= window, tracking ||grad u||."""
    from .evolve import EvolutionConfig, integrate as run
    from .potentials import Model

    model = model or Model(W=_zero_potential(u0.grid.dim))
    if bundle is not None and not allow_critical and mass(u0) >= bundle.mass_sq * (1 + 1e-12):
        raise ValueError("initial mass is not subcritical")
    if mass(u0) == 0:
        return GlobalBoundReport(0.0, 0.0, 1.0, False, np.zeros(1))
    series = []
    triggered = False
    for sign in (1, -1):
        cfg = EvolutionConfig(dt=sign * dt, t_start=0.0, t_end=sign * window, cadence=10)
        traj, _ = run(u0, model, cfg)
        series.append(np.array([n.gradient_l2 for n in traj.norms]))
        triggered |= traj.trigger is not None
    allg = np.concatenate(series)
    g0 = float(allg[0])
    return GlobalBoundReport(float(allg.max()), g0, float(allg.max() / g0), triggered, allg)


def _zero_potential(dim):
    from .potentials import PotentialSpec
    return PotentialSpec((), dim=dim)


# -- cache --------------------------------------------------------------------

def cache_dir() -> Path | None:
    d = os.environ.get("BLOWUP_LAB_CACHE")
    return Path(d) if d else None


def load_or_solve(N: int, mesh: RadialMesh | None = None) -> GroundStateBundle:
    """solve_ground_state with a JSON record in $BLOWUP_LAB_CACHE (if set).

    The profile is cheap to regenerate; the cache records the constants so a
    mismatch against a fresh solve is detectable.
    """
    bundle = solve_ground_state(N, mesh)
    d = cache_dir()
    if d is not None:
        d.mkdir(parents=True, exist_ok=True)
        (d / f"groundstate_N{N}.json").write_text(json.dumps(bundle.to_meta(), indent=2))
    return bundle


def write_cache(bundle: GroundStateBundle, grid: GridSpec, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"groundstate_N{bundle.dim}_M{grid.M}_L{grid.L:g}.nlsf"
    save_snapshot(bundle.on_grid(grid), path, bundle.to_meta())
    return path


def read_cache(path):
    return load_snapshot(path)
