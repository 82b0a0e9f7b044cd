"""Geometric decomposition u = lambda^{-N/2} (Q + eps)(y) e^{-i b|y|^2/4 + i gamma},
y = (x + w)/lambda, and the diagnostics built on it.

eps is never resampled: it is kept at the points y(x) of the physical grid,
so y-space integrals are lambda^{-N} h^N sums over the x-grid and all
derivatives come from spectral derivatives of u.  The four orthogonality
functionals are

    (eps, i Lambda Q) = (eps, |y|^2 Q) = (eps, i rho) = (eps, y_j Q) = 0,

with (f, v) = Re int f conj(v) dy.  Their derivatives in (lambda, b, gamma, w)
only involve d eps/dp since the test functions are fixed in y:

    d_gamma eps  = -i Z
    d_b eps      = i |y|^2/4 Z
    d_lambda eps = (1/lambda) [(N/2) Z + lambda^{N/2+1} e^{i theta} y . grad_x u]
    d_w eps      = -lambda^{N/2} e^{i theta} grad_x u

where Z = Q + eps and theta = b|y|^2/4 - gamma.

dF and d^2F use the real pairing of C with R^2: dF(Q)(e) = Re(f(Q) conj e),
d^2F(Q)(e, e) = (1+4/N) Q^{4/N} (Re e)^2 + Q^{4/N} (Im e)^2 for real Q.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import ComplexField, F_remainder, GridSpec, energy, gradient_array
from .groundstate import GroundStateBundle
from .linops import RadialRho

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.1
DEFAULT_EPS_PRIME = 0.25


class DecompositionError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class DeltaWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModulationParams:
    lam: float
    b: float = 0.0
    gamma: float = 0.0
    w: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        object.__setattr__(self, "w", tuple(float(v) for v in np.atleast_1d(self.w)))

    @classmethod
    def identity(cls, N: int) -> "ModulationParams":
        return cls(1.0, 0.0, 0.0, (0.0,) * N)

    def as_array(self) -> np.ndarray:
        return np.array([self.lam, self.b, self.gamma, *self.w])

    @classmethod
    def from_array(cls, p) -> "ModulationParams":
        return cls(float(p[0]), float(p[1]), float(p[2]), tuple(p[3:]))

    def wrapped(self) -> "ModulationParams":
        g = (self.gamma + math.pi) % (2 * math.pi) - math.pi
        return ModulationParams(self.lam, self.b, g, self.w)


class ProfileContext:
    """Q and rho as functions of y for one ground state, shared by decompositions."""

    def __init__(self, bundle: GroundStateBundle, rho: RadialRho | None = None):
        self.bundle = bundle
        self.dim = bundle.dim
        self.rho = rho or RadialRho(bundle)
        self._vq = {}

    def y_coords(self, grid: GridSpec, p: ModulationParams):
        w = _w_vec(p.w, grid.dim)
        return [(x + wi) / p.lam for x, wi in zip(grid.coords, w)]

    def test_functions(self, ys):
        """(Lambda Q, |y|^2 Q, rho, y_j Q) and Q at the points ys."""
        N = self.dim
        r = np.sqrt(sum(y * y for y in ys))
        q = self.bundle.profile(r)
        dq = self.bundle.profile(r, 1)
        lq = 0.5 * N * q + r * dq
        return q, lq, r * r * q, self.rho(r), [y * q for y in ys]


def _w_vec(w, N):
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.size == 1 and N > 1:
        w = np.full(N, w[0]) if w[0] == 0 else np.concatenate([w, np.zeros(N - 1)])
    if w.size != N:
        raise ValueError("w must have N components")
    return w


# -- recompose ----------------------------------------------------------------

MIN_LAMBDA_CELLS = 4.0


def recompose(params: ModulationParams, eps, grid: GridSpec, bundle: GroundStateBundle) -> ComplexField:
    """lambda^{-N/2} (Q + eps)((x+w)/lambda) e^{-i b|x+w|^2/(4 lambda^2) + i gamma}.

    ``eps`` may be None, an array already sampled at y(x), or a callable of
    the y-coordinate arrays.
    """
    if params.lam < MIN_LAMBDA_CELLS * grid.h:
        raise ValueError(f"lambda={params.lam:.3g} below {MIN_LAMBDA_CELLS:g} grid cells")
    w = _w_vec(params.w, grid.dim)
    ys = [(x + wi) / params.lam for x, wi in zip(grid.coords, w)]
    r2 = sum(y * y for y in ys)
    z = bundle.profile(np.sqrt(r2)).astype(complex)
    if eps is not None:
        z = z + (eps(ys) if callable(eps) else np.reshape(eps, grid.shape))
    vals = params.lam ** (-grid.dim / 2) * z * np.exp(-0.25j * params.b * r2 + 1j * params.gamma)
    return ComplexField(grid, vals)


# -- eps field ----------------------------------------------------------------

@dataclass
class EpsilonField:
    """eps sampled at y(x) for the physical grid, with the data needed for
    y-space integrals and derivatives."""

    params: ModulationParams
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    grad_y: list = field(repr=False)
    ys: list = field(repr=False)
    q: np.ndarray = field(repr=False)
    orthogonality: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def weight(self) -> float:
        return self.grid.cell_volume / self.params.lam**self.grid.dim

    def integrate(self, f) -> float:
        return float(np.real(np.sum(f)) * self.weight)

    def inner(self, v) -> float:
        return self.integrate(np.real(self.values * np.conj(v)))

    def l2_sq(self) -> float:
        return self.integrate(np.abs(self.values) ** 2)

    def grad_sq(self) -> float:
        return self.integrate(sum(np.abs(g) ** 2 for g in self.grad_y))

    def h1_sq(self) -> float:
        return self.l2_sq() + self.grad_sq()

    def y_l2_sq(self) -> float:
        return self.integrate(sum(y * y for y in self.ys) * np.abs(self.values) ** 2)

    @property
    def eps_Q(self) -> float:
        return self.inner(self.q)


def _phase(ys, p: ModulationParams):
    r2 = sum(y * y for y in ys)
    return np.exp(1j * (0.25 * p.b * r2 - p.gamma)), r2


def _eps_and_jacobian(u, du, grid, p: ModulationParams, ctx: ProfileContext, want_jac=True):
    N = grid.dim
    lam = p.lam
    ys = ctx.y_coords(grid, p)
    ph, r2 = _phase(ys, p)
    amp = lam ** (N / 2)
    Z = amp * u * ph
    q, lq, r2q, rho, yq = ctx.test_functions(ys)
    eps = Z - q
    wt = grid.cell_volume / lam**N

    def pair(f, v):
        return float(np.sum(np.real(f * np.conj(v))) * wt)

    tests = [1j * lq, r2q, 1j * rho] + yq
    F = np.array([pair(eps, v) for v in tests])
    if not want_jac:
        return eps, F, ys, ph, q
    gu = [amp * ph * d for d in du]
    d_lam = (0.5 * N * Z + lam * sum(y * g for y, g in zip(ys, gu))) / lam
    d_b = 0.25j * r2 * Z
    d_gam = -1j * Z
    d_w = [-g for g in gu]
    cols = [d_lam, d_b, d_gam] + d_w
    J = np.array([[pair(c, v) for c in cols] for v in tests])
    return eps, F, ys, ph, q, J


def moment_guess(u: ComplexField, bundle: GroundStateBundle) -> ModulationParams:
    """Parameters matching the centre, width, chirp and phase of u."""
    grid = u.grid
    a2 = np.abs(u.values) ** 2
    m = float(np.sum(a2))
    if not m > 0 or not math.isfinite(m):
        raise DecompositionError("field has no mass to decompose")
    xc = [float(np.sum(x * a2) / m) for x in grid.coords]
    w = tuple(-c for c in xc)
    d2 = sum((x - c) ** 2 for x, c in zip(grid.coords, xc))
    mass = m * grid.cell_volume
    lam = math.sqrt(float(np.sum(d2 * a2)) * grid.cell_volume * bundle.mass_sq / mass / bundle.virial_sq)
    grads = gradient_array(u.values, grid)
    chirp = sum((x - c) * g for x, c, g in zip(grid.coords, xc, grads))
    b = -2.0 * float(np.sum(np.imag(np.conj(u.values) * chirp))) * grid.cell_volume / bundle.virial_sq
    b *= bundle.mass_sq / mass
    ys = [(x - c) / lam for x, c in zip(grid.coords, xc)]
    r2 = sum(y * y for y in ys)
    ov = np.sum(u.values * bundle.profile(np.sqrt(r2)) * np.exp(0.25j * b * r2))
    return ModulationParams(lam, b, float(np.angle(ov)), w)


def decompose(u: ComplexField, guess: ModulationParams | None, ctx: ProfileContext,
              tol: float = 1e-10, maxiter: int = 25, delta: float = DEFAULT_DELTA) -> EpsilonField:
    """Newton iteration on the 3+N orthogonality conditions.

    Starts from ``guess`` and falls back to ``moment_guess`` if that fails.
    Warns (DeltaWarning) when ||eps||_{H^1} exceeds ``delta``.
    """
    grid = u.grid
    du = gradient_array(u.values, grid)
    starts = [guess] if guess is not None else []
    starts.append(moment_guess(u, ctx.bundle))
    errors = []
    best = None
    for start in starts:
        try:
            res = _newton(u.values, du, grid, start, ctx, tol, maxiter)
        except DecompositionError as exc:
            errors.append(exc)
            continue
        # distant roots of the orthogonality system exist; keep the nearest
        if best is None or res.h1_sq() < best.h1_sq():
            best = res
        if best.h1_sq() <= delta**2:
            break
    if best is None:
        raise DecompositionError("decomposition did not converge from any start",
                                 [e.history for e in errors])
    if best.h1_sq() > delta**2:
        warnings.warn(f"||eps||_H1 = {math.sqrt(best.h1_sq()):.3g} exceeds delta = {delta:g}",
                      DeltaWarning, stacklevel=2)
    return best


def _newton(u, du, grid, start, ctx, tol, maxiter):
    p = start.as_array()
    p[3:] = _w_vec(p[3:], grid.dim)
    history = []
    for it in range(maxiter + 1):
        P = ModulationParams.from_array(p)
        eps, F, ys, ph, q, J = _eps_and_jacobian(u, du, grid, P, ctx)
        fn = float(np.max(np.abs(F)))
        history.append(fn)
        if fn <= tol:
            return _finish(eps, ys, ph, q, du, grid, P, F, it, ctx)
        if it == maxiter:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise DecompositionError("singular Jacobian", history)
        t = 1.0
        while t > 1e-4:
            trial = p + t * step
            if trial[0] > 0:
                try:
                    Ft = _eps_and_jacobian(u, du, grid, ModulationParams.from_array(trial), ctx,
                                           want_jac=False)[1]
                except ValueError:
                    Ft = None
                if Ft is not None and np.max(np.abs(Ft)) < fn * (1 - 1e-4 * t) or (
                        Ft is not None and fn < 1e-6):
                    break
            t *= 0.5
        else:
            raise DecompositionError("line search failed", history)
        p = trial
    raise DecompositionError(f"no convergence in {maxiter} iterations (last {history[-1]:.2e})", history)


def _finish(eps, ys, ph, q, du, grid, P, F, it, ctx):
    N = grid.dim
    lam = P.lam
    # grad_y eps = lambda^{N/2+1} e^{i theta} grad_x u + i (b y/2) Z - grad Q
    Z = eps + q
    r = np.sqrt(sum(y * y for y in ys))
    dq = ctx.bundle.profile(r, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gq = [np.where(r > 0, dq * y / r, 0.0) for y in ys]
    c = lam ** (N / 2 + 1)
    grad = [c * ph * d + 0.5j * P.b * y * Z - g for d, y, g in zip(du, ys, gq)]
    names = ["iLambdaQ", "|y|^2Q", "irho"] + [f"y{j + 1}Q" for j in range(N)]
    return EpsilonField(P, grid, eps, grad, ys, q, dict(zip(names, map(float, F))), it)


# -- rescaled time and Mod(s) -------------------------------------------------

def rescaled_time(t, lam, t1: float, s1: float) -> np.ndarray:
    """s(t) = s1 - int_t^{t1} lambda^{-2} dtau from the samples.

    lambda is taken piecewise linear in t, for which each interval contributes
    exactly dt / (lambda_a lambda_b); this is exact on lambda = a|t| and stays
    accurate when the samples are coarse compared with the scale of lambda.
    ``t1`` must be one of the sample times.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lambda samples must be positive")
    c = np.concatenate([[0.0], np.cumsum(np.diff(t) / (lam[1:] * lam[:-1]))])
    i1 = np.nonzero(np.isclose(t, t1, rtol=0, atol=1e-14 * max(1.0, abs(t1))))[0]
    if i1.size == 0:
        raise ValueError("t1 is not among the sample times")
    return s1 + c - c[i1[0]]


@dataclass
class ModVector:
    """Columns of Mod(s): ((1/lambda) lambda_s + b, b_s + b^2, 1 - gamma_s, w_s)."""

    s: np.ndarray
    scale: np.ndarray
    curvature: np.ndarray
    phase: np.ndarray
    translation: np.ndarray

    def magnitude(self) -> np.ndarray:
        tr = np.atleast_2d(self.translation.T).T
        return np.sqrt(self.scale**2 + self.curvature**2 + self.phase**2 + np.sum(tr**2, axis=1))


def mod_vector(s, lam, b, gamma, w) -> ModVector:
    """Second-order differences in s (centered inside, one-sided at the ends).

    gamma is unwrapped before differentiation.  Non-uniform s is accepted.
    """
    s = np.asarray(s, dtype=float)
    if s.size < 3:
        raise ValueError("need at least 3 samples")
    lam = np.asarray(lam, dtype=float)
    b = np.asarray(b, dtype=float)
    gam = np.unwrap(np.asarray(gamma, dtype=float))
    w = np.asarray(w, dtype=float).reshape(s.size, -1)
    d = lambda f: np.gradient(f, s, edge_order=2, axis=0)  # noqa: E731
    return ModVector(s, d(lam) / lam + b, d(b) + b * b, 1.0 - d(gam), d(w))


# -- Psi ----------------------------------------------------------------------

@dataclass
class PsiReport:
    field: ComplexField
    weighted_h1: float
    weighted_l2: float
    converged: bool


def psi_field(model, params: ModulationParams, grid_y: GridSpec, bundle: GroundStateBundle,
              eps_prime: float = DEFAULT_EPS_PRIME, refine_check: bool = False) -> PsiReport:
    """Psi(y) = lambda^2 W(lambda y - w) Q(y) on a y-grid and ||e^{eps'|y|} Psi||_{H^1}.

    W is evaluated without the integrator window (growth terms raise beyond
    their validity radius).  The gradient uses grad W analytically; for W not
    in H^1_loc (e.g. |x|^{1/2} in one dimension) the value is grid dependent,
    which ``refine_check`` detects by repeating on a grid with half the spacing.
    """
    val, l2 = _psi_norm(model, params, grid_y, bundle, eps_prime)
    conv = True
    if refine_check:
        fine = GridSpec(grid_y.dim, 2 * grid_y.M, grid_y.L)
        (v2, _), _ = _psi_norm(model, params, fine, bundle, eps_prime)
        conv = abs(v2 - val[0]) <= 1e-3 * abs(v2)
    return PsiReport(ComplexField(grid_y, val[1]), val[0], l2, conv)


def _psi_norm(model, params, grid_y, bundle, eps_prime):
    lam = params.lam
    w = _w_vec(params.w, grid_y.dim)
    xs = [lam * y - wi for y, wi in zip(grid_y.coords, w)]
    Wv = model.W.value(xs)
    gW = model.W.gradient(xs)
    r = grid_y.r
    q = bundle.profile(r)
    dq = bundle.profile(r, 1)
    weight = np.exp(eps_prime * r)
    psi = lam**2 * Wv * q
    f = weight * psi
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = [np.where(r > 0, y / r, 0.0) for y in grid_y.coords]
    # grad(e^{eps'|y|} lambda^2 W(lambda y - w) Q(y))
    grads = [lam**2 * weight * (lam * gw * q + Wv * dq * e + eps_prime * e * Wv * q)
             for gw, e in zip(gW, unit)]
    dv = grid_y.cell_volume
    l2 = float(np.sum(f * f) * dv)
    g2 = float(sum(np.sum(g * g) for g in grads) * dv)
    return (math.sqrt(l2 + g2), psi), math.sqrt(l2)


# -- energies -----------------------------------------------------------------

def profile_energy_gap(model, params: ModulationParams, grid: GridSpec,
                       bundle: GroundStateBundle, kappa: float = 1.0) -> tuple[float, float]:
    """(|8 E(Q_{lambda,b,w,gamma}) - (b^2/lambda^2) ||yQ||^2|, (lambda^{2+k} + |w|^{2+k})/lambda^2)."""
    u = recompose(params, None, grid, bundle)
    gap = abs(8.0 * energy(u, model) - params.b**2 / params.lam**2 * bundle.virial_sq)
    wn = float(np.linalg.norm(params.w))
    return gap, (params.lam ** (2 + kappa) + wn ** (2 + kappa)) / params.lam**2


@dataclass
class EnergyConstants:
    kappa: float
    mu: float
    m: float
    L_exp: float
    eps1: float
    eps2: float
    eps3: float
    eps4: float
    eps5: float


def energy_constants(kappa: float, mu: float) -> EnergyConstants:
    """m = 2 + k/2, L = 1 + k/2 and eps_1..eps_5.  eps_2 has no stated value;
    it is set equal to eps_3 as a placeholder."""
    m = 2.0 + 0.5 * kappa
    e3 = min(mu / 24.0, kappa**2 * mu / (24.0 * 64.0))
    return EnergyConstants(
        kappa=kappa, mu=mu, m=m, L_exp=1.0 + 0.5 * kappa,
        eps1=kappa * m * mu / 32.0,
        eps2=e3,
        eps3=e3,
        eps4=min(m * mu / 24.0, kappa**2 * m * mu / (24.0 * 64.0)),
        eps5=kappa / 8.0,
    )


@dataclass
class EnergyDiagnostics:
    H: float
    S: float
    comparator: float
    constants: EnergyConstants
    eps_h1_sq: float
    y_eps_sq: float

    @property
    def coercive(self) -> bool:
        return self.H >= self.comparator


def modified_energy_H(model, eps: EpsilonField, constants: EnergyConstants) -> EnergyDiagnostics:
    """H = 1/2||eps||_{H^1}^2 + (eps1 b^2/2)||y eps||^2
           - int g(lambda y - w) (F(Q+eps) - F(Q) - dF(Q) eps) dy
           + 1/2 lambda^2 int W(lambda y - w)|eps|^2 dy,   S = H/lambda^m.

    g and W are the model's samples on the physical grid, which are exactly
    the points lambda y - w.  The comparator is the lower bound
    (mu/2)||eps||_{H^1}^2 + (eps1/2) b^2 ||y eps||^2 - eps3 (||eps||_{H^1}^2 + b^2||y eps||^2).
    """
    p = eps.params
    N = eps.grid.dim
    if model is None:
        g, W = 1.0, 0.0
    else:
        g, W = model.sample(eps.grid)
    c = constants
    e = eps.values
    q = eps.q
    h1 = eps.h1_sq()
    y2 = eps.y_l2_sq()
    rem = F_remainder(q, e, N)
    H = (0.5 * h1 + 0.5 * c.eps1 * p.b**2 * y2 - eps.integrate(g * rem)
         + 0.5 * p.lam**2 * eps.integrate(W * np.abs(e) ** 2))
    comp = 0.5 * c.mu * h1 + 0.5 * c.eps1 * p.b**2 * y2 - c.eps3 * (h1 + p.b**2 * y2)
    return EnergyDiagnostics(H, H / p.lam**c.m, comp, c, h1, y2)
