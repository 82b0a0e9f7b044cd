"""Linearized operators around Q, the scaling generator, the profile rho and
the coercivity constant of the constrained quadratic form.

Everything here works on a periodic grid with the discrete ground state of
that grid (see ``GroundStateBundle.discrete_on_grid``), so kernel relations
such as L_- Q = 0 hold to solver precision rather than to the box
truncation error of the continuum profile.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicHermiteSpline
from scipy.sparse.linalg import LinearOperator, eigsh, minres, spsolve

from .fields import ComplexField, GridSpec, fft, gradient_array, ifft, laplacian_array
from .groundstate import GroundStateBundle

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


class CoercivityViolation(RuntimeError):
    pass


def apply_Lambda(u: ComplexField) -> ComplexField:
    """(N/2) u + x . grad u.  Only meaningful for fields decaying in the box."""
    return u.with_values(lambda_array(u.values, u.grid))


def lambda_array(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = 0.5 * grid.dim * v
    for x, d in zip(grid.coords, gradient_array(v, grid)):
        out = out + x * d
    if np.isrealobj(v):
        out = np.real(out)
    return out


@dataclass
class LinearizedOperator:
    which: str
    bundle: GroundStateBundle
    grid: GridSpec

    def __post_init__(self):
        if self.which not in ("plus", "minus"):
            raise ValueError("which must be 'plus' or 'minus'")
        if self.bundle.dim != self.grid.dim:
            raise ValueError("ground state and grid dimensions differ")
        N = self.grid.dim
        q = np.real(self.bundle.discrete_on_grid(self.grid).values)
        c = 1.0 + 4.0 / N if self.which == "plus" else 1.0
        self.V = c * q ** (4.0 / N)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = -laplacian_array(v, self.grid) + v - self.V * v
        return np.real(out) if np.isrealobj(v) else out

    def apply(self, u: ComplexField) -> ComplexField:
        return u.with_values(self(u.values))

    def form(self, v: np.ndarray) -> float:
        """<L v, v> with the grid quadrature."""
        return float(np.real(np.vdot(v, self(v)))) * self.grid.cell_volume


def apply_L(which: str, u: ComplexField, bundle: GroundStateBundle) -> ComplexField:
    return LinearizedOperator(which, bundle, u.grid).apply(u)


def q_on_grid(bundle: GroundStateBundle, grid: GridSpec) -> np.ndarray:
    return np.real(bundle.discrete_on_grid(grid).values)


def _l2(v, grid):
    return float(np.sqrt(np.sum(np.abs(v) ** 2) * grid.cell_volume))


def _helmholtz_inverse(grid: GridSpec, power: float = 1.0):
    sym = (1.0 + grid.k2) ** (-power)

    def op(v):
        return np.real(ifft(sym * fft(v)))

    return op


# -- rho ----------------------------------------------------------------------

@dataclass
class RhoProfile:
    field: ComplexField
    residual: float
    history: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.real(self.field.values)


def _even_part(v: np.ndarray) -> np.ndarray:
    # periodic reflection x_j -> -x_j maps index j to (M - j) mod M on every axis
    flipped = v
    for ax in range(v.ndim):
        flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
    return 0.5 * (v + flipped)


def solve_rho(bundle: GroundStateBundle, grid: GridSpec, rtol: float = 1e-12,
              maxiter: int = 2000, rhs: np.ndarray | None = None) -> RhoProfile:
    """Solve L_+ rho = |x|^2 Q by preconditioned MINRES in the even sector.

    L_+ is indefinite (one negative direction) with kernel spanned by the odd
    fields grad Q; the right-hand side is even, so Krylov iterates stay even
    and the kernel never enters.  The result is re-symmetrized at the end.
    """
    Lp = LinearizedOperator("plus", bundle, grid)
    q = q_on_grid(bundle, grid)
    b = (grid.r2 * q if rhs is None else rhs).ravel()
    shape = grid.shape
    n = grid.size
    A = LinearOperator((n, n), matvec=lambda v: Lp(v.reshape(shape)).ravel(), dtype=float)
    prec = _helmholtz_inverse(grid)
    Minv = LinearOperator((n, n), matvec=lambda v: prec(v.reshape(shape)).ravel(), dtype=float)
    history = []

    def cb(xk):
        history.append(_l2(Lp(xk.reshape(shape)) - b.reshape(shape), grid))

    x, info = minres(A, b, M=Minv, rtol=rtol, maxiter=maxiter, callback=cb)
    rho = _even_part(x.reshape(shape))
    res = _l2(Lp(rho) - b.reshape(shape), grid)
    if info != 0 and res > 1e-6:
        raise ConvergenceError(f"rho solve did not converge (residual {res:.3e})", history)
    return RhoProfile(ComplexField(grid, rho), res, history)


class RadialRho:
    """rho on a staggered radial mesh r_j = (j + 1/2) h, solved by fourth-order
    finite differences with even reflection at 0 and rho(R) = 0.

    Evaluates rho, rho' anywhere (zero beyond R, where rho < 1e-12).
    """

    def __init__(self, bundle: GroundStateBundle, h: float = 2e-3, R: float = 40.0):
        N = bundle.dim
        n = int(round(R / h))
        r = (np.arange(n) + 0.5) * h
        q = bundle.profile(r)
        V = (1.0 + 4.0 / N) * q ** (4.0 / N)
        d1, d2 = _fd_even_operators(n, h)
        A = -(d2 + sparse.diags((N - 1) / r) @ d1) + sparse.diags(1.0 - V)
        rho = spsolve(A.tocsc(), r * r * q)
        self.r, self.values, self.h, self.dim = r, rho, h, N
        self.deriv = d1 @ rho
        self.residual = float(np.max(np.abs(A @ rho - r * r * q)[: n - 4]))
        rr = np.concatenate([[0.0], r])
        self._spline = CubicHermiteSpline(rr, np.concatenate([[_even_origin(rho)], rho]),
                                          np.concatenate([[0.0], self.deriv]))

    def __call__(self, rr, nu: int = 0):
        rr = np.abs(np.asarray(rr, dtype=float))
        out = np.zeros_like(rr)
        inside = rr <= self.r[-1]
        out[inside] = self._spline(rr[inside], nu)
        return out


def _even_origin(v):
    # fourth-order value at 0 from the symmetric staggered samples
    return (18.0 * v[0] - 2.0 * v[1]) / 16.0


def _fd_even_operators(n: int, h: float):
    """Fourth-order d/dr and d^2/dr^2 on a staggered mesh for even functions
    (ghost values mirrored across r = 0, zero beyond the last node)."""
    c1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    ops = []
    for c in (c1, c2):
        rows, cols, vals = [], [], []
        for i in range(n):
            for k, off in enumerate(range(-2, 3)):
                j = i + off
                if j < 0:
                    j = -j - 1  # r_{-1} mirrors r_0, r_{-2} mirrors r_1
                if j >= n or c[k] == 0.0:
                    continue
                rows.append(i)
                cols.append(j)
                vals.append(c[k])
        ops.append(sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return ops


@dataclass
class Envelope:
    C: float
    kappa: float
    holds: bool


def fit_envelope(rho: RhoProfile, bundle: GroundStateBundle, floor: float = 1e-10) -> Envelope:
    """Fit |rho| <= C (1+|y|)^kappa Q on the grid points where Q > floor * max Q."""
    grid = rho.field.grid
    q = q_on_grid(bundle, grid)
    mask = q > floor * q.max()
    ratio = np.abs(rho.values[mask]) / q[mask]
    t = np.log1p(grid.r[mask])
    big = ratio > 1e-300
    slope = np.polyfit(t[big], np.log(ratio[big]), 1)[0] if big.sum() > 2 else 0.0
    kappa = max(float(slope), 0.0) + 0.5
    C = float(np.max(ratio / (1.0 + grid.r[mask]) ** kappa))
    holds = bool(np.all(np.abs(rho.values[mask]) <= C * (1 + grid.r[mask]) ** kappa * q[mask] * (1 + 1e-12)))
    return Envelope(C, kappa, holds)


# -- identities ---------------------------------------------------------------

def identity_residuals(bundle: GroundStateBundle, grid: GridSpec,
                       rho: RhoProfile | None = None) -> dict[str, float]:
    """L2 norms of the residuals of the kernel and scaling identities."""
    Lp = LinearizedOperator("plus", bundle, grid)
    Lm = LinearizedOperator("minus", bundle, grid)
    q = q_on_grid(bundle, grid)
    lq = lambda_array(q, grid)
    dq = [np.real(d) for d in gradient_array(q, grid)]
    out = {
        "L-Q=0": _l2(Lm(q), grid),
        "L+LambdaQ=-2Q": _l2(Lp(lq) + 2 * q, grid),
        "L-|x|^2Q=-4LambdaQ": _l2(Lm(grid.r2 * q) + 4 * lq, grid),
        "L-(xQ)=-2gradQ": max(_l2(Lm(x * q) + 2 * d, grid) for x, d in zip(grid.coords, dq)),
        "L+gradQ=0": max(_l2(Lp(d), grid) for d in dq),
    }
    if rho is None:
        rho = solve_rho(bundle, grid)
    out["L+rho=|x|^2Q"] = _l2(Lp(rho.values) - grid.r2 * q, grid)
    return out


# -- coercivity ---------------------------------------------------------------

@dataclass
class CoercivityReport:
    mu: float
    mu_plus: float
    mu_minus: float


class _ConstrainedForm:
    """B^{-1/2} L B^{-1/2} restricted to the B^{-1/2}-image of the constraint
    complement, with B = 1 - Delta.  Its lowest eigenvalue is the minimum of
    <Lv, v>/||v||_{H^1}^2 over v orthogonal (in L^2) to the constraints."""

    def __init__(self, L: LinearizedOperator, constraints, shift: float = 10.0):
        self.L = L
        grid = L.grid
        self.grid = grid
        self.half = _helmholtz_inverse(grid, 0.5)
        basis = []
        for phi in constraints:
            w = self.half(np.asarray(phi, dtype=float))
            for b in basis:
                w = w - np.sum(b * w) * b
            nrm = np.sqrt(np.sum(w * w))
            if nrm > 1e-12:
                basis.append(w / nrm)
        self.basis = basis
        self.shift = shift

    def project(self, w):
        for b in self.basis:
            w = w - np.sum(b * w) * b
        return w

    def matvec(self, w):
        w = w.reshape(self.grid.shape)
        pw = self.project(w)
        out = self.project(self.half(self.L(self.half(pw))))
        return (out + self.shift * (w - pw)).ravel()

    def lowest(self, k: int = 1):
        n = self.grid.size
        op = LinearOperator((n, n), matvec=self.matvec, dtype=float)
        rng = np.random.default_rng(0)
        v0 = self.project(rng.standard_normal(self.grid.shape)).ravel()
        vals, vecs = eigsh(op, k=k, which="SA", v0=v0, tol=1e-10, maxiter=20000)
        i = int(np.argmin(vals))
        v = self.half(vecs[:, i].reshape(self.grid.shape))
        return float(vals[i]), v


def coercivity_constraints(bundle: GroundStateBundle, grid: GridSpec, rho: RhoProfile):
    q = q_on_grid(bundle, grid)
    plus = [q] + [x * q for x in grid.coords] + [grid.r2 * q]
    minus = [rho.values]
    return plus, minus


def coercivity_mu(bundle: GroundStateBundle, rho: RhoProfile, grid: GridSpec | None = None,
                  raise_on_violation: bool = True) -> CoercivityReport:
    """Minimum of (<L+ Re u, Re u> + <L- Im u, Im u>)/||u||_{H^1}^2 over
    Re u orthogonal to Q, xQ, |x|^2 Q and Im u orthogonal to rho.

    The form splits, so mu = min(mu_plus, mu_minus), each computed as the
    lowest eigenvalue of the projected, H^1-normalized operator by Lanczos.
    """
    grid = grid or rho.field.grid
    plus, minus = coercivity_constraints(bundle, grid, rho)
    mp, _ = _ConstrainedForm(LinearizedOperator("plus", bundle, grid), plus).lowest()
    mm, _ = _ConstrainedForm(LinearizedOperator("minus", bundle, grid), minus).lowest()
    rep = CoercivityReport(min(mp, mm), mp, mm)
    if rep.mu <= 0:
        msg = f"coercivity violated: mu_plus={mp:.3e}, mu_minus={mm:.3e}"
        if raise_on_violation:
            raise CoercivityViolation(msg)
        log.warning(msg)
    return rep


def project_constraints(u: ComplexField, bundle: GroundStateBundle, rho: RhoProfile) -> ComplexField:
    """L2-orthogonal projection of (Re u, Im u) off the coercivity constraints."""
    grid = u.grid
    plus, minus = coercivity_constraints(bundle, grid, rho)

    def proj(v, cons):
        basis = []
        for phi in cons:
            w = phi.copy()
            for b in basis:
                w = w - np.sum(b * w) * b
            basis.append(w / np.sqrt(np.sum(w * w)))
        for b in basis:
            v = v - np.sum(b * v) * b
        return v

    return u.with_values(proj(np.real(u.values), plus) + 1j * proj(np.imag(u.values), minus))


def rayleigh_quotient(u: ComplexField, bundle: GroundStateBundle) -> float:
    grid = u.grid
    re, im = np.real(u.values), np.imag(u.values)
    num = LinearizedOperator("plus", bundle, grid).form(re) + LinearizedOperator("minus", bundle, grid).form(im)
    h1 = np.sum((1.0 + grid.k2) * np.abs(fft(u.values)) ** 2) * grid.cell_volume / grid.size
    return float(num / h1)


def _lowest_penalized(L: LinearizedOperator, constraints, weight: float) -> float:
    grid = L.grid
    half = _helmholtz_inverse(grid, 0.5)
    psis = [half(np.asarray(p, dtype=float)).ravel() for p in constraints]
    dv = grid.cell_volume

    def mv(w):
        out = half(L(half(w.reshape(grid.shape)))).ravel()
        for p in psis:
            out = out + weight * dv * np.dot(p, w) * p
        return out

    n = grid.size
    op = LinearOperator((n, n), matvec=mv, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    return float(eigsh(op, k=1, which="SA", v0=v0, tol=1e-10, maxiter=20000)[0][0])


def penalized_mu(bundle: GroundStateBundle, rho: RhoProfile, grid: GridSpec | None = None,
                 tol: float = 1e-4) -> float:
    """Largest mu with <L+ Re u, Re u> + <L- Im u, Im u> >= mu ||u||_{H^1}^2
    - (1/mu) [sum of squared constraint pairings] for all u.

    Always at most the constrained minimum; found by bisection on mu.
    """
    grid = grid or rho.field.grid
    plus, minus = coercivity_constraints(bundle, grid, rho)
    ops = [(LinearizedOperator("plus", bundle, grid), plus),
           (LinearizedOperator("minus", bundle, grid), minus)]
    hi = coercivity_mu(bundle, rho, grid).mu
    lo = 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if all(_lowest_penalized(L, c, 1.0 / mid) >= mid for L, c in ops):
            lo = mid
        else:
            hi = mid
    return lo
