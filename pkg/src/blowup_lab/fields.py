"""Periodic grids, complex fields, spectral derivatives and the NLS functionals.

All quadratures are the periodic trapezoid rule ``h**N * sum(...)`` and all
derivatives are taken spectrally, so smooth decaying fields are handled to
near machine precision as long as they are negligible at the box edge.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"NLSF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIddd")  # magic, version, N, M, L -> 32 bytes


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)^N`` with ``M`` points per axis."""

    dim: int
    M: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"unsupported dimension {self.dim}; only N=1 and N=2")
        if self.M < 16 or self.M & (self.M - 1):
            raise ValueError(f"M={self.M} must be a power of two >= 16")
        if not self.L > 0:
            raise ValueError("half-width L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.M

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.dim

    @property
    def size(self) -> int:
        return self.M**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.M)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays, one per axis, broadcast to the full grid shape."""
        if self.dim == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    @cached_property
    def r2(self) -> np.ndarray:
        return sum(c * c for c in self.coords)

    @cached_property
    def r(self) -> np.ndarray:
        return np.sqrt(self.r2)

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        k = 2.0 * np.pi * np.fft.fftfreq(self.M, self.h)
        if self.dim == 1:
            return (k,)
        return tuple(np.meshgrid(k, k, indexing="ij"))

    @cached_property
    def derivative_symbols(self) -> tuple[np.ndarray, ...]:
        # Nyquist mode zeroed for odd derivatives so real fields stay real.
        out = []
        for k in self.wavenumbers:
            kk = k.copy()
            kk[np.isclose(np.abs(kk), np.pi / self.h)] = 0.0
            out.append(1j * kk)
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers)

    def to_dict(self) -> dict:
        return {"N": self.dim, "M": self.M, "L": self.L}


def make_grid(N: int, M: int, L: float) -> GridSpec:
    return GridSpec(int(N), int(M), float(L))


@dataclass
class ComplexField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        self.values = v

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ComplexField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())

    def with_values(self, values) -> "ComplexField":
        return ComplexField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__


def _vals(u):
    return u.values if isinstance(u, ComplexField) else u


# -- spectral calculus -------------------------------------------------------

def fft(u: np.ndarray) -> np.ndarray:
    return np.fft.fftn(u)


def ifft(u: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(u)


def gradient_array(values: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    uh = fft(values)
    return [ifft(sym * uh) for sym in grid.derivative_symbols]


def laplacian_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return ifft(-grid.k2 * fft(values))


def gradient(u: ComplexField) -> list[ComplexField]:
    """Spectral gradient, one field per axis."""
    return [u.with_values(g) for g in gradient_array(u.values, u.grid)]


def laplacian(u: ComplexField) -> ComplexField:
    return u.with_values(laplacian_array(u.values, u.grid))


# -- nonlinearity -------------------------------------------------------------

def nonlinearity_f(z, N: int):
    """f(z) = |z|^{4/N} z."""
    z = np.asarray(z, dtype=complex)
    return np.abs(z) ** (4.0 / N) * z


def potential_energy_density_F(z, N: int):
    """F(z) = |z|^{2+4/N} / (2+4/N)."""
    p = 2.0 + 4.0 / N
    return np.abs(np.asarray(z)) ** p / p


def dF(q, e, N: int):
    """First differential of F at q in direction e, with C identified as R^2.

    dF(q)(e) = Re(f(q) conj(e)).
    """
    return np.real(nonlinearity_f(q, N) * np.conj(e))


def d2F(q, e, N: int):
    """Second differential d^2F(q)(e, e).

    For real q this is (1+4/N) q^{4/N} (Re e)^2 + q^{4/N} (Im e)^2, the
    potential part of the quadratic form of L_+ and L_-.  The general complex
    formula is |q|^{4/N}|e|^2 + (4/N)|q|^{4/N-2} (Re(q conj e))^2.
    """
    q = np.asarray(q, dtype=complex)
    a = np.abs(q)
    s = 4.0 / N
    proj = np.real(q * np.conj(e))
    with np.errstate(divide="ignore", invalid="ignore"):
        extra = np.where(a > 0, s * a ** (s - 2.0) * proj**2, 0.0)
    return a**s * np.abs(e) ** 2 + extra


def F_remainder(q, e, N: int):
    """F(q+e) - F(q) - dF(q)(e) for real q, without cancellation.

    With k = 1 + 2/N (an integer for N = 1, 2) and a = 2 q Re e + |e|^2,
    F(q+e) = (q^2 + a)^k / (2k), and the binomial expansion gives
    q^{2k-2}|e|^2/2 + sum_{j>=2} C(k, j) q^{2(k-j)} a^j / (2k).
    """
    k = {1: 3, 2: 2}[N]
    q = np.asarray(q, dtype=float)
    e = np.asarray(e)
    a = 2.0 * q * np.real(e) + np.abs(e) ** 2
    out = 0.5 * q ** (2 * k - 2) * np.abs(e) ** 2
    for j in range(2, k + 1):
        out = out + math.comb(k, j) * q ** (2 * (k - j)) * a**j / (2 * k)
    return out


# -- functionals --------------------------------------------------------------

def integrate(values: np.ndarray, grid: GridSpec) -> float:
    return float(np.real(np.sum(values)) * grid.cell_volume)


def inner(u, v, grid: GridSpec) -> float:
    """(u, v)_2 = Re int u conj(v)."""
    return integrate(np.real(_vals(u) * np.conj(_vals(v))), grid)


def mass(u: ComplexField) -> float:
    return integrate(np.abs(u.values) ** 2, u.grid)


def gradient_sq(values: np.ndarray, grid: GridSpec) -> float:
    """||grad u||_2^2 computed from Fourier coefficients (Parseval)."""
    uh = fft(values)
    return float(np.sum(grid.k2 * np.abs(uh) ** 2) * grid.cell_volume / grid.size)


def energy(u: ComplexField, spec=None, *, g=None, W=None) -> float:
    """E(u) = 1/2||grad u||^2 - 1/(2+4/N) int g|u|^{2+4/N} + 1/2 int W|u|^2.

    ``spec`` is a ``potentials.Model`` (anything with ``sample(grid)`` returning
    the gridded (g, W)); explicit ``g``/``W`` arrays override it.  With neither,
    g = 1 and W = 0, i.e. the critical energy.
    """
    grid = u.grid
    if spec is not None:
        gs, Ws = spec.sample(grid)
        g = gs if g is None else g
        W = Ws if W is None else W
    if g is None:
        g = 1.0
    if W is not None and not np.all(np.isfinite(W)):
        raise ValueError("potential W has non-finite samples on the grid")
    N = grid.dim
    a2 = np.abs(u.values) ** 2
    e = 0.5 * gradient_sq(u.values, grid)
    e -= integrate(g * a2 ** (1.0 + 2.0 / N), grid) / (2.0 + 4.0 / N)
    if W is not None:
        e += 0.5 * integrate(W * a2, grid)
    return e


@dataclass(frozen=True)
class NormReport:
    l2: float
    h1: float
    sigma1: float
    weighted_l2: float
    gradient_l2: float


def norms(u: ComplexField) -> NormReport:
    m = mass(u)
    g2 = gradient_sq(u.values, u.grid)
    w2 = integrate(u.grid.r2 * np.abs(u.values) ** 2, u.grid)
    return NormReport(
        l2=np.sqrt(m),
        h1=np.sqrt(m + g2),
        sigma1=np.sqrt(m + g2 + w2),
        weighted_l2=np.sqrt(w2),
        gradient_l2=np.sqrt(g2),
    )


def spectral_l2(u: ComplexField) -> float:
    """L2 norm evaluated from the Fourier coefficients (Parseval check)."""
    uh = fft(u.values)
    return float(np.sqrt(np.sum(np.abs(uh) ** 2) * u.grid.cell_volume / u.grid.size))


def momentum(u: ComplexField) -> np.ndarray:
    """Im int u grad(conj u), one entry per axis."""
    grads = gradient_array(np.conj(u.values), u.grid)
    return np.array([integrate(np.imag(u.values * g), u.grid) for g in grads])


# -- snapshots ----------------------------------------------------------------

def save_snapshot(u: ComplexField, path, meta: dict | None = None) -> Path:
    """Write the binary field file plus a JSON sidecar next to it."""
    path = Path(path)
    g = u.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, float(g.dim), float(g.M), float(g.L))
    data = np.empty(g.size * 2, dtype="<f8")
    flat = u.values.ravel()
    data[0::2] = flat.real
    data[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    side = {"magic": "NLSF", "version": SNAPSHOT_VERSION, **g.to_dict()}
    if meta:
        side.update(meta)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2))
    return path


def load_snapshot(path) -> tuple[ComplexField, dict]:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, N, M, L = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not an NLSF snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = make_grid(int(N), int(M), L)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != 2 * grid.size:
        raise ValueError(f"{path}: truncated payload")
    values = (data[0::2] + 1j * data[1::2]).reshape(grid.shape)
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return ComplexField(grid, values), meta
