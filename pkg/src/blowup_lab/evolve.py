"""Time integration of i u_t + Delta u + g|u|^{4/N} u - W u = 0 on a periodic grid.

Steppers:

* Strang splitting: half a step of the pointwise phase flow
  u -> u exp(i dt/2 (g|u|^{4/N} - W)) (exact, since |u| is invariant under it),
  a full free step in Fourier space, then the other half.
* "yoshida4": the symmetric triple-jump composition of three Strang steps
  with weights w1, w0, w1, which is fourth order in dt.
* implicit midpoint ("crank-nicolson"): the Laplacian is treated exactly in
  Fourier space and the nonlinear/potential term by fixed-point iteration on
  the midpoint value.

Both are time-reversible and conserve mass up to round-off.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fields import ComplexField, NormReport, energy, fft, ifft, mass, norms, save_snapshot

log = logging.getLogger(__name__)

STEPPERS = ("strang-splitting", "yoshida4", "crank-nicolson")

# triple-jump weights turning the second-order Strang step into a fourth-order one
_CBRT2 = 2.0 ** (1.0 / 3.0)
YOSHIDA_WEIGHTS = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


class BlowupSuspected(RuntimeError):
    """Raised when the field stops being finite; carries the last finite state."""

    def __init__(self, msg, state: ComplexField, t: float):
        super().__init__(msg)
        self.state = state
        self.t = t


class ConfigError(ValueError):
    pass


class InnerIterationError(RuntimeError):
    pass


@dataclass
class EvolutionConfig:
    dt: float
    t_start: float = 0.0
    t_end: float = 1.0
    stepper: str = "strang-splitting"
    cadence: int = 10
    max_grad: float = math.inf
    min_width: float = 0.0
    cn_tol: float = 1e-10
    cn_maxiter: int = 100
    snapshot_dir: str | None = None
    snapshot_cadence: int = 0
    record_energy: bool = True

    def validate(self, grid=None):
        if self.stepper not in STEPPERS:
            raise ConfigError(f"unknown stepper {self.stepper!r}")
        if not self.dt or not math.isfinite(self.dt):
            raise ConfigError("dt must be finite and nonzero")
        span = self.t_end - self.t_start
        if span * self.dt < 0:
            raise ConfigError("dt sign does not point from t_start to t_end")
        if self.cadence < 1:
            raise ConfigError("cadence must be >= 1")
        if grid is not None and self.stepper == "crank-nicolson" and abs(self.dt) > grid.h**2 / 4:
            raise ConfigError(f"crank-nicolson needs |dt| <= h^2/4 = {grid.h**2 / 4:.3e}")

    @property
    def n_steps(self) -> int:
        return max(0, int(round((self.t_end - self.t_start) / self.dt)))


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    trigger: str | None = None
    trigger_time: float | None = None
    extra: dict = field(default_factory=dict)

    def append(self, t: float, u: ComplexField, model):
        self.times.append(float(t))
        self.norms.append(norms(u))
        self.mass.append(mass(u))
        self.energy.append(energy(u, model) if model is not None else math.nan)

    @property
    def mass_drift(self) -> np.ndarray:
        m = np.asarray(self.mass)
        return (m - m[0]) / m[0] if m[0] else m - m[0]

    @property
    def energy_drift(self) -> np.ndarray:
        """(E - E(t_start)) / max(|E(t_start)|, 1/2 ||grad u(t_start)||^2).

        The kinetic normalization keeps the drift meaningful for zero-energy
        data such as the soliton.
        """
        e = np.asarray(self.energy)
        scale = max(abs(e[0]), 0.5 * self.norms[0].gradient_l2**2, 1e-300)
        return (e - e[0]) / scale

    def max_mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass_drift)))

    def max_energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy_drift)))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mass", "energy", "l2", "h1", "grad_l2", "weighted_l2", "trigger"])
            n = len(self.times)
            for i, (t, nr, m, e) in enumerate(zip(self.times, self.norms, self.mass, self.energy)):
                trig = self.trigger if (i == n - 1 and self.trigger) else ""
                w.writerow([repr(t), repr(m), repr(e), repr(nr.l2), repr(nr.h1),
                            repr(nr.gradient_l2), repr(nr.weighted_l2), trig])
        return path


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trajectory")
    out = {}
    for k in rows[0]:
        try:
            out[k] = np.array([float(r[k]) for r in rows])
        except ValueError:
            out[k] = np.array([r[k] for r in rows])
    return out


# -- steppers -----------------------------------------------------------------

class _Stepper:
    """Holds the sampled model and the Fourier propagators for one (grid, dt)."""

    def __init__(self, grid, model, dt: float):
        self.grid = grid
        self.dt = dt
        if model is None:
            self.g, self.W = 1.0, 0.0
        else:
            self.g, self.W = model.sample(grid)
        self.s = 2.0 / grid.dim  # |u|^{4/N} = (|u|^2)^{2/N}
        self.free = np.exp(-1j * dt * grid.k2)
        self._jump = None

    def phase(self, v, tau):
        a2 = v.real**2 + v.imag**2
        return v * np.exp(1j * tau * (self.g * a2**self.s - self.W))

    def strang(self, v, n: int = 1):
        """n Strang steps; interior half phase steps are fused."""
        h = 0.5 * self.dt
        v = self.phase(v, h)
        for i in range(n):
            v = ifft(self.free * fft(v))
            v = self.phase(v, h if i == n - 1 else self.dt)
        return v


    def yoshida(self, v, n: int = 1):
        """n fourth-order steps; adjacent phase substeps are fused."""
        if self._jump is None:
            self._jump = [np.exp(-1j * w * self.dt * self.grid.k2) for w in YOSHIDA_WEIGHTS]
        w = YOSHIDA_WEIGHTS
        # phase fractions between consecutive free flows
        mids = (0.5 * (w[0] + w[1]), 0.5 * (w[1] + w[2]))
        v = self.phase(v, 0.5 * w[0] * self.dt)
        for i in range(n):
            for j in range(3):
                v = ifft(self._jump[j] * fft(v))
                if j < 2:
                    tau = mids[j]
                else:
                    tau = 0.5 * w[2] if i == n - 1 else 0.5 * (w[2] + w[0])
                v = self.phase(v, tau * self.dt)
        return v


def _check_finite(v, last, t):
    if not np.all(np.isfinite(v)):
        raise BlowupSuspected(f"non-finite field at t={t:.6g}", last, t)


def step(u: ComplexField, model, dt: float) -> ComplexField:
    """One Strang splitting step of size dt (negative dt integrates backward)."""
    if dt == 0:
        raise ConfigError("dt must be nonzero")
    v = _Stepper(u.grid, model, dt).strang(u.values)
    _check_finite(v, u, math.nan)
    return u.with_values(v)


def _cn(st: _Stepper, v, tol: float, maxiter: int):
    k2 = st.grid.k2
    dt = st.dt
    lhs = 1.0 + 0.5j * dt * k2
    rhs_lin = (1.0 - 0.5j * dt * k2) * fft(v)
    w = ifft(st.free * fft(v))  # predictor
    for _ in range(maxiter):
        mid = 0.5 * (v + w)
        a2 = mid.real**2 + mid.imag**2
        nl = (st.g * a2**st.s - st.W) * mid
        new = ifft((rhs_lin + 1j * dt * fft(nl)) / lhs)
        err = np.max(np.abs(new - w))
        w = new
        if err <= tol * max(1.0, np.max(np.abs(w))):
            return w
    raise InnerIterationError(f"implicit midpoint iteration did not reach {tol:g} (last {err:.2e})")


def crank_nicolson_step(u: ComplexField, model, dt: float, tol: float = 1e-10,
                        maxiter: int = 100) -> ComplexField:
    """Implicit midpoint step; the inner fixed-point increment is driven below tol."""
    if dt == 0:
        raise ConfigError("dt must be nonzero")
    v = _cn(_Stepper(u.grid, model, dt), u.values, tol, maxiter)
    _check_finite(v, u, math.nan)
    return u.with_values(v)


# -- driver -------------------------------------------------------------------

Observer = Callable[[float, ComplexField, int], bool]


def integrate(u0: ComplexField, model, config: EvolutionConfig,
              observer: Observer | None = None) -> tuple[TrajectoryRecord, ComplexField]:
    """Advance u0 from t_start to t_end, sampling every ``cadence`` steps.

    ``observer(t, u, k)`` is called at each sample; returning True stops the
    run (recorded as trigger "observer").  The run also stops when
    ||grad u|| exceeds ``max_grad`` or ||u||/||grad u|| drops below
    ``min_width`` (the blow-up alternative), recording the reason.
    """
    config.validate(u0.grid)
    grid = u0.grid
    st = _Stepper(grid, model, config.dt)
    rec = TrajectoryRecord()
    t = config.t_start
    v = u0.values.copy()
    rec.append(t, u0, model if config.record_energy else None)
    n_total = config.n_steps
    k = 0
    snap_dir = Path(config.snapshot_dir) if config.snapshot_dir else None
    if snap_dir:
        snap_dir.mkdir(parents=True, exist_ok=True)
    if observer is not None and observer(t, u0, 0):
        rec.trigger, rec.trigger_time = "observer", t
        return rec, u0
    while k < n_total:
        n = min(config.cadence, n_total - k)
        last = v
        if config.stepper == "strang-splitting":
            v = st.strang(v, n)
        elif config.stepper == "yoshida4":
            v = st.yoshida(v, n)
        else:
            for _ in range(n):
                v = _cn(st, v, config.cn_tol, config.cn_maxiter)
        k += n
        t = config.t_start + k * config.dt
        _check_finite(v, ComplexField(grid, last), t)
        u = ComplexField(grid, v)
        rec.append(t, u, model if config.record_energy else None)
        if snap_dir and config.snapshot_cadence and (k // config.cadence) % config.snapshot_cadence == 0:
            save_snapshot(u, snap_dir / f"u_{k:08d}.nlsf", {"t": t, "step": k})
        nr: NormReport = rec.norms[-1]
        reason = None
        if nr.gradient_l2 > config.max_grad:
            reason = "max_grad"
        elif nr.gradient_l2 > 0 and nr.l2 / nr.gradient_l2 < config.min_width:
            reason = "min_width"
        elif observer is not None and observer(t, u, k):
            reason = "observer"
        if reason:
            rec.trigger, rec.trigger_time = reason, t
            if reason != "observer":
                log.info("blow-up alternative: %s at t=%.6g", reason, t)
            break
    return rec, ComplexField(grid, v)
