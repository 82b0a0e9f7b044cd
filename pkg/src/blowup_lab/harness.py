"""Blow-up experiments: initial data on the Q-orbit with prescribed energy,
integration toward t = 0-, decomposition along the way, and rate fits.

Prediction for energy level E0 (C = ||yQ||^2 / (8 E0), alpha = C^{-1/2}):

    lambda(t) ~ alpha |t|,   b(t) ~ alpha^2 |t|,   b/lambda ~ alpha.

The initial data at t1 = -C/s1 is lambda1^{-N/2} Q(x/lambda1) e^{-i b1|x|^2/(4 lambda1^2)}
with lambda1 = sqrt(C)/s1 and b1 fixed by E(u(t1)) = E0.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .evolve import EvolutionConfig, TrajectoryRecord, integrate
from .fields import ComplexField, GridSpec, energy, make_grid, mass, momentum
from .groundstate import GroundStateBundle, load_or_solve
from .linops import penalized_mu, solve_rho
from .modulation import (DEFAULT_DELTA, DEFAULT_EPS_PRIME, DecompositionError, DeltaWarning,
                         ModulationParams, ProfileContext, decompose, energy_constants,
                         mod_vector, modified_energy_H, psi_field, recompose, rescaled_time)
from .potentials import Model, catalog_W, catalog_g, kappa, load_model, model_from_dict

log = logging.getLogger(__name__)


class ExperimentConfigError(ValueError):
    pass


class ExperimentAborted(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


# reference grids for mu (coercivity) per dimension
MU_GRIDS = {1: (512, 24.0), 2: (256, 16.0)}


@dataclass
class ExperimentConfig:
    N: int = 1
    E0: float = 1.0
    s1: float | None = None
    lambda1: float | None = None
    g: str | dict = "one"
    W: list | str | dict = "zero"
    model_path: str | None = None
    M: int = 4096
    L: float = 10.0
    stepper: str = "yoshida4"
    direction: str = "backward"
    span: float | None = None
    dt: float | None = None
    dt_factor: float = 0.004
    floor_cells: float = 8.0
    lam_floor: float | None = None
    s_max: float | None = None
    samples: int = 1500
    s0: float = 0.0
    delta: float = DEFAULT_DELTA
    eps_prime: float = DEFAULT_EPS_PRIME
    window_fraction: float = 0.8
    fit_decades: float = 1.0
    tolerance: float | None = None
    psi_every: int = 10
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        grid = d.pop("grid", None)
        if grid:
            d.setdefault("M", grid.get("M"))
            d.setdefault("L", grid.get("L"))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ExperimentConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ExperimentConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_dict(d)
        if cfg.model_path and not Path(cfg.model_path).is_absolute():
            cfg.model_path = str(Path(path).parent / cfg.model_path)
        return cfg

    def validate(self):
        if self.N not in (1, 2):
            raise ExperimentConfigError("N must be 1 or 2")
        if not self.E0 > 0:
            raise ExperimentConfigError("E0 must be positive")
        if (self.s1 is None) == (self.lambda1 is None):
            raise ExperimentConfigError("give exactly one of s1 and lambda1")
        if self.direction not in ("backward", "forward"):
            raise ExperimentConfigError("direction must be 'backward' or 'forward'")
        if self.span is not None and not self.span > 1:
            raise ExperimentConfigError("span must exceed 1")
        if self.s1 is not None and self.s1 < self.s0:
            raise ExperimentConfigError(f"s1={self.s1} below s0={self.s0}")
        try:
            make_grid(self.N, self.M, self.L)
        except ValueError as exc:
            raise ExperimentConfigError(str(exc)) from exc

    def grid(self) -> GridSpec:
        return make_grid(self.N, self.M, self.L)

    def model(self) -> Model:
        if self.model_path:
            return load_model(self.model_path, self.N)
        if isinstance(self.W, dict) or isinstance(self.g, dict):
            g = self.g if isinstance(self.g, dict) else catalog_g(self.g).to_dict()
            W = self.W["terms"] if isinstance(self.W, dict) else catalog_W(self.W, self.N).to_list()
            return model_from_dict({"g": g, "W": W, "N": self.N,
                                    "window_fraction": self.window_fraction}, self.N)
        return Model(catalog_g(self.g), catalog_W(self.W, self.N), self.window_fraction)

    def to_dict(self) -> dict:
        return asdict(self)


def predicted_alpha(E0: float, virial_sq: float) -> float:
    return math.sqrt(8.0 * E0 / virial_sq)


# -- initial data ---------------------------------------------------------------

@dataclass
class InitialData:
    u: ComplexField
    params: ModulationParams
    t1: float
    s1: float
    energy: float


def initial_lambda(config: ExperimentConfig, bundle: GroundStateBundle) -> float:
    """lambda1, given directly or through s1 = sqrt(C)/lambda1."""
    if config.lambda1 is not None:
        return float(config.lambda1)
    return math.sqrt(bundle.virial_sq / (8.0 * config.E0)) / config.s1


def prepare_initial(config: ExperimentConfig, bundle: GroundStateBundle | None = None,
                    model: Model | None = None) -> InitialData:
    bundle = bundle or load_or_solve(config.N)
    model = model or config.model()
    grid = config.grid()
    C = bundle.virial_sq / (8.0 * config.E0)
    lam1 = initial_lambda(config, bundle)
    s1 = math.sqrt(C) / lam1
    t1 = -C / s1
    zero = (0.0,) * config.N

    def gap(b):
        return energy(recompose(ModulationParams(lam1, b, 0.0, zero), None, grid, bundle), model) - config.E0

    # E(b) - E(0) = b^2 ||yQ||^2 / (8 lambda1^2) exactly, which sizes the bracket
    e_flat = gap(0.0)
    if e_flat >= 0:
        raise ExperimentConfigError(
            f"E(Q_lambda1) - E0 = {e_flat:.3g} >= 0: no b1 > 0 reaches the target energy")
    guess = lam1 * math.sqrt(-8.0 * e_flat / bundle.virial_sq)
    try:
        b1 = brentq(gap, 0.0, 2.0 * guess + 1e-3, xtol=1e-15, rtol=1e-14)
    except ValueError as exc:
        raise ExperimentConfigError(f"b1 root bracket failed: {exc}") from exc
    p = ModulationParams(lam1, b1, 0.0, zero)
    u = recompose(p, None, grid, bundle)
    return InitialData(u, p, t1, s1, energy(u, model))


# -- fits -----------------------------------------------------------------------

@dataclass
class LinearFit:
    slope: float
    intercept: float
    residual: float

    @classmethod
    def fit(cls, x, y, through_origin: bool = False) -> "LinearFit":
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if through_origin:
            a = float(np.dot(x, y) / np.dot(x, x))
            c = 0.0
        else:
            a, c = (float(v) for v in np.polyfit(x, y, 1))
        res = float(np.sqrt(np.mean((y - a * x - c) ** 2)))
        return cls(a, c, res)


@dataclass
class RateFitReport:
    window: tuple[float, float]
    n_samples: int
    predicted_lambda_slope: float
    predicted_b_slope: float
    lambda_slope: float
    lambda_slope_origin: float
    blowup_time: float
    b_slope: float
    b_over_lambda: float
    lambda_rel_dev: float
    b_over_lambda_rel_dev: float
    lambda_loglog_exponent: float
    w_over_t_max: float
    w_decay_exponent: float
    eps_decay_exponent: float
    eps_predicted_exponent: float
    residuals: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.lambda_rel_dev <= tol and self.b_over_lambda_rel_dev <= tol

    def to_dict(self) -> dict:
        return asdict(self)


def _loglog(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 3:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def fit_rates(t, lam, b, w, E0: float, virial_sq: float, decades: float = 1.0,
              s=None, eps_h1=None, kappa_value: float = 1.0) -> RateFitReport:
    """Fits on the final ``decades`` of lambda (within 10^decades of its smallest value).

    lambda = a (T - t) with T free (the blow-up time of a finite-s1 run is only
    approximately 0), and lambda = a|t| through the origin; b/lambda by a fit
    through the origin against lambda; b = a_b (T - t).
    """
    t = np.asarray(t, float)
    lam = np.asarray(lam, float)
    b = np.asarray(b, float)
    w = np.asarray(w, float).reshape(t.size, -1)
    alpha = predicted_alpha(E0, virial_sq)
    sel = lam <= lam.min() * 10.0**decades
    if sel.sum() < 5:
        raise ValueError("fewer than 5 samples in the fit window")
    ts, ls, bs, ws = t[sel], lam[sel], b[sel], w[sel]
    f_free = LinearFit.fit(-ts, ls)
    a = f_free.slope
    T = f_free.intercept / a
    f_orig = LinearFit.fit(np.abs(ts), ls, through_origin=True)
    f_b = LinearFit.fit(-ts, bs)
    f_ratio = LinearFit.fit(ls, bs, through_origin=True)
    tau = T - ts
    wn = np.linalg.norm(ws, axis=1)
    eps_exp = math.nan
    L_exp = 1.0 + 0.5 * kappa_value
    if s is not None and eps_h1 is not None:
        ss = np.asarray(s, float)[sel]
        eps_exp = -_loglog(ss, np.asarray(eps_h1, float)[sel])
    return RateFitReport(
        window=(float(ts[0]), float(ts[-1])),
        n_samples=int(sel.sum()),
        predicted_lambda_slope=alpha,
        predicted_b_slope=alpha**2,
        lambda_slope=a,
        lambda_slope_origin=f_orig.slope,
        blowup_time=float(T),
        b_slope=f_b.slope,
        b_over_lambda=f_ratio.slope,
        lambda_rel_dev=abs(a / alpha - 1.0),
        b_over_lambda_rel_dev=abs(f_ratio.slope / alpha - 1.0),
        lambda_loglog_exponent=_loglog(tau, ls),
        w_over_t_max=float(np.max(wn / np.abs(tau))),
        w_decay_exponent=_loglog(np.abs(tau), wn),
        eps_decay_exponent=eps_exp,
        eps_predicted_exponent=L_exp + 0.25 * kappa_value,
        residuals={"lambda": f_free.residual, "lambda_origin": f_orig.residual,
                   "b": f_b.residual, "b_over_lambda": f_ratio.residual},
    )


# -- the experiment -------------------------------------------------------------

MOD_COLUMNS_BASE = ["t", "s", "lambda", "b", "gamma"]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    initial: InitialData
    trajectory: TrajectoryRecord
    series: dict
    fit: RateFitReport | None
    kappa: float
    mu: float
    audits: dict
    outputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        tol = self.config.tolerance
        return self.fit is not None and (tol is None or self.fit.passed(tol))


def default_tolerance(model: Model) -> float:
    return 0.05 if model.W.is_zero else 0.10


def run_blowup_experiment(config: ExperimentConfig, bundle: GroundStateBundle | None = None,
                          mu: float | None = None) -> ExperimentResult:
    config.validate()
    bundle = bundle or load_or_solve(config.N)
    model = config.model()
    grid = config.grid()
    kap = kappa(model.g, model.W, config.N).kappa
    if mu is None:
        M, L = MU_GRIDS[config.N]
        mg = make_grid(config.N, M, L)
        mu = penalized_mu(bundle, solve_rho(bundle, mg), mg)
    consts = energy_constants(kap, mu)
    ctx = ProfileContext(bundle)
    lam_floor = config.lam_floor or config.floor_cells * grid.h
    backward = config.direction == "backward"
    lam1 = initial_lambda(config, bundle)
    if backward and lam1 < lam_floor * (1 - 1e-12):
        raise ExperimentConfigError(f"lambda1={lam1:.4g} is below the resolvable floor {lam_floor:.4g}")
    init = prepare_initial(config, bundle, model)
    span = config.span or 1.5 * 10.0**config.fit_decades
    lam_min = init.params.lam if backward else lam_floor
    dt = config.dt or config.dt_factor * lam_min**2
    if backward:
        # data fixed at t1 < 0, integrated away from the singular time
        t_end, lam_stop = span * init.t1, span * init.params.lam
        dt = -abs(dt)
    else:
        t_end, lam_stop = -init.t1, math.inf
    n_steps = int(math.ceil(abs(t_end - init.t1) / abs(dt)))
    cadence = max(1, n_steps // max(config.samples, 1))
    psi_grid = make_grid(config.N, 512 if config.N == 1 else 128, 16.0 if config.N == 1 else 12.0)

    rows = []
    state = {"p": init.params}

    def observer(t, u, k):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DeltaWarning)
            eps = decompose(u, state["p"], ctx, delta=config.delta)
        if caught:
            raise ExperimentAborted(f"decomposition left the basin at t={t:.6g}: {caught[0].message}",
                                    rows)
        p = eps.params
        state["p"] = p
        diag = modified_energy_H(model, eps, consts)
        psi = math.nan
        if len(rows) % config.psi_every == 0:
            psi = psi_field(model, p, psi_grid, bundle, config.eps_prime).weighted_h1
        rows.append({
            "t": t, "lambda": p.lam, "b": p.b, "gamma": p.gamma, "w": p.w,
            "eps_l2": math.sqrt(eps.l2_sq()), "eps_h1": math.sqrt(eps.h1_sq()),
            "y_eps_l2": math.sqrt(eps.y_l2_sq()), "H": diag.H, "S": diag.S,
            "comparator": diag.comparator, "psi_norm": psi,
            "mass_identity": eps.eps_Q + 0.5 * eps.l2_sq(),
            "mass_excess": 0.5 * (mass(u) - bundle.mass_sq),
            "ortho": max(abs(v) for v in eps.orthogonality.values()),
            "momentum_ortho": _momentum_pairing(eps, bundle),
        })
        if backward:
            return p.lam > lam_stop
        return p.lam < lam_floor or (config.s_max is not None and len(rows) > 1
                                     and _s_estimate(rows, init) > config.s_max)

    # forward runs with W or g present need not blow up exactly at 0, so they
    # may cross t = 0; they stop at lambda_floor (or s_max)
    try:
        if backward and config.dt is None:
            traj = _integrate_growing_dt(init.u, model, config, observer, init.t1, t_end,
                                         lambda: state["p"].lam, span)
        else:
            ecfg = EvolutionConfig(dt=dt, t_start=init.t1, t_end=t_end, stepper=config.stepper,
                                   cadence=cadence)
            traj, _ = integrate(init.u, model, ecfg, observer)
    except DecompositionError as exc:
        raise ExperimentAborted(f"decomposition failed: {exc}", rows) from exc

    series = _series(rows, init, config.N)
    fit = None
    try:
        fit = fit_rates(series["t"], series["lambda"], series["b"], series["w"], config.E0,
                        bundle.virial_sq, config.fit_decades, series["s"], series["eps_h1"], kap)
    except ValueError as exc:
        log.warning("rate fit skipped: %s", exc)
    audits = _audits(series, consts, bundle, config.E0, kap, fit)
    audits["mass_drift"] = traj.max_mass_drift()
    audits["energy_drift"] = traj.max_energy_drift()
    audits["momentum_t1"] = float(np.max(np.abs(momentum(init.u))))
    audits["lam_floor"] = lam_floor
    audits["direction"] = config.direction
    lam_max = float(np.max(series["lambda"]))
    audits["box_ratio"] = grid.L / lam_max
    audits["dt"] = dt
    audits["trigger"] = traj.trigger
    if config.tolerance is None:
        config.tolerance = default_tolerance(model)
    res = ExperimentResult(config, init, traj, series, fit, kap, mu, audits)
    if config.output_dir:
        res.outputs = write_outputs(res)
    return res


SEGMENT_GROWTH = 1.25


def _integrate_growing_dt(u, model, config, observer, t1, t_end, current_lam, span):
    """Backward run in segments over which |t| grows by SEGMENT_GROWTH.

    Each segment uses dt = dt_factor * lambda^2 at its start, so the step
    follows the profile scale instead of staying pinned at lambda1^2.
    """
    n_seg = max(1, math.ceil(math.log(span) / math.log(SEGMENT_GROWTH)))
    per_seg = max(2, config.samples // n_seg)
    rec = None
    t = t1
    while t > t_end:
        t_next = max(t * SEGMENT_GROWTH, t_end)
        dt_nom = config.dt_factor * current_lam() ** 2
        n = max(1, math.ceil((t - t_next) / dt_nom))
        first = rec is None
        ecfg = EvolutionConfig(dt=(t_next - t) / n, t_start=t, t_end=t_next,
                               stepper=config.stepper, cadence=max(1, n // per_seg))
        obs = observer if first else (lambda tt, uu, k: False if k == 0 else observer(tt, uu, k))
        seg, u = integrate(u, model, ecfg, obs)
        if first:
            rec = seg
        else:
            for name in ("times", "norms", "mass", "energy"):
                getattr(rec, name).extend(getattr(seg, name)[1:])
            rec.trigger, rec.trigger_time = seg.trigger, seg.trigger_time
        if seg.trigger:
            break
        t = t_next
    return rec


def _momentum_pairing(eps, bundle):
    r = np.sqrt(sum(y * y for y in eps.ys))
    dq = bundle.profile(r, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        grads = [np.where(r > 0, dq * y / r, 0.0) for y in eps.ys]
    return max(abs(eps.integrate(np.imag(eps.values) * g)) for g in grads)


def _s_estimate(rows, init):
    t = np.array([r["t"] for r in rows])
    lam = np.array([r["lambda"] for r in rows])
    return float(rescaled_time(t, lam, init.t1, init.s1)[-1])


def _series(rows, init, N):
    if len(rows) < 3:
        raise ExperimentAborted("fewer than 3 samples recorded", rows)
    out = {k: np.array([r[k] for r in rows]) for k in rows[0] if k != "w"}
    out["w"] = np.array([r["w"] for r in rows]).reshape(len(rows), N)
    out["s"] = rescaled_time(out["t"], out["lambda"], init.t1, init.s1)
    mv = mod_vector(out["s"], out["lambda"], out["b"], out["gamma"], out["w"])
    out["mod1"], out["mod2"], out["mod3"] = mv.scale, mv.curvature, mv.phase
    out["mod4"] = np.linalg.norm(np.atleast_2d(mv.translation.T).T, axis=1)
    return out


def _audits(series, consts, bundle, E0, kap, fit) -> dict:
    s = series["s"]
    L_exp = consts.L_exp
    boot = series["eps_h1"] ** 2 + series["b"] ** 2 * series["y_eps_l2"] ** 2
    mod = np.sqrt(series["mod1"] ** 2 + series["mod2"] ** 2 + series["mod3"] ** 2 + series["mod4"] ** 2)
    C = bundle.virial_sq / (8.0 * E0)
    sgrid = np.abs(C / s - np.abs(series["t"]))
    dS = np.gradient(series["S"], s)
    # the s-power bounds are stated for s > 0; a badly off rate can push s through 0
    pos = s > 0
    sp = s[pos]

    def smax(v):
        return float(np.max(v)) if v.size else float("nan")

    return {
        "mass_identity_max": float(np.max(np.abs(series["mass_identity"] - series["mass_excess"]))),
        "orthogonality_max": float(np.max(series["ortho"])),
        "H_coercive_fraction": float(np.mean(series["H"] >= series["comparator"])),
        "s_nonpositive_samples": int(np.sum(~pos)),
        "bootstrap_fraction": float(np.mean(boot[pos] < sp ** (-2 * L_exp))) if sp.size else float("nan"),
        "mod_constant": smax(mod[pos] * sp ** (2 * L_exp)),
        "sgrid_constant": float(np.max(sgrid / np.abs(series["t"]) ** (1 + kap))),
        "momentum_constant": smax(series["momentum_ortho"][pos] * sp ** (2 * L_exp - 1)),
        "S_nondecreasing_fraction": float(np.mean(dS >= 0)),
        "constants": asdict(consts),
    }


# -- outputs --------------------------------------------------------------------

def modulation_columns(N: int) -> list[str]:
    wcols = ["w"] if N == 1 else [f"w{j + 1}" for j in range(N)]
    return (MOD_COLUMNS_BASE + wcols + ["eps_l2", "eps_h1", "y_eps_l2", "mod1", "mod2", "mod3",
                                        "mod4", "H", "S", "psi_norm"])


def write_modulation_csv(series: dict, N: int, path) -> Path:
    path = Path(path)
    cols = modulation_columns(N)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i in range(series["t"].size):
            row = [series["t"][i], series["s"][i], series["lambda"][i], series["b"][i], series["gamma"][i]]
            row += list(series["w"][i])
            row += [series[k][i] for k in ("eps_l2", "eps_h1", "y_eps_l2", "mod1", "mod2", "mod3",
                                           "mod4", "H", "S", "psi_norm")]
            wr.writerow([repr(float(v)) for v in row])
    return path


def read_modulation_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    cols = rows[0].keys()
    if "lambda" not in cols or "b" not in cols or "t" not in cols:
        raise ValueError(f"{path}: not a modulation trajectory (needs t, lambda, b)")
    out = {k: np.array([float(r[k]) for r in rows]) for k in cols}
    wk = [k for k in cols if k == "w" or (k.startswith("w") and k[1:].isdigit())]
    out["w"] = np.column_stack([out[k] for k in wk]) if wk else np.zeros((len(rows), 1))
    return out


def plot_svg(series: dict, fit: RateFitReport | None, path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.abs(series["t"])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(t, series["lambda"], label="lambda")
    ax.loglog(t, np.abs(series["b"]), label="b")
    eh = np.maximum(series["eps_h1"], 1e-16)
    ax.loglog(t, eh, label="||eps||_H1")
    if fit is not None:
        ax.loglog(t, fit.predicted_lambda_slope * t, "k--", lw=0.8, label="predicted lambda")
        ax.axvspan(abs(fit.window[1]), abs(fit.window[0]), color="0.9", zorder=0)
    ax.set_xlabel("|t|")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def write_outputs(res: ExperimentResult) -> dict:
    out = Path(res.config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trajectory": res.trajectory.to_csv(out / "trajectory.csv"),
        "modulation": write_modulation_csv(res.series, res.config.N, out / "modulation.csv"),
        "plot": plot_svg(res.series, res.fit, out / "rates.svg"),
    }
    report = {"config": res.config.to_dict(), "kappa": res.kappa, "mu": res.mu,
              "t1": res.initial.t1, "s1": res.initial.s1, "initial": asdict(res.initial.params),
              "fit": res.fit.to_dict() if res.fit else None,
              "audits": res.audits, "passed": res.passed}
    files["report"] = out / "report.json"
    files["report"].write_text(json.dumps(report, indent=2, default=_json_default))
    return {k: str(v) for k, v in files.items()}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
