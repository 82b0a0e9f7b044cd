"""Release-gate checks: operator identities, explicit solutions, scaling audits.

Each check produces a CheckResult; failures are entries in the report, not
exceptions.  Reports are written as JUnit XML plus a plain-text summary.
"""
from __future__ import annotations

import logging
import math
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evolve import EvolutionConfig, integrate
from .exact import ExplicitSolutionSpec
from .fields import energy, make_grid, mass, norms, load_snapshot, save_snapshot
from .groundstate import GroundStateBundle, cache_dir, gn_quotient, load_or_solve
from .linops import RhoProfile, coercivity_mu, identity_residuals, solve_rho
from .modulation import (MIN_LAMBDA_CELLS, ModulationParams, ProfileContext, decompose, psi_field,
                         recompose)
from .potentials import Model, PotentialSpec, PotentialTerm, W_CATALOG, catalog_W, kappa

log = logging.getLogger(__name__)

# (M, L, tolerance) for the identity checks; 2-D grids are coarser
IDENTITY_GRIDS = {1: (1024, 32.0, 1e-6), 2: (512, 24.0, 1e-5)}


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


@dataclass
class SuiteReport:
    name: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def add(self, name, value, tol, passed=None, detail="", seconds=0.0) -> CheckResult:
        value = float(value)
        if passed is None:
            passed = bool(np.isfinite(value) and value <= tol)
        c = CheckResult(name, value, float(tol), bool(passed), detail, seconds)
        self.checks.append(c)
        return c

    def extend(self, other: "SuiteReport"):
        self.checks.extend(other.checks)

    def summary(self) -> str:
        lines = [f"suite {self.name}: {len(self.checks) - len(self.failures)}/{len(self.checks)} passed"]
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            extra = f"  ({c.detail})" if c.detail else ""
            lines.append(f"  {tag} {c.name}: {c.value:.3e} (tol {c.tolerance:.1e}){extra}")
        return "\n".join(lines)

    def to_junit(self, path) -> Path:
        path = Path(path)
        root = ET.Element("testsuite", name=self.name, tests=str(len(self.checks)),
                          failures=str(len(self.failures)))
        for c in self.checks:
            case = ET.SubElement(root, "testcase", classname=f"blowup_lab.{self.name}",
                                 name=c.name, time=f"{c.seconds:.3f}")
            if not c.passed:
                ET.SubElement(case, "failure",
                              message=f"{c.value:.3e} exceeds {c.tolerance:.1e}").text = c.detail
        ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)
        return path


# -- rho cache ------------------------------------------------------------------

def rho_cache_path(directory, grid) -> Path:
    return Path(directory) / f"rho_N{grid.dim}_M{grid.M}_L{grid.L:g}.nlsf"


def cached_rho(bundle: GroundStateBundle, grid, directory=None) -> RhoProfile:
    """rho on ``grid``, read from the cache directory when present.

    The cached field is trusted as is; the identity suite is what catches a
    stale or damaged file.
    """
    directory = directory or cache_dir()
    if directory is None:
        return solve_rho(bundle, grid)
    path = rho_cache_path(directory, grid)
    if path.exists():
        f, meta = load_snapshot(path)
        if f.grid == grid:
            return RhoProfile(f, float(meta.get("residual", math.nan)))
        log.warning("ignoring %s: grid mismatch", path)
    rho = solve_rho(bundle, grid)
    Path(directory).mkdir(parents=True, exist_ok=True)
    save_snapshot(rho.field, path, {"residual": rho.residual})
    return rho


# -- identity suite -------------------------------------------------------------

def identity_checks(N: int = 1, cache=None, grid=None, tol=None, roundtrip: int = 8,
                    seed: int = 0) -> SuiteReport:
    M, L, default_tol = IDENTITY_GRIDS[N]
    grid = grid or make_grid(N, M, L)
    tol = default_tol if tol is None else tol
    rep = SuiteReport(f"identities-N{N}")
    t0 = time.perf_counter()
    bundle = load_or_solve(N)
    rho = cached_rho(bundle, grid, cache)
    for name, val in identity_residuals(bundle, grid, rho).items():
        rep.add(name, val, tol)
    q = bundle.on_grid(grid)
    h1sq = norms(q).h1 ** 2
    rep.add("E(Q)=0", abs(energy(q)) / h1sq, tol)
    rep.add("J(Q)=1", abs(gn_quotient(q, bundle) - 1.0), tol)
    rep.add("mass(Q)", abs(mass(q) - bundle.mass_sq) / bundle.mass_sq, tol)
    cr = coercivity_mu(bundle, rho, grid, raise_on_violation=False)
    rep.add("coercivity mu>0", cr.mu, 0.0, passed=cr.mu > 0,
            detail=f"mu+={cr.mu_plus:.4g} mu-={cr.mu_minus:.4g}")
    if roundtrip:
        rep.add("decompose(recompose) params", roundtrip_error(bundle, grid, roundtrip, seed), 1e-8)
    for c in rep.checks:
        c.seconds = (time.perf_counter() - t0) / len(rep.checks)
    return rep


def random_params(rng, N: int, n: int, lam_min: float = 0.3) -> list[ModulationParams]:
    out = []
    for _ in range(n):
        out.append(ModulationParams(lam=float(rng.uniform(lam_min, 1.5)), b=float(rng.uniform(-0.5, 0.5)),
                                    gamma=float(rng.uniform(-np.pi, np.pi)),
                                    w=tuple(float(v) for v in rng.uniform(-0.2, 0.2, N))))
    return out


def roundtrip_error(bundle, grid, n: int = 100, seed: int = 0) -> float:
    """Max parameter error of decompose(recompose(p, 0)) over n random p."""
    rng = np.random.default_rng(seed)
    ctx = ProfileContext(bundle)
    worst = 0.0
    # lambda must span at least MIN_LAMBDA_CELLS cells of the grid
    lam_min = max(0.3, 1.01 * MIN_LAMBDA_CELLS * grid.h)
    for p in random_params(rng, grid.dim, n, lam_min):
        u = recompose(p, None, grid, bundle)
        eps = decompose(u, ModulationParams.identity(grid.dim), ctx)
        worst = max(worst, float(np.max(np.abs(eps.params.wrapped().as_array() - p.wrapped().as_array()))))
    return worst


# -- explicit-solution suite ----------------------------------------------------

EXACT_CASES = (
    ("cnls-S", ExplicitSolutionSpec("cnls-S", 1), 1e-4),
    ("stark", ExplicitSolutionSpec("stark", 1, E=(1.0,)), 1e-3),
    ("repulsive-harmonic", ExplicitSolutionSpec("repulsive-harmonic", 1, omega=0.3), 1e-3),
)


def exact_model(spec: ExplicitSolutionSpec) -> Model:
    if spec.kind == "stark":
        # the family solves the equation with W = -E.x
        return Model(W=PotentialSpec((PotentialTerm("linear", cls="W1", vector=tuple(-e for e in spec.E)),), spec.dim))
    if spec.kind == "repulsive-harmonic":
        return Model(W=PotentialSpec((PotentialTerm("repulsive-harmonic", cls="W1", omega=spec.omega),), spec.dim))
    return Model()


def exact_run(spec, M=1024, L=24.0, dt=1e-4, t0=-1.0, t1=-0.5, stepper="strang-splitting"):
    """Evolve spec(t0) to t1; returns (L2 error, max mass drift, max energy drift)."""
    bundle = load_or_solve(spec.dim)
    grid = make_grid(spec.dim, M, L)
    model = exact_model(spec)
    u0 = spec.evaluate(t0, grid, bundle)
    cadence = max(1, int(round((t1 - t0) / dt)) // 50)
    rec, u = integrate(u0, model, EvolutionConfig(dt=dt, t_start=t0, t_end=t1, stepper=stepper,
                                                  cadence=cadence))
    err = math.sqrt(mass(u - spec.evaluate(t1, grid, bundle)))
    return err, rec.max_mass_drift(), rec.max_energy_drift()


def exact_checks(**kw) -> SuiteReport:
    rep = SuiteReport("exact")
    for name, spec, tol in EXACT_CASES:
        t0 = time.perf_counter()
        err, dm, de = exact_run(spec, **kw)
        sec = time.perf_counter() - t0
        rep.add(f"{name} L2 error", err, tol, seconds=sec)
        rep.add(f"{name} mass drift", dm, 1e-8)
        rep.add(f"{name} energy drift", de, 1e-6)
    return rep


# -- Psi scaling ----------------------------------------------------------------

PSI_LAMBDAS = (0.1, 0.05, 0.025)
PSI_SHIFTS = (0.0, 0.05)


def psi_scaling_table(name: str, N: int = 1, grid=None, bundle=None) -> dict:
    """||e^{eps'|y|} Psi||_{H^1} / [lambda^{1+kappa} (lambda + |w|)] over the audit lattice."""
    bundle = bundle or load_or_solve(N)
    grid = grid or make_grid(N, 512 if N == 1 else 128, 16.0 if N == 1 else 12.0)
    model = Model(W=catalog_W(name, N))
    kap = kappa(model.g, model.W, N).kappa
    out = {}
    for w in PSI_SHIFTS:
        for lam in PSI_LAMBDAS:
            p = ModulationParams(lam=lam, b=0.0, gamma=0.0, w=(w,) + (0.0,) * (N - 1))
            nrm = psi_field(model, p, grid, bundle).weighted_h1
            out[(lam, w)] = nrm / (lam ** (1 + kap) * (lam + abs(w)))
    return out


def psi_growth(table: dict) -> float:
    """Largest factor by which the ratio grows as lambda decreases at fixed w.

    The estimate is an upper bound, so only growth toward small lambda would
    contradict it; a ratio that shrinks means the bound is not sharp there.
    """
    worst = 1.0
    for w in PSI_SHIFTS:
        vals = [table[(lam, w)] for lam in PSI_LAMBDAS]
        for i, a in enumerate(vals):
            for c in vals[i + 1:]:
                worst = max(worst, c / a)
    return worst


def psi_spread(table: dict) -> float:
    vals = np.array([v for v in table.values() if v > 0])
    return float(vals.max() / vals.min()) if vals.size else 1.0


def psi_checks(N: int = 1) -> SuiteReport:
    rep = SuiteReport(f"psi-N{N}")
    for name in W_CATALOG:
        if name == "zero":
            continue
        tab = psi_scaling_table(name, N)
        rep.add(f"Psi ratio growth [{name}]", psi_growth(tab), 2.0, passed=psi_growth(tab) < 2.0,
                detail=f"max/min over lattice {psi_spread(tab):.3g}")
    return rep


# -- entry point ----------------------------------------------------------------

SUITES = ("identities", "exact", "psi", "all")


def run_identity_suite(suite: str = "identities", dims=(1,), cache=None, out_dir=None) -> SuiteReport:
    """Run the selected checks; writes junit.xml and summary.txt into ``out_dir``."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}")
    rep = SuiteReport(suite)
    if suite in ("identities", "all"):
        for N in dims:
            rep.extend(identity_checks(N, cache=cache))
    if suite in ("exact", "all"):
        rep.extend(exact_checks())
    if suite in ("psi", "all"):
        rep.extend(psi_checks(1))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_junit(out / "junit.xml")
        (out / "summary.txt").write_text(rep.summary() + "\n")
    return rep
