"""Catalog of inhomogeneities g and potentials W, the exponent kappa, and
numerical spot-checks of the admissibility assumptions.

Functions here take coordinates as a tuple of arrays ``(x1,)`` or ``(x1, x2)``
so the same callables serve point evaluation and whole-grid sampling.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

W_CLASSES = ("W1", "W2-1", "W2-2", "none")
# exp(C|x|) overflows double precision past ~709; keep a margin.
_EXP_LIMIT = 700.0


def smooth_step(t, a: float, b: float):
    """C-infinity cutoff: 1 for t <= a, 0 for t >= b."""
    t = np.asarray(t, dtype=float)
    s = np.clip((t - a) / (b - a), 0.0, 1.0)

    def f(z):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    fa, fb = f(1.0 - s), f(s)
    return fa / (fa + fb)


def smooth_step_deriv(t, a: float, b: float):
    t = np.asarray(t, dtype=float)
    s = np.clip((t - a) / (b - a), 0.0, 1.0)
    inside = (s > 0) & (s < 1)
    out = np.zeros_like(s)
    if np.any(inside):
        z = s[inside]
        # psi = 1/(1+exp(1/(1-z) - 1/z)); derivative via the exponent
        q = 1.0 / (1.0 - z) - 1.0 / z
        dq = 1.0 / (1.0 - z) ** 2 + 1.0 / z**2
        # e/(1+e)^2 with e = exp(q), written to avoid overflow
        with np.errstate(over="ignore"):
            bell = 0.25 / np.cosh(0.5 * q) ** 2
        out[inside] = -bell * dq / (b - a)
    return out


def _as_coords(x) -> tuple[np.ndarray, ...]:
    if isinstance(x, tuple):
        return tuple(np.asarray(c, dtype=float) for c in x)
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    return tuple(np.asarray(c) for c in arr)


def _radius(coords) -> np.ndarray:
    return np.sqrt(sum(c * c for c in coords))


def _radial_grad(coords, dfdr):
    """Cartesian gradient of a radial function given df/dr samples."""
    r = _radius(coords)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = [np.where(r > 0, c / r, 0.0) for c in coords]
    return [dfdr * u for u in unit]


# -- inhomogeneity g ----------------------------------------------------------

@dataclass(frozen=True)
class InhomogeneitySpec:
    """g(x).  ``flat-bump`` is 1 - amplitude*|x|^{2+r}*psi(|x|) with psi a
    smooth cutoff equal to 1 on |x| <= radius/2 and 0 beyond ``radius``."""

    kind: str = "constant-one"
    r: float = math.inf
    amplitude: float = 1.0
    radius: float = 1.0
    func: Callable | None = field(default=None, compare=False)
    grad: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant-one", "flat-bump", "custom-callable"):
            raise ValueError(f"unknown inhomogeneity kind {self.kind!r}")
        if not self.r > 0:
            raise ValueError("exponent r must be positive")
        if self.kind == "custom-callable" and (self.func is None or self.grad is None):
            raise ValueError("custom-callable g needs func and grad")

    def value(self, coords):
        coords = _as_coords(coords)
        if self.kind == "constant-one":
            return np.ones(np.broadcast(*coords).shape)
        if self.kind == "flat-bump":
            rad = _radius(coords)
            psi = smooth_step(rad, 0.5 * self.radius, self.radius)
            return 1.0 - self.amplitude * rad ** (2.0 + self.r) * psi
        return np.asarray(self.func(coords), dtype=float)

    def gradient(self, coords):
        coords = _as_coords(coords)
        if self.kind == "constant-one":
            return [np.zeros(np.broadcast(*coords).shape) for _ in coords]
        if self.kind == "flat-bump":
            rad = _radius(coords)
            a, b = 0.5 * self.radius, self.radius
            p = 2.0 + self.r
            dr = -self.amplitude * (
                p * rad ** (p - 1.0) * smooth_step(rad, a, b) + rad**p * smooth_step_deriv(rad, a, b)
            )
            return _radial_grad(coords, dr)
        return [np.asarray(gi, dtype=float) for gi in self.grad(coords)]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "r": None if math.isinf(self.r) else self.r,
             "params": {"amplitude": self.amplitude, "radius": self.radius}}
        return d


def eval_g(spec: InhomogeneitySpec, x) -> float:
    return float(np.squeeze(spec.value(_as_coords(x))))


# -- potential W --------------------------------------------------------------

@dataclass(frozen=True)
class PotentialTerm:
    """One summand of W with its class tag and declared exponents.

    ``p1``/``p2`` are the integrability exponents of (W2); ``math.inf`` means
    the term is bounded (contributes nothing restrictive), ``None`` means the
    exponent is not applicable.  ``growth_rate`` is the C in e^{C|x|} for
    (W2-2) growth terms; such terms are windowed during time integration.
    """

    kind: str
    cls: str = "W1"
    amplitude: float = 1.0
    p1: float | None = None
    p2: float | None = None
    rprime: float | None = None
    radius: float = 1.0
    growth_rate: float = 0.0
    vector: tuple[float, ...] = ()
    omega: float = 0.0
    func: Callable | None = field(default=None, compare=False)
    grad: Callable | None = field(default=None, compare=False)
    offset: float = 0.0

    def __post_init__(self):
        if self.cls not in W_CLASSES:
            raise ValueError(f"unknown class tag {self.cls!r}")
        if self.kind not in _W_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "custom" and (self.func is None or self.grad is None):
            raise ValueError("custom potential needs func and grad")
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if v is not None and v < 2:
                raise ValueError(f"{name} must be >= 2")

    @property
    def windowed(self) -> bool:
        """Terms that grow at infinity; evolve multiplies them by a window."""
        return self.growth_rate > 0 or self.kind == "repulsive-harmonic"

    @property
    def validity_radius(self) -> float:
        if self.growth_rate > 0:
            return _EXP_LIMIT / self.growth_rate
        return math.inf

    def _check_radius(self, coords):
        if self.growth_rate > 0 and np.max(_radius(coords), initial=0.0) > self.validity_radius:
            raise ValueError(
                f"{self.kind}: evaluation beyond validity radius {self.validity_radius:.1f}"
            )

    def _raw(self, coords):
        r = _radius(coords)
        a = self.amplitude
        R = self.radius
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "harmonic":
            return 0.5 * a * r**2
        if self.kind == "abs-cutoff":
            return a * r * smooth_step(r, R, 2 * R)
        if self.kind == "sqrt-cutoff":
            return a * np.sqrt(r) * smooth_step(r, R, 2 * R)
        if self.kind == "sqrt-exp":
            return a * np.sqrt(r) * np.exp(self.growth_rate * r)
        if self.kind == "linear":
            return sum(e * c for e, c in zip(self.vector, coords)) + 0.0 * r
        if self.kind == "repulsive-harmonic":
            return -(self.omega**2) * r**2
        return np.asarray(self.func(coords), dtype=float)

    def value(self, coords):
        coords = _as_coords(coords)
        self._check_radius(coords)
        return self._raw(coords) - self.offset

    def gradient(self, coords):
        coords = _as_coords(coords)
        self._check_radius(coords)
        r = _radius(coords)
        a, R = self.amplitude, self.radius
        if self.kind == "zero":
            return [np.zeros_like(r) for _ in coords]
        if self.kind == "harmonic":
            return [a * c for c in coords]
        if self.kind == "linear":
            return [e + 0.0 * r for e in self.vector]
        if self.kind == "repulsive-harmonic":
            return [-2.0 * self.omega**2 * c for c in coords]
        if self.kind == "custom":
            return [np.asarray(gi, dtype=float) for gi in self.grad(coords)]
        with np.errstate(divide="ignore"):
            if self.kind == "abs-cutoff":
                dr = a * (smooth_step(r, R, 2 * R) + r * smooth_step_deriv(r, R, 2 * R))
            elif self.kind == "sqrt-cutoff":
                dr = a * (0.5 / np.sqrt(r) * smooth_step(r, R, 2 * R)
                          + np.sqrt(r) * smooth_step_deriv(r, R, 2 * R))
            else:  # sqrt-exp
                e = np.exp(self.growth_rate * r)
                dr = a * e * (0.5 / np.sqrt(r) + self.growth_rate * np.sqrt(r))
        # the weak derivative at the origin is represented by 0 (measure zero)
        dr = np.where(r > 0, dr, 0.0)
        return _radial_grad(coords, dr)

    def to_dict(self) -> dict:
        def enc(v):
            return None if v is None else ("inf" if math.isinf(v) else v)

        return {
            "class": self.cls, "kind": self.kind,
            "p1": enc(self.p1), "p2": enc(self.p2), "rprime": enc(self.rprime),
            "params": {"amplitude": self.amplitude, "radius": self.radius,
                       "growth_rate": self.growth_rate, "vector": list(self.vector),
                       "omega": self.omega},
        }


_W_KINDS = ("zero", "harmonic", "abs-cutoff", "sqrt-cutoff", "sqrt-exp", "linear",
            "repulsive-harmonic", "custom")


def _normalized(term: PotentialTerm, dim: int) -> PotentialTerm:
    origin = tuple(np.zeros(1) for _ in range(dim))
    w0 = float(term._raw(origin)[0])
    if w0 == 0.0:
        return term
    from dataclasses import replace
    return replace(term, offset=w0)


@dataclass(frozen=True)
class PotentialSpec:
    """W as a sum of tagged terms, normalized so that W(0) = 0."""

    terms: tuple[PotentialTerm, ...] = ()
    dim: int = 1

    def __post_init__(self):
        terms = tuple(_normalized(t, self.dim) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        for t in terms:
            if t.cls in ("W2-1", "W2-2"):
                if t.p1 is not None and not t.p1 > self.dim / 2:
                    raise ValueError(f"{t.kind}: p1 must exceed N/2")
                if t.p2 is not None and not t.p2 > self.dim:
                    raise ValueError(f"{t.kind}: p2 must exceed N")

    @property
    def is_zero(self) -> bool:
        return all(t.kind == "zero" for t in self.terms)

    def value(self, coords, window: float | None = None):
        coords = _as_coords(coords)
        out = np.zeros(np.broadcast(*coords).shape)
        for t in self.terms:
            if window is not None and t.windowed:
                out = out + _windowed_value(t, coords, window)
            else:
                out = out + t.value(coords)
        return out

    def gradient(self, coords):
        coords = _as_coords(coords)
        out = [np.zeros(np.broadcast(*coords).shape) for _ in coords]
        for t in self.terms:
            for i, gi in enumerate(t.gradient(coords)):
                out[i] = out[i] + gi
        return out

    def to_list(self) -> list[dict]:
        return [t.to_dict() for t in self.terms]


def _windowed_value(term: PotentialTerm, coords, radius: float):
    r = _radius(coords)
    inside = r < radius
    out = np.zeros(r.shape)
    if np.any(inside):
        sub = tuple(np.broadcast_to(c, r.shape)[inside] for c in coords)
        out[inside] = term.value(sub) * smooth_step(r[inside], 0.85 * radius, radius)
    return out


def eval_W(spec: PotentialSpec, x) -> float:
    return float(np.squeeze(spec.value(_as_coords(x))))


def grad_W(spec: PotentialSpec, x) -> np.ndarray:
    return np.array([float(np.squeeze(gi)) for gi in spec.gradient(_as_coords(x))])


@dataclass(frozen=True)
class Model:
    """The pair (g, W) as used by the integrator and the functionals.

    Growing terms are multiplied by a smooth window vanishing at
    ``window_fraction * L`` when sampled on a grid.
    """

    g: InhomogeneitySpec = InhomogeneitySpec()
    W: PotentialSpec = PotentialSpec()
    window_fraction: float = 0.8

    @property
    def dim(self) -> int:
        return self.W.dim

    def sample(self, grid):
        gv = self.g.value(grid.coords)
        Wv = self.W.value(grid.coords, window=self.window_fraction * grid.L)
        if not np.all(np.isfinite(Wv)):
            raise ValueError("potential W has non-finite samples on the grid")
        return gv, Wv

    def to_dict(self) -> dict:
        return {"g": self.g.to_dict(), "W": self.W.to_list(), "N": self.dim,
                "window_fraction": self.window_fraction}


# -- kappa --------------------------------------------------------------------

@dataclass(frozen=True)
class KappaParams:
    kappa: float


def kappa(g: InhomogeneitySpec, W: PotentialSpec, N: int) -> KappaParams:
    """kappa = min{1, 2 - N/p1, 1 - N/p2, r, r'} over the supplied terms."""
    cands = [1.0, g.r]
    for t in W.terms:
        if t.p1 is not None:
            cands.append(2.0 - N / t.p1)
        if t.p2 is not None:
            cands.append(1.0 - N / t.p2)
        if t.rprime is not None:
            cands.append(t.rprime)
    k = min(cands)
    if not k > 0:
        raise ValueError(f"exponents give kappa={k} <= 0")
    return KappaParams(k)


# -- catalog ------------------------------------------------------------------

def catalog_g(name: str) -> InhomogeneitySpec:
    table = {
        "one": InhomogeneitySpec("constant-one"),
        "flat-r1": InhomogeneitySpec("flat-bump", r=1.0),
        "flat-r2": InhomogeneitySpec("flat-bump", r=2.0),
    }
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown g catalog entry {name!r}; have {sorted(table)}") from None


def catalog_W_term(name: str, dim: int = 1) -> PotentialTerm:
    inf = math.inf
    table = {
        "zero": PotentialTerm("zero", "W1"),
        "harmonic": PotentialTerm("harmonic", "W1"),
        "abs": PotentialTerm("abs-cutoff", "W2-1", p1=inf, p2=inf),
        "sqrt": PotentialTerm("sqrt-cutoff", "W2-2", p1=inf, p2=3.0, rprime=0.5),
        "sqrt-exp": PotentialTerm("sqrt-exp", "W2-2", p1=inf, p2=3.0, rprime=0.5, growth_rate=1.0),
    }
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown W catalog entry {name!r}; have {sorted(table)}") from None


W_CATALOG = ("zero", "harmonic", "abs", "sqrt", "sqrt-exp")
G_CATALOG = ("one", "flat-r1", "flat-r2")


def catalog_W(names: Sequence[str] | str, dim: int = 1) -> PotentialSpec:
    if isinstance(names, str):
        names = [names]
    return PotentialSpec(tuple(catalog_W_term(n, dim) for n in names), dim=dim)


# -- spec files ---------------------------------------------------------------

def _dec(v):
    if v == "inf":
        return math.inf
    return v


def model_from_dict(d: dict, dim: int | None = None) -> Model:
    N = int(d.get("N", dim or 1))
    gd = d.get("g", {"kind": "constant-one"})
    gp = gd.get("params", {})
    r = gd.get("r")
    g = InhomogeneitySpec(gd.get("kind", "constant-one"), r=math.inf if r is None else float(r),
                          amplitude=gp.get("amplitude", 1.0), radius=gp.get("radius", 1.0))
    terms = []
    for td in d.get("W", []):
        p = td.get("params", {})
        terms.append(PotentialTerm(
            td["kind"], td.get("class", "W1"), amplitude=p.get("amplitude", 1.0),
            p1=_dec(td.get("p1")), p2=_dec(td.get("p2")), rprime=_dec(td.get("rprime")),
            radius=p.get("radius", 1.0), growth_rate=p.get("growth_rate", 0.0),
            vector=tuple(p.get("vector", ())), omega=p.get("omega", 0.0)))
    return Model(g, PotentialSpec(tuple(terms), dim=N), d.get("window_fraction", 0.8))


def load_model(path, dim: int | None = None) -> Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh), dim)


# -- audit --------------------------------------------------------------------

@dataclass
class AuditEntry:
    check: str
    constant: float
    passed: bool
    note: str = ""


@dataclass
class AuditReport:
    entries: list[AuditEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[AuditEntry]:
        return [e for e in self.entries if not e.passed]

    def summary(self) -> str:
        return "\n".join(
            f"{'ok  ' if e.passed else 'FAIL'} {e.check:<34} C={e.constant:.4g} {e.note}"
            for e in self.entries)


def _directions(N: int) -> list[np.ndarray]:
    if N == 1:
        return [np.array([1.0]), np.array([-1.0])]
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False) + 0.1
    return [np.array([np.cos(a), np.sin(a)]) for a in ang]


def _dyadic(levels: int) -> np.ndarray:
    return 2.0 ** -np.arange(levels)


def _local_exponent(radii, ratios) -> float:
    """Slope of log(ratio) against log(radius) over the finest half of the samples."""
    n = len(radii) // 2
    x = np.log(radii[n:])
    y = np.log(np.maximum(ratios[n:], 1e-300))
    return float(np.polyfit(x, y, 1)[0])


def _point(d: np.ndarray, rad: float):
    return tuple(np.array([rad * di]) for di in d)


def audit_assumptions(g: InhomogeneitySpec, W: PotentialSpec, N: int,
                      sample_budget: int = 2000, radius: float = 8.0,
                      levels: int = 40) -> AuditReport:
    """Spot-check (G1), (G2) and the (W1)/(W2)/(W2-1)/(W2-2) bounds on samples.

    Growth of a sampled ratio as |x| -> 0 (dyadic shells) is reported as a
    violation; otherwise the smallest constant consistent with the samples is
    returned.  This is a numerical audit, not a proof.
    """
    entries: list[AuditEntry] = []
    radii = _dyadic(levels)
    dirs = _directions(N)
    rng = np.random.default_rng(0)

    # (G2)
    if g.kind == "constant-one":
        entries.append(AuditEntry("G2 |g-1| <= C|x|^{2+r}", 0.0, True))
        entries.append(AuditEntry("G2 |grad g| <= C|x|^{1+r}", 0.0, True))
    else:
        r = g.r
        val_ratio = np.zeros(levels)
        grad_ratio = np.zeros(levels)
        for i, rad in enumerate(radii):
            for d in dirs:
                pt = _point(d, rad)
                val_ratio[i] = max(val_ratio[i], abs(float(g.value(pt)[0]) - 1.0) / rad ** (2 + r))
                gn = np.sqrt(sum(float(gi[0]) ** 2 for gi in g.gradient(pt)))
                grad_ratio[i] = max(grad_ratio[i], gn / rad ** (1 + r))
        for label, rat in (("G2 |g-1| <= C|x|^{2+r}", val_ratio),
                           ("G2 |grad g| <= C|x|^{1+r}", grad_ratio)):
            slope = _local_exponent(radii, rat)
            ok = slope > -0.05
            entries.append(AuditEntry(label, float(rat.max()), ok,
                                      "" if ok else f"ratio grows like |x|^{slope:.2f} at 0"))

    # (G1): boundedness of g, grad g, x.grad g on a ball
    pts = tuple(c for c in (rng.uniform(-radius, radius, (N, sample_budget))))
    gv = g.value(pts)
    gg = g.gradient(pts)
    xg = sum(c * gi for c, gi in zip(pts, gg))
    c_g1 = float(max(np.max(np.abs(gv)), max(np.max(np.abs(gi)) for gi in gg), np.max(np.abs(xg))))
    entries.append(AuditEntry("G1 g, grad g, x.grad g bounded", c_g1, bool(np.isfinite(c_g1))))

    for t in W.terms:
        entries.extend(_audit_term(t, N, radii, dirs, pts, radius))

    origin = tuple(np.zeros(1) for _ in range(N))
    w0 = float(W.value(origin)[0])
    entries.append(AuditEntry("normalization W(0)=0", abs(w0), w0 == 0.0))
    return AuditReport(entries)


def _audit_term(t: PotentialTerm, N, radii, dirs, pts, radius) -> list[AuditEntry]:
    out = []
    name = f"[{t.kind}/{t.cls}]"
    if t.kind == "zero":
        return [AuditEntry(f"{name} trivial", 0.0, True)]
    rmax = min(radius, 0.5 * t.validity_radius)
    pts = tuple(np.clip(c, -rmax, rmax) for c in pts)

    if t.cls == "W1":
        wv = t.value(pts)
        out.append(AuditEntry(f"{name} W >= 0", float(-min(wv.min(), 0.0)), bool(wv.min() >= -1e-14)))
        # second differences of W at the origin and on random points
        second = []
        for rad in radii[2:30]:
            worst = 0.0
            for d in dirs:
                p0 = tuple(np.zeros(1) for _ in range(N))
                pp, pm = _point(d, rad), _point(d, -rad)
                dd = (float(t.value(pp)[0]) - 2 * float(t.value(p0)[0]) + float(t.value(pm)[0])) / rad**2
                worst = max(worst, abs(dd))
            second.append(worst)
        second = np.array(second)
        slope = _local_exponent(radii[2:30], second)
        ok = slope > -0.5
        out.append(AuditEntry(f"{name} second derivatives bounded", float(second.max()), ok,
                              "" if ok else "second difference quotient grows like 1/h at 0; "
                                            "not (W1), try (W2-1)"))
    if t.cls in ("W2-1", "W2-2"):
        # (W2): local L^{p2} integrability of grad W via dyadic shells
        if t.p2 is not None and not math.isinf(t.p2):
            shell = []
            for rad in radii[:30]:
                worst = 0.0
                for d in dirs:
                    gn = np.sqrt(sum(float(gi[0]) ** 2 for gi in t.gradient(_point(d, rad))))
                    worst = max(worst, gn)
                # shell volume ~ rad^N
                shell.append(worst**t.p2 * rad**N)
            shell = np.array(shell)
            tail = shell[15:]
            ratio = float(np.max(tail[1:] / np.maximum(tail[:-1], 1e-300)))
            ok = ratio < 0.9
            out.append(AuditEntry(f"{name} grad W in L^p2 near 0", float(shell.sum()), ok,
                                  "" if ok else f"dyadic shell contributions do not decay "
                                                f"(ratio {ratio:.2f}); fails for N={N}, p2={t.p2}"))
        gn = np.sqrt(sum(gi**2 for gi in t.gradient(pts)))
        far = _radius(pts) >= 1.0
        c_far = float(np.max(gn[far] / (1.0 + _radius(pts)[far]))) if np.any(far) else 0.0
        out.append(AuditEntry(f"{name} grad W <= C(1+|x|) for |x|>=1", c_far, bool(np.isfinite(c_far))))
    if t.cls == "W2-1":
        quot = []
        for rad in radii[:30]:
            worst = 0.0
            for d in dirs:
                a = float(t.value(_point(d, rad))[0])
                b = float(t.value(_point(d, 0.5 * rad))[0])
                worst = max(worst, abs(a - b) / (0.5 * rad))
            quot.append(worst)
        quot = np.array(quot)
        slope = _local_exponent(radii[:30], quot)
        ok = slope > -0.05
        out.append(AuditEntry(f"{name} locally Lipschitz", float(quot.max()), ok,
                              "" if ok else "difference quotients blow up at 0"))
    if t.cls == "W2-2":
        rp = t.rprime if t.rprime is not None else 0.0
        rat = []
        for rad in radii[:30]:
            worst = 0.0
            for d in dirs:
                worst = max(worst, abs(float(t.value(_point(d, rad))[0])) / (rad**rp * math.exp(t.growth_rate * rad)))
            rat.append(worst)
        rat = np.array(rat)
        wv = np.abs(t.value(pts))
        rr = _radius(pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            bulk = np.where(rr > 0, wv / (rr**rp * np.exp(t.growth_rate * rr)), 0.0)
        slope = _local_exponent(radii[:len(rat)], rat)
        ok = slope > -0.05
        out.append(AuditEntry(f"{name} |W| <= C|x|^r' e^(C|x|)", float(max(rat.max(), bulk.max())), ok,
                              "" if ok else "bound fails near 0"))
    return out
