import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.fields import make_grid
from blowup_lab.potentials import (
    G_CATALOG, W_CATALOG, InhomogeneitySpec, Model, PotentialSpec, PotentialTerm, audit_assumptions,
    catalog_W, catalog_g, eval_W, grad_W, kappa, load_model, model_from_dict, smooth_step,
    smooth_step_deriv,
)


@settings(max_examples=80)
@given(st.floats(-5, 5), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_smooth_step_range_and_monotone(t, a, width):
    b = a + width
    v = smooth_step(t, a, b)
    assert 0.0 <= v <= 1.0
    assert smooth_step(t + 0.01, a, b) <= v + 1e-15
    assert smooth_step_deriv(t, a, b) <= 0.0


def test_smooth_step_endpoints_and_derivative():
    assert smooth_step(0.5, 1, 2) == 1.0 and smooth_step(2.5, 1, 2) == 0.0
    t = np.linspace(1.01, 1.99, 50)
    h = 1e-6
    fd = (smooth_step(t + h, 1, 2) - smooth_step(t - h, 1, 2)) / (2 * h)
    assert np.max(np.abs(fd - smooth_step_deriv(t, 1, 2))) < 1e-6
    # no overflow warnings or NaN near the edges of the transition
    edge = np.array([1 + 1e-9, 2 - 1e-9])
    assert np.all(np.isfinite(smooth_step_deriv(edge, 1, 2)))


@pytest.mark.parametrize("name", W_CATALOG)
def test_catalog_W_vanishes_at_origin(name):
    for N in (1, 2):
        W = catalog_W(name, N)
        assert eval_W(W, (0.0,) * N) == 0.0


@pytest.mark.parametrize("name", ["harmonic", "abs", "sqrt", "sqrt-exp"])
def test_W_gradient_matches_finite_difference(name):
    W = catalog_W(name, 1)
    for x in (0.3, 0.9, 1.4, -1.7):
        h = 1e-6
        fd = (eval_W(W, (x + h,)) - eval_W(W, (x - h,))) / (2 * h)
        assert abs(grad_W(W, (x,))[0] - fd) < 1e-5 * (1 + abs(fd))


@pytest.mark.parametrize("name", G_CATALOG)
def test_g_gradient_matches_finite_difference(name):
    g = catalog_g(name)
    for x in (0.2, 0.6, 0.8, 1.3):
        h = 1e-6
        fd = (g.value((np.array([x + h]),)) - g.value((np.array([x - h]),))) / (2 * h)
        assert abs(g.gradient((np.array([x]),))[0][0] - fd[0]) < 1e-6


def test_flat_bump_is_flat_at_origin():
    g = catalog_g("flat-r2")
    r = np.array([1e-2, 2e-2])
    dev = 1 - g.value((r,))
    # 1 - g ~ |x|^{2+r}
    assert math.isclose(np.log(dev[1] / dev[0]) / np.log(2), 4.0, rel_tol=1e-6)


def test_kappa_values():
    one = catalog_g("one")
    assert kappa(one, catalog_W("zero"), 1).kappa == 1.0
    assert kappa(catalog_g("flat-r2"), catalog_W("sqrt"), 1).kappa == 0.5
    assert kappa(catalog_g("flat-r1"), catalog_W("abs"), 2).kappa == 1.0
    # 1 - N/p2 with p2 = 3 in 2-D
    assert math.isclose(kappa(one, catalog_W("sqrt", 2), 2).kappa, 1 / 3)


def test_rejects_bad_specs():
    with pytest.raises(ValueError):
        PotentialTerm("cubic")
    with pytest.raises(ValueError):
        PotentialTerm("harmonic", "W9")
    with pytest.raises(ValueError):
        PotentialTerm("custom")
    with pytest.raises(ValueError):
        InhomogeneitySpec("flat-bump", r=0.0)
    with pytest.raises(ValueError):
        PotentialSpec((PotentialTerm("sqrt-cutoff", "W2-2", p2=2.0),), dim=2)
    with pytest.raises(KeyError):
        catalog_W("quartic")


def test_growth_terms_are_windowed_and_limited():
    t = catalog_W("sqrt-exp").terms[0]
    assert t.windowed and t.validity_radius == 700.0
    with pytest.raises(ValueError):
        t.value((np.array([800.0]),))
    g = make_grid(1, 256, 20.0)
    _, W = Model(W=catalog_W("sqrt-exp")).sample(g)
    assert np.all(np.isfinite(W)) and np.all(W[np.abs(g.axis) >= 16.0] == 0)


def test_model_from_dict_and_file(tmp_path):
    d = {"N": 1, "g": {"kind": "flat-bump", "r": 2.0},
         "W": [{"kind": "sqrt-cutoff", "class": "W2-2", "p1": "inf", "p2": 3.0, "rprime": 0.5}]}
    m = model_from_dict(d)
    p = tmp_path / "model.json"
    p.write_text(json.dumps(d))
    m2 = load_model(p)
    assert m == m2
    assert kappa(m.g, m.W, 1).kappa == 0.5
    assert m.to_dict()["N"] == 1


def test_audit_sqrt_potential_depends_on_dimension():
    # grad |x|^{1/2} ~ |x|^{-1/2} is in L^3 near 0 in the plane but not on the line
    rep2 = audit_assumptions(catalog_g("flat-r2"), catalog_W("sqrt", 2), 2)
    assert rep2.passed, rep2.summary()
    rep1 = audit_assumptions(catalog_g("flat-r2"), catalog_W("sqrt", 1), 1)
    assert [e.check for e in rep1.failures()] == ["[sqrt-cutoff/W2-2] grad W in L^p2 near 0"]


def test_audit_flags_singular_potential():
    assert audit_assumptions(catalog_g("one"), catalog_W(["harmonic", "abs"]), 1).passed
    # |x|^{-1/4} near the origin violates the declared |W| <= C|x|^{r'} bound
    bad = PotentialTerm("custom", "W2-2", p1=math.inf, p2=3.0, rprime=0.5,
                        func=lambda c: np.where(np.abs(c[0]) > 0, np.abs(np.where(c[0] == 0, 1.0, c[0])) ** -0.25, 0.0),
                        grad=lambda c: [np.zeros_like(c[0])])
    rep = audit_assumptions(catalog_g("one"), PotentialSpec((bad,), 1), 1)
    assert not rep.passed
