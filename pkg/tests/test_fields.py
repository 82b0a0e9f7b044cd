import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.fields import (
    ComplexField, F_remainder, dF, d2F, energy, gradient, laplacian, load_snapshot, make_grid, mass, momentum,
    nonlinearity_f, norms, potential_energy_density_F, save_snapshot, spectral_l2,
)
from blowup_lab.potentials import Model, catalog_W


def q1d(x):
    return 3**0.25 / np.sqrt(np.cosh(2 * x))


def test_make_grid_spacing_and_nodes():
    assert make_grid(1, 256, 16).h == 0.125
    assert make_grid(2, 128, 12).size == 16384
    g = make_grid(1, 64, 2.0)
    assert g.axis[0] == -2.0 and math.isclose(g.axis[-1], 2.0 - g.h)


@pytest.mark.parametrize("args", [(3, 256, 16), (1, 100, 4), (1, 8, 4), (1, 64, 0.0)])
def test_make_grid_rejects(args):
    with pytest.raises(ValueError):
        make_grid(*args)


def test_field_rejects_bad_values():
    g = make_grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        ComplexField(g, np.zeros(15))
    with pytest.raises(ValueError):
        ComplexField(g, np.full(16, np.nan))


@given(st.integers(-20, 20))
def test_gradient_of_fourier_mode(n):
    g = make_grid(1, 64, math.pi)
    k0 = n * 2 * math.pi / (2 * g.L)
    u = ComplexField(g, np.exp(1j * k0 * g.axis))
    d = gradient(u)[0].values
    assert np.max(np.abs(d - 1j * k0 * u.values)) < 1e-11


def test_gradient_of_constant_is_zero():
    g = make_grid(2, 32, 3.0)
    u = ComplexField(g, np.full(g.shape, 2.5 + 1j))
    assert all(np.max(np.abs(d.values)) < 1e-13 for d in gradient(u))
    assert np.max(np.abs(laplacian(u).values)) < 1e-13


def test_gradient_of_closed_form_profile():
    # the box must hold Q to ~1e-10 so the periodic extension is smooth
    g = make_grid(1, 512, 24.0)
    x = g.axis
    dq = gradient(ComplexField(g, q1d(x)))[0].values
    exact = -(3**0.25) * np.sqrt(1 / np.cosh(2 * x)) * np.tanh(2 * x)
    assert np.max(np.abs(dq - exact)) <= 1e-8


@pytest.mark.xfail(strict=True, reason="Q(16) ~ 2e-7 leaves a kink in the periodic extension")
def test_gradient_of_closed_form_profile_short_box():
    g = make_grid(1, 512, 16.0)
    x = g.axis
    err = np.abs(gradient(ComplexField(g, q1d(x)))[0].values
                 + (3**0.25) * np.sqrt(1 / np.cosh(2 * x)) * np.tanh(2 * x))
    # the interior is fine; the error sits at the box edge
    assert np.max(err[np.abs(x) < 8]) <= 1e-8
    assert np.max(err) <= 1e-8


def test_nonlinearity_examples():
    assert nonlinearity_f(2, 2) == 8
    assert nonlinearity_f(1 + 0j, 1) == 1
    assert nonlinearity_f(1j, 2) == 1j
    assert nonlinearity_f(0, 1) == 0


def test_F_examples():
    assert math.isclose(potential_energy_density_F(1, 1), 1 / 6)
    assert math.isclose(potential_energy_density_F(2, 2), 4.0)
    assert potential_energy_density_F(0, 1) == 0


@settings(max_examples=60)
@given(st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       st.sampled_from([1, 2]))
def test_dF_d2F_match_finite_differences(q, e, N):
    h = 1e-5
    F = lambda z: potential_energy_density_F(z, N)  # noqa: E731
    d1 = (F(q + h * e) - F(q - h * e)) / (2 * h)
    d2 = (F(q + h * e) - 2 * F(q) + F(q - h * e)) / h**2
    assert abs(dF(q, e, N) - d1) <= 1e-6 * (1 + abs(d1))
    if abs(q) > 0.1:
        assert abs(d2F(q, e, N) - d2) <= 1e-3 * (1 + abs(d2))


def test_mass_of_profile():
    g = make_grid(1, 512, 16.0)
    assert abs(mass(ComplexField(g, q1d(g.axis))) - math.sqrt(3) * math.pi / 2) < 1e-8


@given(st.floats(-10, 10))
def test_mass_phase_invariance(gamma):
    g = make_grid(1, 128, 8.0)
    u = ComplexField(g, q1d(g.axis) * (1 + 0.3j * g.axis))
    assert math.isclose(mass(u), mass(u * np.exp(1j * gamma)), rel_tol=1e-13)


def test_energy_of_ground_state_vanishes():
    g = make_grid(1, 512, 16.0)
    assert abs(energy(ComplexField(g, q1d(g.axis)))) < 1e-6


def test_energy_rejects_nonfinite_potential():
    g = make_grid(1, 64, 4.0)
    W = np.zeros(64)
    W[3] = np.inf
    with pytest.raises(ValueError):
        energy(ComplexField(g, q1d(g.axis)), W=W)


def test_energy_with_model_adds_potential_term():
    g = make_grid(1, 256, 12.0)
    u = ComplexField(g, q1d(g.axis))
    model = Model(W=catalog_W("harmonic", 1))
    _, W = model.sample(g)
    assert math.isclose(energy(u, model), energy(u) + 0.5 * np.sum(W * np.abs(u.values) ** 2) * g.h,
                        rel_tol=1e-12, abs_tol=1e-14)


@settings(max_examples=30)
@given(st.floats(0.5, 2.0), st.floats(-2, 2), st.sampled_from([1, 2]))
def test_norm_report_invariants(width, k, N):
    g = make_grid(N, 64 if N == 2 else 256, 10.0)
    u = ComplexField(g, np.exp(-g.r2 / width**2 + 1j * k * g.coords[0]))
    nr = norms(u)
    assert math.isclose(nr.sigma1**2, nr.h1**2 + nr.weighted_l2**2, rel_tol=1e-12)
    assert nr.h1 >= nr.l2
    assert math.isclose(spectral_l2(u), nr.l2, rel_tol=1e-12)


def test_momentum_of_boosted_gaussian():
    g = make_grid(1, 256, 12.0)
    u = ComplexField(g, np.exp(-g.axis**2) * np.exp(0.7j * g.axis))
    # Im int u grad(conj u) = -k ||u||^2
    assert math.isclose(momentum(u)[0], -0.7 * mass(u), rel_tol=1e-10)


def test_snapshot_roundtrip(tmp_path):
    g = make_grid(2, 32, 4.0)
    rng = np.random.default_rng(1)
    u = ComplexField(g, rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape))
    p = save_snapshot(u, tmp_path / "u.nlsf", {"t": -1.0})
    v, meta = load_snapshot(p)
    assert v.grid == g and np.array_equal(u.values, v.values) and meta["t"] == -1.0


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.nlsf"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        load_snapshot(p)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 2]), st.floats(0.0, 3.0), st.floats(-1, 1), st.floats(-1, 1))
def test_F_remainder_matches_direct_formula(N, q, er, ei):
    e = complex(er, ei)
    direct = (potential_energy_density_F(q + e, N) - potential_energy_density_F(q, N)
              - dF(np.array(q), np.array(e), N))
    assert abs(F_remainder(q, e, N) - direct) < 1e-12 * (1 + abs(q)) ** 6


def test_F_remainder_has_no_cancellation():
    # second order in e down to tiny e, where the direct formula is round-off
    q = np.array([1.3])
    for e in (1e-3, 1e-8, 1e-13):
        assert np.isclose(F_remainder(q, e, 1)[0] / e**2, 0.5 * d2F(q, e, 1)[0] / e**2, rtol=1e-2)
