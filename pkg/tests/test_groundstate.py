import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.fields import ComplexField, energy, make_grid, mass
from blowup_lab.groundstate import (
    RadialMesh, ShootingError, gn_quotient, gn_sharpness, load_or_solve, petviashvili, read_cache,
    shoot_q0, solve_ground_state, subcritical_global_bound_check, write_cache,
)


def test_one_dimensional_constants(bundle1):
    assert math.isclose(bundle1.q0, 3**0.25, rel_tol=1e-14)
    assert math.isclose(bundle1.mass_sq, math.sqrt(3) * math.pi / 2, rel_tol=1e-10)
    assert math.isclose(bundle1.virial_sq, math.sqrt(3) * math.pi**3 / 32, rel_tol=1e-9)
    assert bundle1.residual < 1e-9


def test_two_dimensional_constants(bundle2):
    # Townes profile: Q(0) and ||Q||^2 are classical values
    assert abs(bundle2.q0 - 2.20620086465) < 1e-8
    assert abs(bundle2.mass_sq - 11.70089652) < 1e-6
    assert bundle2.residual < 1e-6


def test_two_dimensional_profile_solves_radial_equation(bundle2):
    r = np.linspace(0.05, 10.0, 400)
    q, dq, d2q = (bundle2.profile(r, k) for k in (0, 1, 2))
    res = d2q + dq / r - q + q**3
    # second derivatives of the cubic Hermite interpolant carry O(h_r^2) error
    assert np.max(np.abs(res)) < 1e-5
    assert np.all(np.diff(bundle2.profile(np.linspace(0, 20, 200))) < 0)


def test_mesh_refinement_changes_constants_little(bundle2):
    fine = solve_ground_state(2, RadialMesh(h_r=5e-4, R_max=60.0))
    for a, b in ((bundle2.mass_sq, fine.mass_sq), (bundle2.virial_sq, fine.virial_sq),
                 (bundle2.gn_constant, fine.gn_constant)):
        assert abs(a - b) / b < 1e-6


def test_shooting_bracket_failure_reports_bracket():
    with pytest.raises(ShootingError) as info:
        shoot_q0(bracket=(2.3, 2.5))
    assert info.value.bracket == (2.3, 2.5)


def test_unsupported_dimension():
    with pytest.raises(ValueError):
        solve_ground_state(3)


def test_gn_quotient_at_ground_state(bundle1, grid1):
    assert abs(gn_quotient(bundle1.on_grid(grid1), bundle1) - 1.0) < 1e-6


def test_gaussian_is_not_an_optimizer(bundle1, grid1):
    (J,) = gn_sharpness(bundle1, [ComplexField(grid1, np.exp(-grid1.axis**2))])
    assert J < 1.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.6, 1.6))
def test_gn_quotient_scaling_invariant(bundle1, a, b):
    g = make_grid(1, 1024, 32.0)
    v = ComplexField(g, a * bundle1.sample(g, scale=1.0 / b))
    assert abs(gn_quotient(v, bundle1) - 1.0) < 1e-10


def test_petviashvili_matches_continuum_profile(bundle1):
    # the periodic solution differs from Q by about Q(L), so use a wide box
    g = make_grid(1, 1024, 24.0)
    q = petviashvili(bundle1.sample(g), g)
    assert np.max(np.abs(q - bundle1.sample(g))) < 1e-9
    assert abs(mass(ComplexField(g, q)) - bundle1.mass_sq) < 1e-8


def test_energy_of_ground_state_zero_2d(bundle2):
    g = make_grid(2, 128, 12.0)
    q = bundle2.on_grid(g)
    assert abs(energy(q)) < 1e-6 * mass(q)


def test_subcritical_data_stays_bounded(bundle1):
    g = make_grid(1, 256, 16.0)
    rep = subcritical_global_bound_check(0.9 * bundle1.on_grid(g), window=1.0, dt=1e-3, bundle=bundle1)
    assert not rep.blowup_triggered and rep.ratio < 10


def test_zero_data_is_trivially_global(bundle1):
    g = make_grid(1, 64, 8.0)
    assert subcritical_global_bound_check(ComplexField.zeros(g), bundle=bundle1).ratio == 1.0


def test_soliton_keeps_its_gradient(bundle1):
    g = make_grid(1, 256, 16.0)
    q = bundle1.discrete_on_grid(g)
    rep = subcritical_global_bound_check(q, window=1.0, dt=1e-3, bundle=bundle1, allow_critical=True)
    assert np.max(np.abs(rep.grad_series / rep.initial_grad - 1)) < 1e-4


def test_critical_mass_rejected_without_flag(bundle1):
    g = make_grid(1, 256, 16.0)
    with pytest.raises(ValueError):
        subcritical_global_bound_check(bundle1.on_grid(g) * 1.01, bundle=bundle1)


def test_cache_roundtrip(tmp_path, monkeypatch, bundle1):
    monkeypatch.setenv("BLOWUP_LAB_CACHE", str(tmp_path))
    b = load_or_solve(1)
    meta = json.loads((tmp_path / "groundstate_N1.json").read_text())
    assert meta["mass_sq"] == b.mass_sq
    g = make_grid(1, 128, 12.0)
    u, m = read_cache(write_cache(b, g, tmp_path))
    assert np.allclose(u.values, b.sample(g)) and m["N"] == 1
