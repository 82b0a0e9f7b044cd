import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.evolve import (
    ConfigError, EvolutionConfig, InnerIterationError, crank_nicolson_step, integrate,
    read_trajectory_csv, step,
)
from blowup_lab.fields import ComplexField, load_snapshot, make_grid, mass
from blowup_lab.potentials import Model, catalog_W, catalog_g


@pytest.fixture(scope="module")
def soliton(bundle1):
    g = make_grid(1, 256, 16.0)
    return bundle1.discrete_on_grid(g)


def soliton_error(q, stepper, dt, T=0.5):
    cfg = EvolutionConfig(dt=dt, t_start=0.0, t_end=T, stepper=stepper, cadence=10 ** 6,
                          record_energy=False)
    _, u = integrate(q, None, cfg)
    return float(np.sqrt(mass(u - q * np.exp(1j * T))))


def test_soliton_phase_rotation(soliton):
    assert soliton_error(soliton, "strang-splitting", 1e-3) < 2e-5
    assert soliton_error(soliton, "yoshida4", 1e-3) < 1e-8


def test_orders_of_accuracy(soliton):
    e1, e2 = (soliton_error(soliton, "strang-splitting", dt) for dt in (0.01, 0.005))
    assert 3.5 < e1 / e2 < 4.5
    y1, y2 = (soliton_error(soliton, "yoshida4", dt) for dt in (0.005, 0.0025))
    assert 13 < y1 / y2 < 19


def test_crank_nicolson_second_order(soliton):
    g = soliton.grid
    T = 0.125
    errs = []
    for n in (32, 64):
        u = soliton
        for _ in range(n):
            u = crank_nicolson_step(u, None, T / n)
        errs.append(np.sqrt(mass(u - soliton * np.exp(1j * T))))
    assert T / 32 <= g.h**2 / 4 and errs[1] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_crank_nicolson_dt_restriction(soliton):
    cfg = EvolutionConfig(dt=soliton.grid.h**2, t_end=1.0, stepper="crank-nicolson")
    with pytest.raises(ConfigError):
        integrate(soliton, None, cfg)


def test_crank_nicolson_inner_iteration_cap(soliton):
    with pytest.raises(InnerIterationError):
        crank_nicolson_step(soliton, None, soliton.grid.h**2 / 4, tol=1e-30, maxiter=2)


@pytest.mark.parametrize("bad", [dict(dt=0.0), dict(dt=-0.1), dict(dt=0.1, stepper="euler"),
                                 dict(dt=0.1, cadence=0), dict(dt=math.nan)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        EvolutionConfig(t_start=0.0, t_end=1.0, **bad).validate()


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 1.5), st.floats(-2, 2), st.sampled_from(["strang-splitting", "yoshida4"]))
def test_mass_conserved_with_potential(amp, k, stepper):
    g = make_grid(1, 256, 12.0)
    model = Model(catalog_g("flat-r2"), catalog_W(["harmonic", "abs"]))
    u0 = ComplexField(g, amp * np.exp(-g.axis**2 + 1j * k * g.axis))
    rec, _ = integrate(u0, model, EvolutionConfig(dt=1e-3, t_end=0.2, stepper=stepper, cadence=20))
    assert rec.max_mass_drift() < 1e-12


def test_time_reversibility(bundle1):
    g = make_grid(1, 256, 12.0)
    model = Model(W=catalog_W("harmonic"))
    u0 = ComplexField(g, 0.8 * bundle1.sample(g) * np.exp(0.3j * g.axis))
    _, u1 = integrate(u0, model, EvolutionConfig(dt=1e-3, t_end=0.3, cadence=50))
    _, u2 = integrate(u1, model, EvolutionConfig(dt=-1e-3, t_start=0.3, t_end=0.0, cadence=50))
    assert np.max(np.abs(u2.values - u0.values)) < 1e-10


def test_energy_conserved(bundle1):
    g = make_grid(1, 512, 16.0)
    model = Model(catalog_g("flat-r2"), catalog_W("harmonic"))
    u0 = ComplexField(g, 0.9 * bundle1.sample(g))
    rec, _ = integrate(u0, model, EvolutionConfig(dt=2e-4, t_end=0.5, stepper="yoshida4", cadence=100))
    assert rec.max_energy_drift() < 1e-8


def test_single_step_helpers(soliton):
    assert np.allclose(step(soliton, None, 1e-3).values, soliton.values * np.exp(1e-3j), atol=1e-9)
    with pytest.raises(ConfigError):
        step(soliton, None, 0.0)


def test_blowup_alternative_triggers(bundle1):
    g = make_grid(1, 1024, 12.0)
    # supercritical mass focuses
    u0 = ComplexField(g, 1.3 * bundle1.sample(g, scale=0.7) * np.exp(-0.5j * g.axis**2))
    rec, _ = integrate(u0, None, EvolutionConfig(dt=1e-5, t_end=1.0, cadence=20, max_grad=40.0))
    assert rec.trigger == "max_grad" and rec.trigger_time < 1.0
    assert rec.norms[-1].gradient_l2 > 40.0


def test_observer_stops_run(soliton):
    seen = []

    def obs(t, u, k):
        seen.append(k)
        return k >= 30

    rec, _ = integrate(soliton, None, EvolutionConfig(dt=1e-3, t_end=1.0, cadence=10), obs)
    assert rec.trigger == "observer" and seen == [0, 10, 20, 30]


def test_csv_and_snapshots(tmp_path, soliton):
    cfg = EvolutionConfig(dt=1e-3, t_end=0.05, cadence=10, snapshot_dir=str(tmp_path / "snaps"),
                          snapshot_cadence=2)
    rec, _ = integrate(soliton, None, cfg)
    d = read_trajectory_csv(rec.to_csv(tmp_path / "traj.csv"))
    assert np.allclose(d["t"], rec.times) and np.allclose(d["mass"], rec.mass)
    snaps = sorted((tmp_path / "snaps").glob("*.nlsf"))
    assert len(snaps) == 2
    u, meta = load_snapshot(snaps[-1])
    assert math.isclose(meta["t"], 0.04) and u.grid == soliton.grid
