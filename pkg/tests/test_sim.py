import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import decoupled_network
from vecstab import sim
from vecstab.model import Network, Subsystem
from vecstab.poly import Universe


def harmonic():
    U = Universe(["x", "y"])
    x, y = U.vars(["x", "y"])
    return Network(U, [Subsystem(1, ("x", "y"), (y, -x))], [])


def test_scalar_decay_matches_exponential():
    net, _ = decoupled_network(1)
    tr = sim.integrate(net, np.array([1.0]), T=1.0)
    assert tr.final[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-6)
    assert tr.times[-1] == pytest.approx(1.0)


def test_harmonic_energy_is_conserved():
    net = harmonic()
    tr = sim.integrate(net, np.array([1.0, 0.0]), T=10.0, stride=100)
    energy = (tr.states[..., 0] ** 2 + tr.states[..., 1] ** 2)[:, 0]
    assert np.max(np.abs(energy - 1.0)) <= 1e-6
    assert tr.final[0] == pytest.approx([math.cos(10.0), -math.sin(10.0)], abs=1e-9)


def test_fourth_order_convergence():
    net = harmonic()
    exact = np.array([math.cos(2.0), -math.sin(2.0)])
    errs = [np.abs(sim.integrate(net, np.array([1.0, 0.0]), T=2.0, dt=dt, stride=10**9).final[0] - exact).max()
            for dt in (0.1, 0.05)]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(4.0, abs=0.2)


def test_step_halving_error_is_small(seed1):
    net, _ = seed1
    x0 = np.full(len(net.universe), 0.1)
    assert sim.step_halving_error(net, x0, T=2.0) <= 1e-9


def test_integrate_rejects_bad_steps():
    net = harmonic()
    with pytest.raises(ValueError):
        sim.integrate(net, np.zeros(2), T=1.0, dt=0.0)


def test_blowup_is_reported():
    U = Universe(["x"])
    x = U.var("x")
    net = Network(U, [Subsystem(1, ("x",), (x ** 2,))], [])
    with pytest.raises(sim.SimulationError):
        sim.integrate(net, np.array([1.0]), T=2.0, dt=1e-3)


def test_batch_equals_individual_runs(seed1):
    net, _ = seed1
    rng = np.random.default_rng(3)
    X0 = rng.uniform(-0.2, 0.2, size=(3, len(net.universe)))
    batch = sim.integrate(net, X0, T=0.5, stride=10**9).final
    for b in range(3):
        one = sim.integrate(net, X0[b], T=0.5, stride=10**9).final[0]
        assert np.allclose(batch[b], one, atol=1e-14, rtol=0)


def test_trajectory_csv(tmp_path, seed1, seed1_lfs):
    net, _ = seed1
    tr = sim.integrate(net, np.zeros(len(net.universe)), T=0.01, lfs=seed1_lfs, stride=5)
    path = tmp_path / "t.csv"
    tr.to_csv(path, net.universe.names, net.ids)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["t", *net.universe.names, *(f"V_{i}" for i in net.ids)]
    assert len(lines) == 1 + len(tr.times)


# -- disturbances ------------------------------------------------------------------------------------

def test_zero_disturbance_is_origin(seed1, seed1_lfs):
    net, _ = seed1
    x0 = sim.sample_disturbance(net, seed1_lfs, {i: 0.0 for i in net.ids}, seed=0)
    assert np.all(x0 == 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.99))
def test_disturbance_lands_on_requested_level(seed, level):
    net, lfs = decoupled_network(3)
    x0 = sim.sample_disturbance(net, lfs, {i: level for i in net.ids}, seed)
    assert np.allclose(x0 ** 2, level, atol=1e-9, rtol=0)


def test_disturbance_levels_seed1(seed1, seed1_lfs):
    net, _ = seed1
    v0 = {i: 0.1 * (i % 5) for i in net.ids}
    x0 = sim.sample_disturbance(net, seed1_lfs, v0, seed=7)
    for i in net.ids:
        xi = np.zeros((1, len(net.universe)))
        idx = net.state_indices(i)
        xi[0, idx] = x0[idx]
        assert seed1_lfs[i].V.evaluate_array(xi)[0] == pytest.approx(v0[i], abs=1e-9)
    assert np.array_equal(x0, sim.sample_disturbance(net, seed1_lfs, v0, seed=7))


def test_disturbance_outside_unit_level_rejected(decoupled):
    net, lfs = decoupled
    with pytest.raises(ValueError):
        sim.sample_disturbance(net, lfs, {1: 1.0, 2: 0.0}, seed=0)


def test_envelope_samples_stay_inside(seed1, seed1_lfs):
    net, _ = seed1
    g = {i: 0.3 for i in net.ids}
    X = sim.sample_in_envelope(net, seed1_lfs, g, 200, seed=1)
    V = sim.compile_lfs(net, seed1_lfs)(X)
    assert np.all(V <= 0.3 + 1e-9) and np.all(V >= 0)


# -- comparison bound ----------------------------------------------------------------------------

def test_exact_comparison_system_is_tight(decoupled):
    net, lfs = decoupled
    X0 = np.array([[0.5, -0.3], [0.1, 0.6]])
    chk = sim.check_comparison_bound(net, lfs, X0, -2.0 * np.eye(2), {1: 0.5, 2: 0.5}, T=5.0)
    assert abs(chk.max_violation) <= 1e-6
    assert chk.exits == 0
    assert np.all(chk.envelope_excess <= 1e-12)


def test_overstated_decay_is_flagged(decoupled):
    net, lfs = decoupled
    chk = sim.check_comparison_bound(net, lfs, np.array([[0.5, 0.5]]), -4.0 * np.eye(2), {1: 0.5, 2: 0.5}, T=2.0)
    assert chk.max_violation > 1e-3


def test_domain_exit_ends_bound_check():
    U = Universe(["x"])
    x = U.var("x")
    net = Network(U, [Subsystem(1, ("x",), (x,))], [])
    from vecstab.lyap import LyapunovFn

    lfs = {1: LyapunovFn(1, ("x",), x ** 2, 2)}
    chk = sim.check_comparison_bound(net, lfs, np.array([[0.5]]), np.array([[-1.0]]), {1: 0.5}, T=1.0)
    # x^2 grows from 0.25 to 0.5 at t = ln(2) / 2
    assert chk.exit_time[0] == pytest.approx(math.log(2) / 2, abs=1e-3)
    assert chk.envelope_excess[0] > 0


# -- reverse-time boundary ------------------------------------------------------------------------

def test_globally_stable_subsystem_has_no_boundary():
    net, lfs = decoupled_network(1)
    cloud = sim.reverse_time_boundary(net, 1, lfs[1], seeds=8, T=20.0)
    assert len(cloud.points) == 0
    assert cloud.dropped == 8


@pytest.mark.parametrize("i", [1, 5, 9])
def test_unit_level_set_lies_inside_reverse_time_boundary(seed1, seed1_lfs, i):
    net, _ = seed1
    cloud = sim.reverse_time_boundary(net, i, seed1_lfs[i], seeds=16)
    assert len(cloud.points) > 0 and cloud.dropped == 0
    X = np.zeros((len(cloud.points), len(net.universe)))
    X[:, net.state_indices(i)] = cloud.points
    assert seed1_lfs[i].V.evaluate_array(X).min() >= 1.0


def test_reverse_time_boundary_is_deterministic(seed1, seed1_lfs):
    net, _ = seed1
    a = sim.reverse_time_boundary(net, 2, seed1_lfs[2], seeds=8, seed=4)
    b = sim.reverse_time_boundary(net, 2, seed1_lfs[2], seeds=8, seed=4)
    assert np.array_equal(a.points, b.points)
