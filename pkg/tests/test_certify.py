import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import decoupled_network, weakly_coupled_pair
from vecstab import certify as cf
from vecstab import sos
from vecstab.audit import CertificateRegistry, radial_level_points
from vecstab.lyap import BoundConstants


def cm(entries, gammas=None):
    entries = np.asarray(entries, dtype=float)
    ids = list(range(1, entries.shape[0] + 1))
    return cf.ComparisonMatrix(ids, entries, gammas or {i: 0.5 for i in ids}, "test")


# -- Gershgorin and eigenvalue checks --------------------------------------------------------

def test_diagonally_dominant_matrix_passes_every_check():
    v = cf.gershgorin_verdict(cm([[-2, 1], [1, -2]]))
    assert v.rows_ok and v.eigen_hurwitz
    assert v.max_real_eig == pytest.approx(-1.0)


def test_row_condition_is_only_sufficient():
    v = cf.gershgorin_verdict(cm([[-1, 2], [0, -1]]))
    assert not v.hurwitz_row[1] and v.hurwitz_row[2]
    assert v.eigen_hurwitz


def test_negative_off_diagonal_rejected():
    with pytest.raises(cf.CertifyError):
        cm([[-1, -0.1], [0, -1]])


@st.composite
def metzler(draw):
    m = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    A = rng.uniform(0, 2, size=(m, m))
    np.fill_diagonal(A, -rng.uniform(0, 2 * m, size=m))
    return A


@settings(max_examples=100, deadline=None)
@given(metzler())
def test_row_pass_implies_eigen_hurwitz(A):
    v = cf.gershgorin_verdict(cm(A, {i: 1.0 for i in range(1, A.shape[0] + 1)}))
    if all(v.hurwitz_row.values()):
        assert v.eigen_hurwitz


# -- power transform ------------------------------------------------------------------------------

def test_power_transform_d1_is_identity():
    At = np.array([[-3.0, 1.0, 0.5], [0.2, -1.0, 0.3], [0.0, 0.4, -2.0]])
    ct = np.array([[1, 0.5, 2.0], [1.5, 1, 0.7], [1, 3.0, 1]])
    assert np.allclose(cf.power_transform(At, ct, 1), At, atol=0, rtol=1e-15)


def test_power_transform_unit_weights_d2():
    A = cf.power_transform(np.array([[-3.0, 1.0], [1.0, -3.0]]), np.ones((2, 2)), 2)
    assert np.allclose(A, [[-5.0, 1.0], [1.0, -5.0]], atol=1e-15)


def test_power_transform_hypothesis_enforced():
    At = np.array([[-1.0, 2.0], [0.0, -1.0]])
    with pytest.raises(ValueError, match="row condition"):
        cf.power_transform(At, np.ones((2, 2)), 2)
    assert cf.power_transform(At, np.ones((2, 2)), 2, check=False)[0, 0] == pytest.approx(0.0)
    with pytest.raises(ValueError):
        cf.power_transform(At, np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        cf.power_transform(At, np.ones((2, 2)), 0)


@st.composite
def transform_case(draw):
    m = draw(st.integers(1, 5))
    d = draw(st.integers(1, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    At = rng.uniform(0, 1, size=(m, m))
    ct = rng.uniform(0.2, 3.0, size=(m, m))
    off = ~np.eye(m, dtype=bool)
    spill = np.where(off, At * ct, 0).sum(axis=1)
    np.fill_diagonal(At, -spill - rng.uniform(0.01, 2.0, size=m))
    return At, ct, d


@settings(max_examples=100, deadline=None)
@given(transform_case())
def test_power_transform_scales_row_condition_by_d(case):
    At, ct, d = case
    A = cf.power_transform(At, ct, d)
    lhs = np.diag(At) + np.where(~np.eye(len(At), dtype=bool), At * ct, 0).sum(axis=1)
    assert np.all(lhs < 0)
    assert np.allclose(cf.power_row_condition(A, ct, d), d * lhs, atol=1e-12, rtol=0)
    off = ~np.eye(len(A), dtype=bool)
    assert np.all(A[off] >= 0)


def test_level_ratio_weights_carry_invariance_over():
    At = np.array([[-2.0, 0.5], [0.3, -1.0]])
    g = np.array([0.2, 0.6])
    d = 2
    ct = (g[None, :] / g[:, None]) ** (1.0 / d)
    A = cf.power_transform(At, ct, d)
    assert np.all(A @ g < 0)


# -- traditional construction ----------------------------------------------------------------------

def test_traditional_from_hand_constants(decoupled):
    net, lfs = decoupled
    bc = BoundConstants(0.5, {1: 2, 2: 2}, {1: 1.0, 2: 1.0}, {1: 1.0, 2: 1.0}, {1: 2.0, 2: 2.0}, {})
    At = cf.traditional_single_cs(net, lfs, bc)
    assert np.allclose(At.entries, -np.eye(2))
    A = cf.traditional_implied(At, 2)
    assert np.allclose(A.entries, -2 * np.eye(2))


def test_traditional_rejects_nonpositive_constants(decoupled):
    net, lfs = decoupled
    bc = BoundConstants(0.5, {1: 2, 2: 2}, {1: 0.0, 2: 1.0}, {1: 1.0, 2: 1.0}, {1: 2.0, 2: 2.0}, {})
    with pytest.raises(cf.CertifyError):
        cf.traditional_single_cs(net, lfs, bc)


def test_traditional_seed1_matrix_is_metzler(seed1, seed1_lfs):
    from vecstab.lyap import bound_constants

    net, _ = seed1
    bc = bound_constants(net, seed1_lfs, 0.2)
    assert bc.ok()
    At = cf.traditional_single_cs(net, seed1_lfs, bc)
    off = At.entries[~np.eye(len(net.ids), dtype=bool)]
    assert np.all(off >= 0)
    for i in net.ids:
        for j in net.ids:
            if j != i and j not in net.neighbors(i):
                assert At.entries[At.pos(i), At.pos(j)] == 0.0
    assert np.all(np.diag(At.entries) < 0)


# -- direct construction --------------------------------------------------------------------------

def test_direct_decoupled_recovers_decay_rate(decoupled):
    net, lfs = decoupled
    reg = CertificateRegistry()
    res = cf.direct_single_cs(net, lfs, {1: 0.5, 2: 0.5}, "minimize-rowsum", registry=reg)
    assert res.feasible
    assert np.allclose(np.diag(res.matrix.entries), -2.0, atol=1e-5)
    assert all(r.passed for r in reg.audit(2000))


def test_direct_level_range_checked(decoupled):
    net, lfs = decoupled
    with pytest.raises(ValueError):
        cf.direct_single_cs(net, lfs, {1: 0.0, 2: 0.5})
    with pytest.raises(ValueError):
        cf.direct_single_cs(net, lfs, {1: 1.2, 2: 0.5})


def test_direct_seed1_unit_level_is_infeasible(seed1, seed1_lfs):
    net, _ = seed1
    res = cf.direct_single_cs(net, seed1_lfs, {i: 1.0 for i in net.ids})
    assert not res.feasible
    assert res.failed()
    assert all(res.statuses[i] != sos.UNKNOWN for i in res.failed())


def test_direct_rows_sound_by_sampling(seed1, seed1_lfs, rng):
    net, _ = seed1
    g = 0.2
    res = cf.direct_single_cs(net, seed1_lfs, {i: g for i in net.ids}, "minimize-rowsum", invariance=False)
    assert res.feasible
    A = res.matrix
    n = len(net.universe)
    for i in net.ids[:3]:
        X = np.zeros((3000, n))
        for j in net.neighborhoods[i]:
            idx = net.state_indices(j)
            X[:, idx] = radial_level_points(seed1_lfs[j].V, idx, rng.uniform(0, g, 3000), rng)
        lhs = cf.vdot(net, seed1_lfs, i).evaluate_array(X)
        rhs = sum(A.entries[A.pos(i), A.pos(j)] * seed1_lfs[j].V.evaluate_array(X) for j in net.neighborhoods[i])
        assert np.max(lhs - rhs) <= 1e-6


# -- agents ------------------------------------------------------------------------------------------

def test_decoupled_phase1_keeps_positive_level(decoupled):
    net, lfs = decoupled
    rep = cf.run_protocol(net, lfs, {1: 0.4, 2: 0.25})
    assert rep.gamma0 == {1: 0.4, 2: 0.25}


def test_decoupled_phase2_goes_straight_to_zero(decoupled):
    net, lfs = decoupled
    rep = cf.run_protocol(net, lfs, {1: 0.5, 2: 0.0})
    assert rep.exponentially_stable
    assert rep.levels == [{1: 0.5, 2: cf.DELTA}, {1: 0.0, 2: 0.0}]
    assert rep.rates[0][1] == pytest.approx(-2.0, abs=1e-5)
    assert rep.rates[0][2] == pytest.approx(-2.0, abs=1e-5)
    assert all(m.recipients == [] for m in rep.messages)


def test_zero_start_level_moves_to_first_increment(decoupled):
    net, lfs = decoupled
    rep = cf.run_protocol(net, lfs, {1: 0.0, 2: 0.0})
    assert rep.gamma0 == {1: cf.DELTA, 2: cf.DELTA}
    assert rep.exponentially_stable


def test_parallel_weights_aggregate_to_a_valid_row(seed1, seed1_lfs, rng):
    net, _ = seed1
    i, cur, new = 1, 0.3, 0.25
    levels = {j: cur for j in net.ids}
    agent = cf.Agent(net, seed1_lfs, i, "parallel", None, None)
    st_, payload = agent.decay_trial(new, levels)
    assert st_ == "ok"
    a, weights, _ = payload
    assert a < 0 and sum(weights.values()) < 1.0
    n = len(net.universe)
    count = 5000
    X = np.zeros((count, n))
    for j in net.neighborhoods[i]:
        idx = net.state_indices(j)
        lv = rng.uniform(new, cur, count) if j == i else rng.uniform(0, cur, count)
        X[:, idx] = radial_level_points(seed1_lfs[j].V, idx, lv, rng)
    lhs = cf.vdot(net, seed1_lfs, i).evaluate_array(X)
    rhs = a * (seed1_lfs[i].V.evaluate_array(X) - new)
    assert np.max(lhs - rhs) <= 1e-6


def test_pair_weight_program_reverifies(seed1, seed1_lfs, rng):
    from vecstab.audit import audit_one
    from vecstab.poly import lie_derivative

    net, _ = seed1
    i = 1
    j = net.neighbors(i)[0]
    prog, claim = cf.pair_phase1_program(net, seed1_lfs, i, j, 0.1, 0.1)
    r = prog.solve()
    assert r.status == sos.OPTIMAL
    w = r.scalar("w")
    assert 0.0 <= w < 1.0
    rec = audit_one("pair", r.certificate, claim(w), samples=10_000)
    assert rec.residual <= 1e-6 and rec.passed
    # independent sampling: own state on its 0.1 level set, neighbor anywhere inside its own
    idx_i, idx_j = net.state_indices(i), net.state_indices(j)
    X = np.zeros((10_000, len(net.universe)))
    X[:, idx_i] = radial_level_points(seed1_lfs[i].V, idx_i, np.full(10_000, 0.1), rng)
    X[:, idx_j] = radial_level_points(seed1_lfs[j].V, idx_j, rng.uniform(0, 0.1, 10_000), rng)
    hf = lie_derivative(seed1_lfs[i].V, list(net.subsystem(i).f), idx_i)
    hg = lie_derivative(seed1_lfs[i].V, list(net.incoming(i)[j]), idx_i)
    assert np.max(w * hf.evaluate_array(X) + hg.evaluate_array(X)) <= 1e-5


def test_agent_refuses_nonlocal_program(seed1, seed1_lfs):
    net, _ = seed1
    agent = cf.Agent(net, seed1_lfs, 1, "sequential", None, None)
    far = next(j for j in net.ids if j not in net.neighborhoods[1])
    prog = sos.SosProgram(net.universe)
    v = net.universe.var(net.subsystem(far).state_vars[0])
    prog.add_sos(sos.SosExpr.lift(net.universe, v ** 2), "far")
    with pytest.raises(cf.CertifyError):
        agent._solve("probe", prog)


def test_bad_protocol_inputs(decoupled):
    net, lfs = decoupled
    with pytest.raises(ValueError):
        cf.run_protocol(net, lfs, {1: 1.0, 2: 0.1})
    with pytest.raises(ValueError):
        cf.run_protocol(net, lfs, {1: 0.1, 2: 0.1}, cf.ProtocolOptions(mode="gossip"))


# -- protocol on a coupled pair -------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["sequential", "parallel"])
def test_coupled_pair_replays_identically(mode):
    net, lfs = weakly_coupled_pair(0.2)
    v0 = {1: 0.4, 2: 0.1}
    opts = cf.ProtocolOptions(mode=mode)
    rep = cf.run_protocol(net, lfs, v0, opts)
    assert rep.exponentially_stable
    again = cf.run_protocol(net, lfs, v0, opts, replay=rep.messages)
    assert json.dumps(again.to_json(), sort_keys=True) == json.dumps(rep.to_json(), sort_keys=True)
    assert rep.diagnostics["locality_ok"]
    assert all(m.recipients == [2 if m.sender == 1 else 1] for m in rep.messages)


def test_replayed_messages_are_what_agents_read():
    net, _ = weakly_coupled_pair(0.2)
    bus = cf._Bus(net, [cf.AgentMessage(2, 1, 0, 0.77, [1])])
    assert bus.view(1, 1, 0, {1: 0.1, 2: 0.2}) == {1: 0.1, 2: 0.77}
    assert bus.view(2, 1, 0, {1: 0.1, 2: 0.2}) == {1: 0.1, 2: 0.2}


def test_parallel_closure_on_coupled_pair():
    net, lfs = weakly_coupled_pair(0.2)
    out = cf._parallel_closure(net, lfs, {1: 0.1, 2: 0.1}, cf.ProtocolOptions(mode="parallel"), None)
    assert out["feasible"]
    A = np.array(out["matrix"])
    assert np.all(A.sum(axis=1) < 0)
    assert np.all(A[~np.eye(2, dtype=bool)] >= 0)


# -- multiple comparison matrix checker ------------------------------------------------------------

def test_multiple_cs_checker_accepts_protocol_diagonals(seq_run, seed1, seed1_lfs):
    rep, _ = seq_run
    mats = cf.diagonal_matrices(rep)
    assert mats
    k = min(3, len(mats))
    chk = cf.check_multiple_cs_certificate(mats[:k], rep.levels[:k + 1], seed1[0], seed1_lfs)
    assert chk.ok, chk.failures


def test_multiple_cs_checker_rejects_positive_row_and_bad_entries(decoupled):
    net, lfs = decoupled
    levels = [{1: 0.5, 2: 0.5}, {1: 0.2, 2: 0.2}]
    good = np.diag([-1.9, -1.9])
    assert cf.check_multiple_cs_certificate([good], levels, net, lfs).ok
    chk = cf.check_multiple_cs_certificate([np.diag([0.1, -1.9])], levels, net, lfs)
    assert not chk.ok and any(f[1] == 1 and "row sum" in f[2] for f in chk.failures)
    # -5 (V - 0.2) lies below -2 V once V > 1/3
    chk = cf.check_multiple_cs_certificate([np.diag([-5.0, -1.9])], levels, net, lfs)
    assert not chk.ok and any("SOS" in f[2] for f in chk.failures)
    with pytest.raises(ValueError):
        cf.check_multiple_cs_certificate([good], levels[:1], net, lfs)


def test_multiple_cs_checker_rejects_perturbed_protocol_matrix(seq_run, seed1, seed1_lfs):
    rep, _ = seq_run
    A = cf.diagonal_matrices(rep)[0].copy()
    A[0, 0] -= 10.0
    chk = cf.check_multiple_cs_certificate([A], rep.levels[:2], seed1[0], seed1_lfs)
    assert not chk.ok


# -- seed-1 protocol ----------------------------------------------------------------------------------

@pytest.mark.parametrize("which", ["seq_run", "par_run"])
def test_seed1_protocol_invariants(which, request):
    rep, reg = request.getfixturevalue(which)
    assert rep.exponentially_stable
    assert rep.diagnostics["unknown_solves"] == 0
    assert rep.diagnostics["locality_ok"]
    for a, b in zip(rep.phase1, rep.phase1[1:]):
        assert all(b[i] >= a[i] for i in a)
    for a, b in zip(rep.levels, rep.levels[1:]):
        assert all(b[i] <= a[i] for i in a)
    assert all(r is None or r < 0 for row in rep.rates for r in row.values())
    for row in rep.weights:
        for w in row.values():
            assert sum(w.values()) < 1.0


def test_first_step_probe_matches_decoupled_truth(decoupled):
    net, lfs = decoupled
    assert cf.first_step_decreases(net, lfs, 0.5) == {1: True, 2: True}
