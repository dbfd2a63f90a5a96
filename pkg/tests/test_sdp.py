import numpy as np
import pytest

from vecstab import sdp
from vecstab.sdp import SdpProblem, SolverOptions, from_sdpa, solve, to_sdpa, verify


def sym(M):
    return (M + M.T) / 2


def random_feasible(seed: int):
    """Strictly feasible primal and dual by construction, dense data kept for the oracle."""
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, 9)) for _ in range(int(rng.integers(1, 3)))]
    m = int(rng.integers(1, 13))
    mats = [[sym(rng.normal(size=(n, n))) for n in dims] for _ in range(m)]
    X0 = []
    for n in dims:
        B = rng.normal(size=(n, n))
        X0.append(B @ B.T + np.eye(n))
    b = np.array([sum(np.vdot(a, x) for a, x in zip(row, X0)) for row in mats])
    y0 = rng.normal(size=m)
    C = []
    for k, n in enumerate(dims):
        B = rng.normal(size=(n, n))
        C.append(sum(y0[i] * mats[i][k] for i in range(m)) + B @ B.T + np.eye(n))
    cons = [({k: mats[i][k] for k in range(len(dims))}, None, b[i]) for i in range(m)]
    p = SdpProblem.from_constraints(dims, 0, cons, ({k: C[k] for k in range(len(dims))}, None))
    return p, mats, b, C


def kkt_oracle(mats, b, C, sol):
    """Residuals recomputed from the dense data only."""
    X, y, Z = sol.block_values, sol.y, sol.Z
    rp = np.array([sum(np.vdot(a, x) for a, x in zip(row, X)) for row in mats]) - b
    rd = [C[k] - sum(y[i] * mats[i][k] for i in range(len(mats))) - Z[k] for k in range(len(C))]
    pobj = sum(np.vdot(c, x) for c, x in zip(C, X))
    dobj = float(b @ y)
    return {
        "primal": np.linalg.norm(rp) / (1 + np.linalg.norm(b)),
        "dual": np.sqrt(sum(np.linalg.norm(r) ** 2 for r in rd)) / (1 + np.sqrt(sum(np.linalg.norm(c) ** 2 for c in C))),
        "gap": abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj)),
        "min_eig_X": min(np.linalg.eigvalsh(sym(x))[0] for x in X),
        "min_eig_Z": min(np.linalg.eigvalsh(sym(z))[0] for z in Z),
        "pobj": pobj,
        "dobj": dobj,
    }


def trace_problem(sense="minimize"):
    return SdpProblem.from_constraints([2], 0, [({0: np.eye(2)}, None, 1.0)], ({0: np.diag([1.0, 2.0])}, None), sense)


def test_trace_one_minimum():
    sol = solve(trace_problem())
    assert sol.status == sdp.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-7)
    assert np.allclose(sol.block_values[0], np.diag([1.0, 0.0]), atol=1e-6)


def test_negative_diagonal_is_infeasible():
    p = SdpProblem.from_constraints([2], 0, [({0: np.array([[1.0, 0], [0, 0]])}, None, -1.0)], sense="feasibility")
    sol = solve(p)
    assert sol.status == sdp.INFEASIBLE
    cert = sol.certificate
    assert cert is not None and cert["residual"] <= 1e-8
    assert cert["b_dot_y"] > 0


def test_infeasible_minimization_returns_ray():
    p = SdpProblem.from_constraints([2], 0, [({0: np.array([[1.0, 0], [0, 0]])}, None, -1.0)],
                                    ({0: np.eye(2)}, None))
    sol = solve(p)
    assert sol.status == sdp.INFEASIBLE
    assert sol.certificate["residual"] <= 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_random_feasible_kkt(seed):
    p, mats, b, C = random_feasible(seed)
    opts = SolverOptions()
    sol = solve(p, opts)
    assert sol.status == sdp.OPTIMAL
    k = kkt_oracle(mats, b, C, sol)
    assert k["primal"] <= 1e-6 and k["dual"] <= 1e-6
    assert k["gap"] <= 1e-7
    assert k["min_eig_X"] >= -1e-6 and k["min_eig_Z"] >= -1e-6
    assert k["pobj"] >= k["dobj"] - opts.gap_tol * (1 + abs(k["pobj"]) + abs(k["dobj"]))
    rep = verify(p, sol)
    assert rep.primal_residual <= sol.primal_residual + 1e-9
    assert rep.dual_residual <= sol.dual_residual + 1e-9
    assert rep.duality_gap <= sol.duality_gap + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_cvxopt_agrees(seed):
    pytest.importorskip("cvxopt")
    p, mats, b, C = random_feasible(seed)
    ours = solve(p)
    ref = solve(p, backend=sdp.CvxoptBackend())
    if ref.status != sdp.OPTIMAL:
        pytest.skip(f"reference solver stopped with {ref.status}")
    k = kkt_oracle(mats, b, C, ours)
    # the reference optimum lies inside our certified [dual, primal] bracket
    slack = 1e-9 * (1 + abs(ref.objective))
    assert k["dobj"] - slack <= ref.objective <= k["pobj"] + slack
    assert abs(ours.objective - ref.objective) <= 2e-7 * (1 + abs(ref.objective))


def test_verify_hand_built_point():
    p = trace_problem()
    sol = sdp.SdpSolution(sdp.OPTIMAL, [np.diag([1.0, 0.0])], np.zeros(0), 1.0, 0, 0, 0,
                          y=np.array([1.0]), Z=[np.diag([0.0, 1.0])])
    rep = verify(p, sol)
    assert rep.primal_residual == 0 and rep.dual_residual == 0 and rep.duality_gap == 0


def test_verify_detects_perturbation():
    p = trace_problem()
    sol = solve(p)
    sol.block_values = [sol.block_values[0] + 1e-3 * np.eye(2)]
    assert verify(p, sol).primal_residual == pytest.approx(1e-3, rel=0.01)


def test_verify_dimension_mismatch():
    sol = solve(trace_problem())
    sol.block_values = [np.eye(3)]
    with pytest.raises(ValueError):
        verify(trace_problem(), sol)


def test_free_variables():
    # minimize u subject to u - X11 = 0, X11 + X22 = 2 -> u = 0
    p = SdpProblem.from_constraints(
        [2], 1,
        [({0: np.diag([-1.0, 0.0])}, [1.0], 0.0), ({0: np.eye(2)}, None, 2.0)],
        ({}, [1.0]))
    sol = solve(p)
    assert sol.status == sdp.OPTIMAL
    assert sol.free_values[0] == pytest.approx(0.0, abs=1e-6)


def test_feasibility_reports_feasible():
    p = trace_problem("feasibility")
    sol = solve(p)
    assert sol.status == sdp.FEASIBLE
    assert sdp.passes_psd(sol.block_values[0], 1e-7)
    assert abs(np.trace(sol.block_values[0]) - 1) <= 1e-7


def test_invalid_problem_rejected():
    with pytest.raises(ValueError):
        SdpProblem.from_constraints([2], 0, [({0: np.array([[0.0, 1.0], [0.0, 0.0]])}, None, 1.0)]).validate()
    with pytest.raises(ValueError):
        SdpProblem.from_constraints([2], 0, []).validate()


def test_deterministic_iterates():
    p, *_ = random_feasible(3)
    a, b = solve(p), solve(p)
    assert a.iterations == b.iterations
    assert all(np.array_equal(x, y) for x, y in zip(a.block_values, b.block_values))
    assert np.array_equal(a.y, b.y)


@pytest.mark.parametrize("seed", range(5))
def test_row_scaling_keeps_status(seed):
    p, mats, b, C = random_feasible(seed)
    m = len(b)
    cons = [({k: 10 * mats[i][k] for k in range(len(C))}, None, 10 * b[i]) for i in range(m)]
    q = SdpProblem.from_constraints(p.block_dims, 0, cons, ({k: C[k] for k in range(len(C))}, None))
    assert solve(q).status == solve(p).status == sdp.OPTIMAL
    bad = SdpProblem.from_constraints([2], 0, [({0: 10 * np.diag([1.0, 0.0])}, None, -10.0)], sense="feasibility")
    assert solve(bad).status == sdp.INFEASIBLE


def test_sdpa_round_trip():
    p, *_ = random_feasible(4)
    text = to_sdpa(p)
    q = from_sdpa(text)
    assert to_sdpa(q) == text
    assert q.block_dims == p.block_dims
    assert np.array_equal(q.b, p.b)
    for a, c in zip(p.C, q.C):
        assert np.array_equal(a, c)
    assert solve(q).objective == pytest.approx(solve(p).objective, abs=1e-9)


def test_sdpa_round_trip_with_free_variables():
    p = SdpProblem.from_constraints(
        [2], 1,
        [({0: np.diag([-1.0, 0.0])}, [1.0], 0.0), ({0: np.eye(2)}, None, 2.0)],
        ({}, [1.0]))
    q = from_sdpa(to_sdpa(p))
    assert q.n_free == 1
    assert np.array_equal(q.F.toarray(), p.F.toarray())
    assert np.array_equal(q.c_free, p.c_free)


def test_sdpa_header_and_precision():
    p = SdpProblem.from_constraints([1], 0, [({0: [[1.0]]}, None, 0.1)], ({0: [[1 / 3]]}, None))
    lines = to_sdpa(p).splitlines()
    assert lines[1] == "1 = constraints" and lines[2] == "1 = blocks"
    assert lines[4] == "0.10000000000000001"
    assert lines[5] == "0 1 1 1 -0.33333333333333331"
