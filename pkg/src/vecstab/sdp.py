"""Dense primal-dual interior point solver for small block SDPs.

Standard (primal) form::

    minimize    sum_b <C_b, X_b> + c_free . u
    subject to  sum_b <A_ib, X_b> + F_i . u = b_i      i = 1..m
                X_b PSD, u free

Dual::

    maximize    b . y
    subject to  C_b - sum_i y_i A_ib = Z_b PSD,   F^T y = c_free

Constraint matrices are stored as sparse row-major ``vec`` rows, one sparse
matrix of shape (m, n_b^2) per block. Search direction is HKM with a
Mehrotra predictor-corrector. Feasibility problems are solved as the
minimization of a uniform eigenvalue slack ``s`` (X_b = X'_b - s I); the
problem is declared feasible when ``s < feas_tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

OPTIMAL = "Optimal"
FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NUMERIC_FAILURE = "NumericFailure"


@dataclass
class SolverOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    psd_tol: float = 1e-7
    infeas_tol: float = 1e-8
    max_iter: int = 200
    slack_floor: float = 1.0  # feasibility slack is bounded below by -slack_floor
    verbose: bool = False


@dataclass
class SdpProblem:
    block_dims: list[int]
    n_free: int
    A: list[sp.csr_matrix]
    F: sp.csr_matrix
    b: np.ndarray
    C: list[np.ndarray]
    c_free: np.ndarray
    sense: str = "minimize"

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.c_free = np.asarray(self.c_free, dtype=float).reshape(self.n_free)
        self.A = [sp.csr_matrix(a) for a in self.A]
        self.F = sp.csr_matrix(self.F) if self.n_free else sp.csr_matrix((len(self.b), 0))
        self.C = [np.asarray(c, dtype=float).reshape(n, n) for c, n in zip(self.C, self.block_dims)]

    @property
    def m(self) -> int:
        return len(self.b)

    @classmethod
    def from_constraints(
        cls,
        block_dims: Sequence[int],
        n_free: int,
        constraints: Sequence[tuple[dict, Sequence[float] | None, float]],
        objective: tuple[dict, Sequence[float] | None] | None = None,
        sense: str = "minimize",
    ) -> "SdpProblem":
        """Build from ``(block -> symmetric matrix, free-var row, rhs)`` triples."""
        m = len(constraints)
        rows = [[] for _ in block_dims]
        F = np.zeros((m, n_free))
        b = np.zeros(m)
        for i, (mats, frow, rhs) in enumerate(constraints):
            for blk, mat in mats.items():
                mat = np.asarray(mat, dtype=float)
                nz = np.nonzero(mat.ravel())[0]
                rows[blk].extend((i, k, mat.ravel()[k]) for k in nz)
            if frow is not None:
                F[i] = frow
            b[i] = rhs
        A = []
        for blk, n in enumerate(block_dims):
            if rows[blk]:
                r, c, v = zip(*rows[blk])
            else:
                r, c, v = (), (), ()
            A.append(sp.csr_matrix((v, (r, c)), shape=(m, n * n)))
        C = [np.zeros((n, n)) for n in block_dims]
        cf = np.zeros(n_free)
        if objective is not None:
            mats, frow = objective
            for blk, mat in mats.items():
                C[blk] = np.asarray(mat, dtype=float)
            if frow is not None:
                cf = np.asarray(frow, dtype=float)
        return cls(list(block_dims), n_free, A, sp.csr_matrix(F), b, C, cf, sense)

    def constraint_matrix(self, i: int, block: int) -> np.ndarray:
        n = self.block_dims[block]
        return self.A[block][i].toarray().reshape(n, n)

    def validate(self) -> None:
        if self.m < 1:
            raise ValueError("SDP needs at least one constraint")
        if any(n < 1 for n in self.block_dims):
            raise ValueError("block dimensions must be >= 1")
        if len(self.A) != len(self.block_dims) or len(self.C) != len(self.block_dims):
            raise ValueError("per-block data does not match block_dims")
        for a, n, c in zip(self.A, self.block_dims, self.C):
            if a.shape != (self.m, n * n):
                raise ValueError("constraint block has wrong shape")
            if abs(a - a[:, _transpose_perm(n)]).max() > 1e-12 if a.nnz else False:
                raise ValueError("constraint matrices must be symmetric")
            if np.abs(c - c.T).max() > 1e-12:
                raise ValueError("cost matrices must be symmetric")
        if self.F.shape != (self.m, self.n_free):
            raise ValueError("free-variable matrix has wrong shape")

    # linear maps
    def apply_A(self, X: Sequence[np.ndarray], u: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(self.m)
        for a, x in zip(self.A, X):
            out += a @ x.ravel()
        if self.n_free and u is not None:
            out += self.F @ u
        return out

    def apply_At(self, y: np.ndarray) -> list[np.ndarray]:
        return [(a.T @ y).reshape(n, n) for a, n in zip(self.A, self.block_dims)]

    def objective(self, X: Sequence[np.ndarray], u: np.ndarray) -> float:
        val = sum(float(np.vdot(c, x)) for c, x in zip(self.C, X))
        if self.n_free:
            val += float(self.c_free @ u)
        return val


def _transpose_perm(n: int) -> np.ndarray:
    return np.arange(n * n).reshape(n, n).T.ravel()


@dataclass
class SdpSolution:
    status: str
    block_values: list[np.ndarray]
    free_values: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    y: np.ndarray | None = None
    Z: list[np.ndarray] | None = None
    iterations: int = 0
    slack: float | None = None
    certificate: dict | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)


class SdpBackend(Protocol):
    name: str

    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution: ...


# -- residual verification ---------------------------------------------------

@dataclass
class ResidualReport:
    primal_residual: float
    dual_residual: float
    duality_gap: float
    primal_objective: float
    dual_objective: float
    min_eig_X: list[float]
    min_eig_Z: list[float]

    @property
    def worst(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.duality_gap)


def verify(problem: SdpProblem, solution: SdpSolution) -> ResidualReport:
    """Recompute residuals of ``solution`` from the problem data alone."""
    X = solution.block_values
    if len(X) != len(problem.block_dims) or any(x.shape != (n, n) for x, n in zip(X, problem.block_dims)):
        raise ValueError("solution blocks do not match problem dimensions")
    u = np.asarray(solution.free_values, dtype=float).reshape(problem.n_free)
    rp = problem.b - problem.apply_A(X, u)
    pres = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(problem.b)))
    pobj = problem.objective(X, u)
    min_x = [float(np.linalg.eigvalsh((x + x.T) / 2)[0]) for x in X]
    if solution.y is None or solution.Z is None:
        return ResidualReport(pres, math.nan, math.nan, pobj, math.nan, min_x, [])
    y = np.asarray(solution.y, dtype=float)
    if y.shape != (problem.m,):
        raise ValueError("dual vector has wrong length")
    At = problem.apply_At(y)
    dres2 = sum(float(np.linalg.norm(c - a - z) ** 2) for c, a, z in zip(problem.C, At, solution.Z))
    if problem.n_free:
        dres2 += float(np.linalg.norm(problem.c_free - problem.F.T @ y) ** 2)
    cnorm = math.sqrt(sum(float(np.linalg.norm(c) ** 2) for c in problem.C) + float(np.linalg.norm(problem.c_free) ** 2))
    dres = math.sqrt(dres2) / (1.0 + cnorm)
    dobj = float(problem.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    min_z = [float(np.linalg.eigvalsh((z + z.T) / 2)[0]) for z in solution.Z]
    return ResidualReport(pres, dres, gap, pobj, dobj, min_x, min_z)


def passes_psd(X: np.ndarray, tol: float) -> bool:
    """Cholesky succeeds after shifting by ``tol`` (scaled to the block)."""
    n = X.shape[0]
    shift = tol * max(1.0, float(np.max(np.abs(np.diag(X)))) if n else 1.0)
    try:
        np.linalg.cholesky((X + X.T) / 2 + shift * np.eye(n))
        return True
    except np.linalg.LinAlgError:
        return False


# -- preprocessing -------------------------------------------------------------

def _independent_rows(problem: SdpProblem) -> tuple[np.ndarray, np.ndarray | None]:
    """Indices of a maximal independent row subset, plus a Farkas vector when the
    dependent rows are inconsistent."""
    mats = [a.tocsc() for a in problem.A]
    if problem.n_free:
        mats.append(problem.F.tocsc())
    full = sp.hstack(mats).tocsc() if mats else sp.csc_matrix((problem.m, 0))
    counts = np.diff(full.indptr)
    unique_cols = np.nonzero(counts == 1)[0]
    has_unique = np.zeros(problem.m, dtype=bool)
    if len(unique_cols):
        has_unique[full.indices[full.indptr[unique_cols]]] = True
    rest = np.nonzero(~has_unique)[0]
    if len(rest) == 0:
        return np.arange(problem.m), None
    R = full.tocsr()[rest].toarray()
    nzcols = np.nonzero(np.abs(R).sum(axis=0))[0]
    R = R[:, nzcols]
    keep_rest: list[int] = []
    farkas = None
    if R.shape[1] == 0:
        dep = list(range(len(rest)))
    else:
        _, rr, piv = sla.qr(R.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(rr)) if rr.size else np.zeros(0)
        tol = max(R.shape) * np.finfo(float).eps * (diag[0] if len(diag) else 0.0) * 1e3
        rank = int(np.sum(diag > tol))
        keep_rest = sorted(piv[:rank].tolist())
        dep = sorted(piv[rank:].tolist())
    if dep:
        # dependent rows must be consistent with the kept ones
        Rk = R[keep_rest] if keep_rest else np.zeros((0, R.shape[1]))
        bk = problem.b[rest[keep_rest]] if keep_rest else np.zeros(0)
        for d in dep:
            if len(keep_rest):
                coef, *_ = np.linalg.lstsq(Rk.T, R[d], rcond=None)
                pred = float(coef @ bk)
            else:
                coef = np.zeros(0)
                pred = 0.0
            bd = problem.b[rest[d]]
            if abs(pred - bd) > 1e-9 * (1.0 + abs(bd)):
                y = np.zeros(problem.m)
                y[rest[d]] = 1.0
                if len(keep_rest):
                    y[rest[keep_rest]] = -coef
                s = float(problem.b @ y)
                farkas = y / s
                break
    keep = np.sort(np.concatenate([np.nonzero(has_unique)[0], rest[keep_rest]]).astype(int))
    return keep, farkas


def _subproblem(problem: SdpProblem, rows: np.ndarray, scale: np.ndarray) -> SdpProblem:
    D = sp.diags(scale)
    return SdpProblem(
        list(problem.block_dims),
        problem.n_free,
        [sp.csr_matrix(D @ a[rows]) for a in problem.A],
        sp.csr_matrix(D @ problem.F[rows]) if problem.n_free else sp.csr_matrix((len(rows), 0)),
        scale * problem.b[rows],
        problem.C,
        problem.c_free,
        problem.sense,
    )


# -- core interior point iteration -------------------------------------------------

@dataclass
class _Result:
    status: str
    X: list[np.ndarray]
    u: np.ndarray
    y: np.ndarray
    Z: list[np.ndarray]
    iterations: int
    message: str = ""
    ray: np.ndarray | None = None


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    n = X.shape[0]
    if n == 1:
        return math.inf if dX[0, 0] >= 0 else -X[0, 0] / dX[0, 0]
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh((W + W.T) / 2)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _initial_point(p: SdpProblem) -> tuple[list[np.ndarray], list[np.ndarray]]:
    X, Z = [], []
    bnorm = np.abs(p.b)
    for a, c, n in zip(p.A, p.C, p.block_dims):
        row_norms = np.sqrt(np.asarray(a.multiply(a).sum(axis=1)).ravel())
        xi = max(10.0, math.sqrt(n), n * float(np.max((1.0 + bnorm) / (1.0 + row_norms))))
        eta = max(10.0, math.sqrt(n), float(max(np.max(row_norms), np.linalg.norm(c))))
        X.append(xi * np.eye(n))
        Z.append(eta * np.eye(n))
    return X, Z


class _NewtonSystem:
    """Factorization of [[M, F], [F^T, 0]] with a couple of refinement sweeps."""

    def __init__(self, M: np.ndarray, F: np.ndarray):
        m, nf = F.shape
        self.M, self.F = M, F
        dm = np.diag(M)
        d = np.sqrt(np.maximum(dm, 1e-24 * max(1.0, float(dm.max()) if len(dm) else 1.0)))
        self.scale = np.concatenate([1.0 / d, np.ones(nf)])
        K = np.zeros((m + nf, m + nf))
        K[:m, :m] = M
        K[:m, m:] = F
        K[m:, :m] = F.T
        self.K = K
        Ks = K * self.scale[:, None] * self.scale[None, :]
        self.chol = None
        self.lu = None
        if nf == 0:
            try:
                self.chol = sla.cho_factor(Ks, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                pass
        if self.chol is None:
            self.lu = sla.lu_factor(Ks, check_finite=False)

    def _raw(self, r):
        rs = r * self.scale
        z = sla.cho_solve(self.chol, rs) if self.chol is not None else sla.lu_solve(self.lu, rs)
        return z * self.scale

    def solve(self, h: np.ndarray, rf: np.ndarray):
        rhs = np.concatenate([h, rf])
        sol = self._raw(rhs)
        for _ in range(2):
            res = rhs - self.K @ sol
            if not np.all(np.isfinite(res)):
                break
            sol = sol + self._raw(res)
        m = len(h)
        return sol[:m], sol[m:]


def _ipm(p: SdpProblem, opts: SolverOptions, stop_when=None) -> _Result:
    N = sum(p.block_dims)
    X, Z = _initial_point(p)
    u = np.zeros(p.n_free)
    y = np.zeros(p.m)
    Fd = p.F.toarray() if p.n_free else np.zeros((p.m, 0))
    AT = [a.T.tocsr() for a in p.A]
    bnorm = 1.0 + np.linalg.norm(p.b)
    cnorm = 1.0 + math.sqrt(sum(float(np.linalg.norm(c) ** 2) for c in p.C) + float(np.linalg.norm(p.c_free) ** 2))
    prev_worst = math.inf
    stall = 0
    best = None
    for it in range(1, opts.max_iter + 1):
        Aty = [(at @ y).reshape(n, n) for at, n in zip(AT, p.block_dims)]
        rp = p.b - p.apply_A(X, u)
        Rd = [c - a - z for c, a, z in zip(p.C, Aty, Z)]
        rf = p.c_free - Fd.T @ y
        mu = sum(float(np.vdot(x, z)) for x, z in zip(X, Z)) / N
        pobj = p.objective(X, u)
        dobj = float(p.b @ y)
        pinf = np.linalg.norm(rp) / bnorm
        dinf = math.sqrt(sum(float(np.linalg.norm(r) ** 2) for r in Rd) + float(np.linalg.norm(rf) ** 2)) / cnorm
        gap = max(mu * N, abs(pobj - dobj)) / (1.0 + abs(pobj) + abs(dobj))
        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap <= opts.gap_tol:
            return _Result(OPTIMAL, X, u, y, Z, it - 1)
        if stop_when is not None and (why := stop_when(X, pinf, dinf, dobj)):
            return _Result(OPTIMAL, X, u, y, Z, it - 1, why)
        # infeasibility certificates
        if dobj > 0:
            ray_res = math.sqrt(sum(float(np.linalg.norm(a + z) ** 2) for a, z in zip(Aty, Z)) + float(np.linalg.norm(Fd.T @ y) ** 2))
            if ray_res / dobj < opts.infeas_tol and dobj > 1e-12:
                return _Result(INFEASIBLE, X, u, y, Z, it - 1, "primal infeasible", ray=y / dobj)
        if pobj < 0:
            ax = p.apply_A(X, u)
            if np.linalg.norm(ax) / -pobj < opts.infeas_tol:
                return _Result(UNBOUNDED, X, u, y, Z, it - 1, "dual infeasible")
        worst = max(pinf / opts.feas_tol, dinf / opts.feas_tol, gap / opts.gap_tol)
        if best is None or worst < best[0]:
            best = (worst, X, u, y, Z, it - 1)
        if opts.verbose:
            print(f"{it:3d} pobj={pobj:+.6e} dobj={dobj:+.6e} pinf={pinf:.2e} dinf={dinf:.2e} gap={gap:.2e} mu={mu:.2e}")
        if worst > 0.9 * prev_worst:
            stall += 1
        else:
            stall = 0
        prev_worst = min(prev_worst, worst)
        if stall > 30:
            return _fail(best, "stalled", it)

        # Schur complement
        Zinv = []
        M = np.zeros((p.m, p.m))
        try:
            for a, x, z in zip(p.A, X, Z):
                zi = np.linalg.inv(z)
                zi = (zi + zi.T) / 2
                Zinv.append(zi)
                if x.shape[0] == 1:
                    col = a[:, 0].toarray().ravel()
                    M += np.outer(col, col) * (x[0, 0] * zi[0, 0])
                else:
                    K = np.kron(x, zi)
                    T = a @ K
                    M += (a @ T.T).T if sp.issparse(T) else np.asarray((a @ T.T)).T
        except np.linalg.LinAlgError:
            return _fail(best, "singular dual slack", it)
        M = (M + M.T) / 2
        try:
            newton = _NewtonSystem(M, Fd)
        except (np.linalg.LinAlgError, ValueError):
            return _fail(best, "singular Schur complement", it)

        def direction(Rc_Zinv):
            # Rc_Zinv: list of R_c Z^{-1} per block
            G = [rz - x @ rd @ zi for rz, x, rd, zi in zip(Rc_Zinv, X, Rd, Zinv)]
            h = rp - p.apply_A(G)
            dy, du = newton.solve(h, rf)
            Atdy = [(at @ dy).reshape(n, n) for at, n in zip(AT, p.block_dims)]
            dZ = [rd - a for rd, a in zip(Rd, Atdy)]
            dX = [g + x @ a @ zi for g, x, a, zi in zip(G, X, Atdy, Zinv)]
            dX = [(d + d.T) / 2 for d in dX]
            return dX, du, dy, dZ

        def steps(dX, dZ):
            ap = min([_max_step(x, d) for x, d in zip(X, dX)] + [math.inf])
            ad = min([_max_step(z, d) for z, d in zip(Z, dZ)] + [math.inf])
            return ap, ad

        # predictor
        dXa, dua, dya, dZa = direction([-x for x in X])
        if not all(np.all(np.isfinite(d)) for d in dXa + dZa):
            return _fail(best, "non-finite direction", it)
        ap, ad = steps(dXa, dZa)
        ap_a, ad_a = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(float(np.vdot(x + ap_a * dx, z + ad_a * dz)) for x, dx, z, dz in zip(X, dXa, Z, dZa)) / N
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        rcz = [sigma * mu * zi - x - dx @ dz @ zi for zi, x, dx, dz in zip(Zinv, X, dXa, dZa)]
        dX, du, dy, dZ = direction(rcz)
        if not all(np.all(np.isfinite(d)) for d in dX + dZ):
            return _fail(best, "non-finite direction", it)
        ap, ad = steps(dX, dZ)
        tau = 0.9 + 0.09 * min(ap_a, ad_a)
        ap = min(1.0, tau * ap)
        ad = min(1.0, tau * ad)
        if ap < 1e-12 and ad < 1e-12:
            return _fail(best, "step length vanished", it)
        X = [x + ap * d for x, d in zip(X, dX)]
        u = u + ap * du
        y = y + ad * dy
        Z = [z + ad * d for z, d in zip(Z, dZ)]
        X = [(x + x.T) / 2 for x in X]
        Z = [(z + z.T) / 2 for z in Z]
        if not all(np.all(np.isfinite(x)) for x in X) or not np.all(np.isfinite(y)):
            return _fail(best, "non-finite iterate", it)
    return _fail(best, "iteration limit", opts.max_iter)


DUAL_BOUND = "dual bound on the slack is positive"


def _fail(best, msg: str, it: int) -> _Result:
    """NumericFailure carrying the best iterate seen (callers may still audit it)."""
    _, X, u, y, Z, _ = best
    return _Result(NUMERIC_FAILURE, X, u, y, Z, it, msg)


# -- the solver ----------------------------------------------------------------------

def _slack_problem(p: SdpProblem) -> SdpProblem:
    """min s+ with X_b = X'_b - (s+ - floor) I; s+ lives in an extra 1x1 block."""
    traces = np.zeros(p.m)
    for a, n in zip(p.A, p.block_dims):
        diag_cols = np.arange(n) * (n + 1)
        traces += np.asarray(a[:, diag_cols].sum(axis=1)).ravel()
    A = list(p.A) + [sp.csr_matrix(-traces.reshape(-1, 1))]
    C = [np.zeros((n, n)) for n in p.block_dims] + [np.ones((1, 1))]
    return SdpProblem(list(p.block_dims) + [1], p.n_free, A, p.F, p.b, C, np.zeros(p.n_free), "minimize"), traces


class InteriorPointSolver:
    """Reference backend."""

    name = "builtin-ipm"

    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
        opts = opts or SolverOptions()
        problem.validate()
        keep, farkas = _independent_rows(problem)
        if farkas is not None:
            return self._linear_infeasible(problem, farkas)
        sub = _subproblem(problem, keep, np.ones(len(keep)))
        row_norm = np.sqrt(
            sum(np.asarray(a.multiply(a).sum(axis=1)).ravel() for a in sub.A)
            + (np.asarray(sub.F.multiply(sub.F).sum(axis=1)).ravel() if sub.n_free else 0.0)
        )
        scale = 1.0 / np.maximum(row_norm, 1e-300)
        sub = _subproblem(problem, keep, scale)

        if problem.sense == "feasibility":
            return self._solve_feasibility(problem, sub, keep, scale, opts)
        r = _ipm(sub, opts)
        y = np.zeros(problem.m)
        y[keep] = scale * r.y
        sol = self._package(problem, r.status, r.X, r.u, y, r.Z, r.iterations, r.message)
        if r.status == INFEASIBLE and r.ray is not None:
            ray = np.zeros(problem.m)
            ray[keep] = scale * r.ray
            sol.certificate = _farkas_report(problem, ray)
        if r.status == OPTIMAL and not self._meets(sol, opts):
            sol.status = NUMERIC_FAILURE
            sol.message = "tolerances not met on original scale"
        return sol

    @staticmethod
    def _meets(sol: SdpSolution, opts: SolverOptions) -> bool:
        return (
            sol.primal_residual <= opts.feas_tol
            and sol.dual_residual <= opts.feas_tol
            and sol.duality_gap <= opts.gap_tol
        )

    def _solve_feasibility(self, problem, sub, keep, scale, opts) -> SdpSolution:
        sp_, traces = _slack_problem(sub)
        # s+ = s + floor; shift rhs accordingly
        sp_.b = sub.b + opts.slack_floor * (-traces)

        def decided(X, pinf, dinf, dobj):
            # a primal-feasible iterate with negative slack certifies feasibility; a dual-feasible
            # one whose objective exceeds the floor bounds the optimal slack away from zero
            if pinf <= opts.feas_tol and X[-1][0, 0] - opts.slack_floor < -10 * opts.feas_tol:
                return "strictly feasible iterate"
            if dinf <= 0.1 * opts.feas_tol and dobj - opts.slack_floor > 10 * opts.feas_tol:
                return DUAL_BOUND
            return None

        r = _ipm(sp_, opts, decided)
        y = np.zeros(problem.m)
        y[keep] = scale * r.y
        if r.status != OPTIMAL:
            sol = self._package(problem, NUMERIC_FAILURE if r.status != INFEASIBLE else INFEASIBLE,
                                [x for x in r.X[:-1]], r.u, y, r.Z[:-1], r.iterations, r.message)
            if r.status == INFEASIBLE and r.ray is not None:
                ray = np.zeros(problem.m)
                ray[keep] = scale * r.ray
                sol.certificate = _farkas_report(problem, ray)
            return sol
        s = float(r.X[-1][0, 0]) - opts.slack_floor
        if r.message == DUAL_BOUND:
            s = max(s, float(sp_.b @ r.y) - opts.slack_floor)
        X = [x - s * np.eye(x.shape[0]) for x in r.X[:-1]]
        status = FEASIBLE if s < opts.feas_tol and r.message != DUAL_BOUND else INFEASIBLE
        sol = self._package(problem, status, X, r.u, y, r.Z[:-1], r.iterations, r.message)
        sol.slack = s
        # dual side refers to the slack problem: C = 0 on the original blocks
        sol.objective = s
        if status == INFEASIBLE:
            # y is a Farkas ray: -A^T y PSD, F^T y = 0, b.y = s > 0
            sol.certificate = _farkas_report(problem, y / max(float(problem.b @ y), 1e-300))
        else:
            rep = verify(problem, SdpSolution(status, X, r.u, 0.0, 0, 0, 0))
            sol.primal_residual = rep.primal_residual
            sol.dual_residual = 0.0
            sol.duality_gap = 0.0
            sol.y = None
            sol.Z = None
        return sol

    @staticmethod
    def _package(problem, status, X, u, y, Z, iters, msg) -> SdpSolution:
        sol = SdpSolution(status, [np.array(x) for x in X], np.array(u), 0.0, 0.0, 0.0, 0.0, y, [np.array(z) for z in Z], iters, message=msg)
        rep = verify(problem, sol)
        sol.objective = rep.primal_objective
        sol.primal_residual = rep.primal_residual
        sol.dual_residual = rep.dual_residual
        sol.duality_gap = rep.duality_gap
        return sol

    @staticmethod
    def _linear_infeasible(problem: SdpProblem, farkas: np.ndarray) -> SdpSolution:
        X = [np.zeros((n, n)) for n in problem.block_dims]
        sol = SdpSolution(INFEASIBLE, X, np.zeros(problem.n_free), math.nan, math.inf, math.nan, math.nan,
                          message="inconsistent linear equalities")
        sol.certificate = _farkas_report(problem, farkas)
        return sol


def _farkas_report(problem: SdpProblem, y: np.ndarray) -> dict:
    """A ray y with b.y = 1 certifies infeasibility when -A^T y is PSD and F^T y = 0."""
    At = problem.apply_At(y)
    min_eig = min((float(np.linalg.eigvalsh(-(a + a.T) / 2)[0]) for a in At), default=0.0)
    free_res = float(np.linalg.norm(problem.F.T @ y)) if problem.n_free else 0.0
    return {
        "ray": y,
        "b_dot_y": float(problem.b @ y),
        "min_eig_neg_Aty": min_eig,
        "free_residual": free_res,
        "residual": max(0.0, -min_eig) + free_res,
    }


_default_solver = InteriorPointSolver()


def solve(problem: SdpProblem, opts: SolverOptions | None = None, backend: SdpBackend | None = None) -> SdpSolution:
    return (backend or _default_solver).solve(problem, opts)


# -- optional external backend -------------------------------------------------------

class CvxoptBackend:
    """Cross-check backend built on cvxopt.solvers.sdp (image form)."""

    name = "cvxopt"

    def solve(self, problem: SdpProblem, opts: SolverOptions | None = None) -> SdpSolution:
        import cvxopt
        from cvxopt import solvers

        opts = opts or SolverOptions()
        if problem.sense != "minimize":
            raise NotImplementedError("cvxopt backend handles minimize problems only")
        # variables: lower triangle of every block, then u
        tri = [np.tril_indices(n) for n in problem.block_dims]
        sizes = [len(t[0]) for t in tri]
        nv = sum(sizes) + problem.n_free
        mult = [np.where(r == c, 1.0, 2.0) for r, c in tri]
        c = np.concatenate([cb[t] * w for cb, t, w in zip(problem.C, tri, mult)] + [problem.c_free])
        A = np.zeros((problem.m, nv))
        off = 0
        for a, n, t, w in zip(problem.A, problem.block_dims, tri, mult):
            dense = a.toarray().reshape(problem.m, n, n)
            A[:, off:off + len(t[0])] = dense[:, t[0], t[1]] * w
            off += len(t[0])
        if problem.n_free:
            A[:, off:] = problem.F.toarray()
        Gs, hs = [], []
        off = 0
        for n, (r, col) in zip(problem.block_dims, tri):
            G = np.zeros((n * n, nv))
            for k, (a, b) in enumerate(zip(r, col)):
                G[a + b * n, off + k] = -1.0
                G[b + a * n, off + k] = -1.0
            Gs.append(cvxopt.matrix(G))
            hs.append(cvxopt.matrix(np.zeros((n, n))))
            off += len(r)
        solvers.options.update({"show_progress": bool(opts.verbose), "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9})
        try:
            res = solvers.sdp(cvxopt.matrix(c), Gs=Gs, hs=hs, A=cvxopt.matrix(A), b=cvxopt.matrix(problem.b))
        except (ArithmeticError, ValueError) as exc:
            return SdpSolution(NUMERIC_FAILURE, [np.zeros((n, n)) for n in problem.block_dims],
                               np.zeros(problem.n_free), math.nan, math.inf, math.inf, math.inf, message=str(exc))
        x = np.array(res["x"]).ravel() if res["x"] is not None else np.zeros(nv)
        X, off = [], 0
        for n, (r, col) in zip(problem.block_dims, tri):
            M = np.zeros((n, n))
            M[r, col] = x[off:off + len(r)]
            M[col, r] = x[off:off + len(r)]
            X.append(M)
            off += len(r)
        u = x[off:]
        status = {"optimal": OPTIMAL, "primal infeasible": INFEASIBLE, "dual infeasible": UNBOUNDED}.get(res["status"], NUMERIC_FAILURE)
        y = -np.array(res["y"]).ravel()[: problem.m] if res["y"] is not None else None
        Z = [np.array(zs) for zs in res["zs"]] if res.get("zs") is not None else None
        sol = SdpSolution(status, X, u, 0.0, 0.0, 0.0, 0.0, y, Z)
        if status == OPTIMAL:
            rep = verify(problem, sol)
            sol.objective, sol.primal_residual = rep.primal_objective, rep.primal_residual
            sol.dual_residual, sol.duality_gap = rep.dual_residual, rep.duality_gap
        return sol


# -- SDPA sparse text format -----------------------------------------------------------

def to_sdpa(problem: SdpProblem) -> str:
    """Sparse SDPA text. Our primal is SDPA's dual form: F_0 = -C, F_i = A_i, c = b.
    Free variables are split into a diagonal (LP) block of size 2*n_free."""
    nf = problem.n_free
    blocks = list(problem.block_dims)
    struct = [str(n) for n in blocks] + ([str(-2 * nf)] if nf else [])
    lines = [
        f'"vecstab sdpa-sparse free_vars={nf}',
        f"{problem.m} = constraints",
        f"{len(struct)} = blocks",
        "(" + ", ".join(struct) + ")",
        " ".join(f"{v:.17g}" for v in problem.b),
    ]

    def emit(matno: int, blk: int, mat: np.ndarray):
        n = mat.shape[0]
        for a in range(n):
            for c in range(a, n):
                if mat[a, c] != 0.0:
                    lines.append(f"{matno} {blk} {a + 1} {c + 1} {mat[a, c]:.17g}")

    for bi, cmat in enumerate(problem.C):
        emit(0, bi + 1, -cmat)
    if nf:
        for k in range(nf):
            v = problem.c_free[k]
            if v != 0.0:
                lines.append(f"0 {len(blocks) + 1} {2 * k + 1} {2 * k + 1} {-v:.17g}")
                lines.append(f"0 {len(blocks) + 1} {2 * k + 2} {2 * k + 2} {v:.17g}")
    for i in range(problem.m):
        for bi in range(len(blocks)):
            row = problem.A[bi][i]
            if row.nnz:
                emit(i + 1, bi + 1, row.toarray().reshape(blocks[bi], blocks[bi]))
        if nf:
            frow = problem.F[i].toarray().ravel()
            for k in np.nonzero(frow)[0]:
                lines.append(f"{i + 1} {len(blocks) + 1} {2 * k + 1} {2 * k + 1} {frow[k]:.17g}")
                lines.append(f"{i + 1} {len(blocks) + 1} {2 * k + 2} {2 * k + 2} {-frow[k]:.17g}")
    return "\n".join(lines) + "\n"


def from_sdpa(text: str) -> SdpProblem:
    import re

    raw = text.splitlines()
    nf = 0
    body = []
    for ln in raw:
        s = ln.strip()
        if not s:
            continue
        if s[0] in '"*':
            m = re.search(r"free_vars=(\d+)", s)
            if m:
                nf = int(m.group(1))
            continue
        body.append(s)
    m = int(re.split(r"[\s=,]+", body[0])[0])
    nblk = int(re.split(r"[\s=,]+", body[1])[0])
    struct = [int(t) for t in re.findall(r"-?\d+", body[2])][:nblk]
    b = np.array([float(t) for t in re.split(r"[\s,{}()]+", body[3]) if t], dtype=float)[:m]
    psd = [n for n in struct if n > 0]
    nfree_blk = nblk if (nf and struct[-1] < 0) else None
    mats: dict[tuple[int, int], np.ndarray] = {}
    for ln in body[4:]:
        t = ln.split()
        matno, blk, i, j, v = int(t[0]), int(t[1]), int(t[2]) - 1, int(t[3]) - 1, float(t[4])
        if nfree_blk is not None and blk == nfree_blk:
            if i % 2 == 0:
                key = (matno, -1)
                arr = mats.setdefault(key, np.zeros(nf))
                arr[i // 2] = v
            continue
        n = struct[blk - 1]
        arr = mats.setdefault((matno, blk), np.zeros((n, n)))
        arr[i, j] = v
        arr[j, i] = v
    A_rows = [[] for _ in psd]
    F = np.zeros((m, nf))
    C = [np.zeros((n, n)) for n in psd]
    cf = np.zeros(nf)
    for (matno, blk), arr in mats.items():
        if blk == -1:
            if matno == 0:
                cf = -arr
            else:
                F[matno - 1] = arr
            continue
        if matno == 0:
            C[blk - 1] = -arr
        else:
            A_rows[blk - 1].append((matno - 1, arr.ravel()))
    A = []
    for bi, n in enumerate(psd):
        dense = np.zeros((m, n * n))
        for r, vec in A_rows[bi]:
            dense[r] = vec
        A.append(sp.csr_matrix(dense))
    return SdpProblem(psd, nf, A, sp.csr_matrix(F), b, C, cf, "minimize")
