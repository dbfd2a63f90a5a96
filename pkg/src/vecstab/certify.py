"""Comparison-system constructions over vector Lyapunov functions.

Single comparison systems (traditional bound constants, SOS-direct rows,
power transform), the two-phase multiple comparison systems in sequential
and pairwise-parallel form, and a checker for general (non-diagonal)
multiple comparison matrices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import sos
from .audit import CertificateRegistry, Claim, LevelBand
from .lyap import BoundConstants, LyapunovFn
from .model import Network
from .poly import Polynomial, lie_derivative, monomial_basis
from .sdp import SolverOptions

EPS = 1e-6
DELTA = 0.01
BISECT_TOL = 1e-3


class CertifyError(RuntimeError):
    pass


# -- comparison matrices ---------------------------------------------------------------

@dataclass
class ComparisonMatrix:
    ids: list[int]
    entries: np.ndarray
    domain_gammas: dict[int, float]
    provenance: str

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        off = self.entries - np.diag(np.diag(self.entries))
        if np.any(off < -1e-12):
            raise CertifyError(f"{self.provenance} matrix has negative off-diagonal entries")

    def pos(self, i: int) -> int:
        return self.ids.index(i)

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def max_row_sum(self) -> float:
        return float(self.row_sums().max())

    def invariance_sums(self, gammas: Mapping[int, float] | None = None) -> np.ndarray:
        g = gammas or self.domain_gammas
        return self.entries @ np.array([g[i] for i in self.ids])

    def to_json(self) -> dict:
        return {
            "ids": self.ids,
            "entries": self.entries.tolist(),
            "domain_gammas": {str(k): v for k, v in self.domain_gammas.items()},
            "provenance": self.provenance,
        }


@dataclass
class GershgorinVerdict:
    hurwitz_row: dict[int, bool]
    invariance_row: dict[int, bool]
    eigen_hurwitz: bool
    max_real_eig: float

    @property
    def rows_ok(self) -> bool:
        return all(self.hurwitz_row.values()) and all(self.invariance_row.values())


def gershgorin_verdict(A: ComparisonMatrix, gammas: Mapping[int, float] | None = None) -> GershgorinVerdict:
    rs = A.row_sums()
    inv = A.invariance_sums(gammas)
    lam = float(np.max(np.linalg.eigvals(A.entries).real))
    return GershgorinVerdict(
        {i: bool(rs[k] < 0) for k, i in enumerate(A.ids)},
        {i: bool(inv[k] < 0) for k, i in enumerate(A.ids)},
        lam < 0,
        lam,
    )


def power_transform(At: np.ndarray, ct: np.ndarray, d: int, check: bool = True) -> np.ndarray:
    """Comparison matrix for V = W^d from one for W, given positive weights c~_ij.

    Requires a~_ii + sum_j a~_ij c~_ij < 0 for every row; the result then
    satisfies a_ii + sum_j a_ij c~_ij^d < 0. With ``check=False`` the entries are
    returned even when the hypothesis fails (no guarantee attached).
    """
    At = np.asarray(At, dtype=float)
    ct = np.asarray(ct, dtype=float)
    if d < 1:
        raise ValueError("d must be >= 1")
    m = At.shape[0]
    off = ~np.eye(m, dtype=bool)
    if np.any(ct[off] <= 0):
        raise ValueError("weights c~_ij must be positive")
    lhs = np.diag(At) + np.where(off, At * ct, 0.0).sum(axis=1)
    if check and np.any(lhs >= 0):
        raise ValueError("row condition a~_ii + sum a~_ij c~_ij < 0 is violated")
    A = np.where(off, At * ct ** (1 - d), 0.0)
    np.fill_diagonal(A, d * np.diag(At) + (d - 1) * np.where(off, At * ct, 0.0).sum(axis=1))
    return A


def power_row_condition(A: np.ndarray, ct: np.ndarray, d: int) -> np.ndarray:
    m = A.shape[0]
    off = ~np.eye(m, dtype=bool)
    return np.diag(A) + np.where(off, A * np.asarray(ct, dtype=float) ** d, 0.0).sum(axis=1)


def traditional_single_cs(net: Network, lfs: Mapping[int, LyapunovFn], bc: BoundConstants) -> ComparisonMatrix:
    ids = net.ids
    m = len(ids)
    eta1t, eta2t, eta3t = {}, {}, {}
    for i in ids:
        e1, e2, e3, d = bc.eta1[i], bc.eta2[i], bc.eta3[i], bc.d[i]
        if not all(math.isfinite(v) and v > 0 for v in (e1, e2, e3)):
            raise CertifyError(f"subsystem {i}: bound constants must be positive (got {e1}, {e2}, {e3})")
        eta1t[i] = e1 ** (1.0 / d)
        eta2t[i] = e2 ** (1.0 / d)
        eta3t[i] = e3 * eta2t[i] / (d * e2)
    A = np.zeros((m, m))
    for a, i in enumerate(ids):
        A[a, a] = -eta3t[i] / eta2t[i]
        for j in net.neighbors(i):
            z = bc.zeta.get((i, j), 0.0)
            if not math.isfinite(z) or z < 0:
                raise CertifyError(f"edge {j}->{i}: interaction bound unavailable")
            zt = z * eta1t[i] / (bc.d[i] * bc.eta1[i])
            A[a, ids.index(j)] = zt / eta1t[j]
    return ComparisonMatrix(ids, A, {i: bc.gamma for i in ids}, "traditional")


def traditional_implied(At: ComparisonMatrix, d: int, check: bool = True) -> ComparisonMatrix:
    """The matrix the traditional construction implies for the polynomial LFs (unit weights)."""
    m = len(At.ids)
    return ComparisonMatrix(At.ids, power_transform(At.entries, np.ones((m, m)), d, check), At.domain_gammas,
                            "power-transform")


# -- shared polynomial pieces ----------------------------------------------------------------

def vdot(net: Network, lfs: Mapping[int, LyapunovFn], i: int, coupled: bool = True) -> Polynomial:
    s = net.subsystem(i)
    field_ = list(s.f)
    if coupled:
        field_ = [a + b for a, b in zip(field_, net.coupling(i))]
    return lie_derivative(lfs[i].V, field_, net.state_indices(i))


def _xbar(net: Network, i: int) -> list[int]:
    out: list[int] = []
    for j in sorted(net.neighborhoods[i]):
        out.extend(k for k in net.state_indices(j) if k not in out)
    return out


def _groups(net: Network, members: Iterable[int]) -> list[list[int]]:
    return [net.state_indices(j) for j in members]


def _mult_degree(target_deg: int, k_deg: int) -> int:
    return max(2, sos.default_multiplier_degree(target_deg, k_deg))


def _own_margin(net: Network, i: int) -> Polynomial:
    return sos.margin(net.universe, net.state_indices(i), 2)


@dataclass
class SolveRecord:
    """What one agent solve touched; used for locality checks."""

    agent: int
    kind: str
    variables: frozenset[int]
    status: str


def _program_vars(prog: sos.SosProgram) -> frozenset[int]:
    used: set[int] = set()
    for v in prog.vars:
        for m in v.monomials:
            used.update(k for k, _ in m)
    for c in prog.constraints:
        used |= c.expr.const.var_indices()
        for q in c.expr.parts.values():
            used |= q.var_indices()
    return frozenset(used)


# -- direct single comparison system -----------------------------------------------------------

@dataclass
class DirectResult:
    matrix: ComparisonMatrix | None
    statuses: dict[int, str]
    results: dict[int, sos.SosResult]

    @property
    def feasible(self) -> bool:
        return self.matrix is not None

    def failed(self) -> list[int]:
        return [i for i, s in self.statuses.items() if s not in (sos.OPTIMAL, sos.FEASIBLE)]


def direct_row_program(net: Network, lfs: Mapping[int, LyapunovFn], i: int, gammas: Mapping[int, float],
                       mode: str = "feasibility", invariance: bool = True):
    U = net.universe
    xbar = _xbar(net, i)
    prog = sos.SosProgram(U, groups=_groups(net, net.neighborhoods[i]))
    vd = vdot(net, lfs, i)
    coeffs = {}
    expr = sos.SosExpr.lift(U, -vd)
    for j in sorted(net.neighborhoods[i]):
        a = prog.scalar(f"a_{j}", nonneg=(j != i))
        coeffs[j] = a
        expr = expr + a * lfs[j].V
    for j in sorted(net.neighborhoods[i]):
        deg = _mult_degree(vd.degree(), lfs[j].V.degree())
        s = prog.sos_poly(f"sigma_{j}", xbar, deg, min_degree=1)
        expr = expr - s * (gammas[j] - lfs[j].V)
    prog.add_sos(expr, "row")
    row = sum((coeffs[j].expr for j in coeffs), sos.SosExpr.lift(U, 0.0))
    if mode == "feasibility":
        prog.add_nonneg(-1.0 * row - EPS, "hurwitz")
    elif mode == "minimize-rowsum":
        prog.minimize(row)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if invariance:
        inv = sum((coeffs[j] * gammas[j] for j in coeffs), sos.SosExpr.lift(U, 0.0))
        prog.add_nonneg(-1.0 * inv - EPS, "invariance")
    return prog, vd


def direct_single_cs(net: Network, lfs: Mapping[int, LyapunovFn], gammas: Mapping[int, float],
                     mode: str = "feasibility", opts: SolverOptions | None = None,
                     registry: CertificateRegistry | None = None, jobs: int = 1,
                     invariance: bool = True, label: str = "direct") -> DirectResult:
    for i in net.ids:
        if not 0 < gammas[i] <= 1:
            raise ValueError(f"level for subsystem {i} must lie in (0, 1]")

    def row(i):
        prog, vd = direct_row_program(net, lfs, i, gammas, mode, invariance)
        return i, prog.solve(opts), vd

    ids = net.ids
    A = np.zeros((len(ids), len(ids)))
    statuses, results = {}, {}
    for i, r, vd in _map(row, ids, jobs):
        statuses[i], results[i] = r.status, r
        if not r.feasible:
            continue
        for j in net.neighborhoods[i]:
            val = r.scalar(f"a_{j}")
            A[ids.index(i), ids.index(j)] = max(val, 0.0) if j != i else val
        if registry is not None:
            target = -vd + sum((A[ids.index(i), ids.index(j)] * lfs[j].V for j in net.neighborhoods[i]),
                               Polynomial.zero(net.universe))
            bands = [LevelBand(lfs[j].V, net.state_indices(j), 0.0, gammas[j]) for j in sorted(net.neighborhoods[i])]
            registry.add(f"{label}[{i}]", r.certificate, Claim(target, bands))
    ok = all(s in (sos.OPTIMAL, sos.FEASIBLE) for s in statuses.values())
    mat = ComparisonMatrix(ids, A, dict(gammas), "direct") if ok else None
    return DirectResult(mat, statuses, results)


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- multiple comparison systems: per-agent programs ---------------------------------------------

def phase1_program(net, lfs, i, level_i, levels):
    """dV_i/dt < 0 on the boundary {V_i = level_i} inside the neighbors' current sets."""
    U = net.universe
    xbar = _xbar(net, i)
    prog = sos.SosProgram(U, groups=_groups(net, net.neighborhoods[i]))
    vd = vdot(net, lfs, i)
    target = -vd - _own_margin(net, i)
    deg = _mult_degree(vd.degree(), lfs[i].V.degree())
    lam = prog.free_poly("sigma_ii", xbar, deg)
    expr = sos.SosExpr.lift(U, target) - lam * (level_i - lfs[i].V)
    for j in net.neighbors(i):
        s = prog.sos_poly(f"sigma_{j}", xbar, _mult_degree(vd.degree(), lfs[j].V.degree()))
        expr = expr - s * (levels[j] - lfs[j].V)
    prog.add_sos(expr, "boundary")
    bands = [LevelBand(lfs[i].V, net.state_indices(i), level_i, level_i)] + [
        LevelBand(lfs[j].V, net.state_indices(j), 0.0, levels[j]) for j in net.neighbors(i)
    ]
    return prog, Claim(target, bands)


def phase2_program(net, lfs, i, new_level, levels):
    """dV_i/dt <= a (V_i - new_level), a <= -eps, on the annulus inside the neighbors' sets."""
    U = net.universe
    xbar = _xbar(net, i)
    prog = sos.SosProgram(U, groups=_groups(net, net.neighborhoods[i]))
    vd = vdot(net, lfs, i)
    tight = new_level == 0.0
    Vi = lfs[i].V
    slack = prog.scalar("a_slack", nonneg=True)
    deg = _mult_degree(vd.degree(), Vi.degree())
    low = prog.sos_poly("sigma_low", xbar, deg)
    expr = sos.SosExpr.lift(U, -vd) + (-EPS - slack) * (Vi - new_level) - low * (Vi - new_level)
    for j in sorted(net.neighborhoods[i]):
        s = prog.sos_poly(f"sigma_{j}", xbar, _mult_degree(vd.degree(), lfs[j].V.degree()),
                          min_degree=1 if tight else 0)
        expr = expr + s * (lfs[j].V - levels[j])
    prog.add_sos(expr, "annulus")
    prog.minimize(-1.0 * slack)  # fastest certified decay

    def claim(a):
        bands = [LevelBand(Vi, net.state_indices(i), new_level, levels[i])] + [
            LevelBand(lfs[j].V, net.state_indices(j), 0.0, levels[j]) for j in net.neighbors(i)
        ]
        return Claim(-vd + a * (Vi - new_level), bands)

    return prog, claim


def _pair_vars(net, i, j):
    return net.state_indices(i) + [k for k in net.state_indices(j) if k not in net.state_indices(i)]


def _tight_basis(net, i, j, deg):
    """Multiplier basis of monomials that involve x_i (so the multiplier vanishes when x_i = 0)."""
    own = set(net.state_indices(i))
    return [m for m in monomial_basis(_pair_vars(net, i, j), deg // 2, 1) if any(k in own for k, _ in m)]


def pair_phase1_program(net, lfs, i, j, level_i, level_j):
    U = net.universe
    xv = _pair_vars(net, i, j)
    prog = sos.SosProgram(U, groups=_groups(net, [i, j]))
    g = net.incoming(i)[j]
    idx = net.state_indices(i)
    hf = lie_derivative(lfs[i].V, list(net.subsystem(i).f), idx)
    hg = lie_derivative(lfs[i].V, list(g), idx)
    w = prog.scalar("w", nonneg=True)
    deg = _mult_degree(max(hf.degree(), hg.degree()), lfs[i].V.degree())
    lam = prog.free_poly("sigma_ii", xv, deg)
    s = prog.sos_poly("sigma_ij", xv, deg)
    prog.add_sos(-1.0 * (w * hf) - hg - lam * (level_i - lfs[i].V) - s * (level_j - lfs[j].V), "pair")
    prog.minimize(w.expr)

    def claim(wv):
        return Claim(-(wv * hf) - hg, [LevelBand(lfs[i].V, idx, level_i, level_i),
                                      LevelBand(lfs[j].V, net.state_indices(j), 0.0, level_j)])

    return prog, claim


def pair_phase2_program(net, lfs, i, j, new_level, level_i, level_j):
    U = net.universe
    xv = _pair_vars(net, i, j)
    prog = sos.SosProgram(U, groups=_groups(net, [i, j]))
    g = net.incoming(i)[j]
    idx = net.state_indices(i)
    Vi, Vj = lfs[i].V, lfs[j].V
    hf = lie_derivative(Vi, list(net.subsystem(i).f), idx)
    hg = lie_derivative(Vi, list(g), idx)
    tight = new_level == 0.0
    w = prog.scalar("w", nonneg=True)
    slack = prog.scalar("a_slack", nonneg=True)
    deg = _mult_degree(max(hf.degree(), hg.degree()), Vi.degree())
    low = prog.sos_poly("sigma_low", xv, deg)
    if tight:
        si = prog.sos_poly("sigma_i", xv, deg, basis=_tight_basis(net, i, j, deg))
        sj = prog.sos_poly("sigma_j", xv, deg, basis=_tight_basis(net, i, j, deg))
    else:
        si = prog.sos_poly("sigma_i", xv, deg)
        sj = prog.sos_poly("sigma_j", xv, deg)
    expr = (-1.0 * (w * hf) - hg + (-EPS - slack) * (Vi - new_level) - low * (Vi - new_level)
            + si * (Vi - level_i) + sj * (Vj - level_j))
    prog.add_sos(expr, "pair")
    prog.minimize(w.expr)

    def claim(wv, a):
        return Claim(-(wv * hf) - hg + a * (Vi - new_level),
                     [LevelBand(Vi, idx, new_level, level_i), LevelBand(Vj, net.state_indices(j), 0.0, level_j)])

    return prog, claim


# -- agents ------------------------------------------------------------------------------------

@dataclass
class StepOutcome:
    level: float
    status: str  # "ok" | "stalled" | "failed" | "unknown"
    a_ii: float | None = None
    weights: dict[int, float] = field(default_factory=dict)
    solves: int = 0
    unknowns: int = 0
    detail: str = ""


class Agent:
    """One subsystem. Sees only its own model data and the levels its neighbors broadcast."""

    def __init__(self, net: Network, lfs: Mapping[int, LyapunovFn], i: int, mode: str,
                 opts: SolverOptions | None, registry: CertificateRegistry | None,
                 delta: float = DELTA, tol: float = BISECT_TOL, weight_budget: float = 1.0 - EPS):
        self.net, self.lfs, self.id, self.mode = net, lfs, i, mode
        self.opts, self.registry = opts, registry
        self.delta, self.tol, self.budget = delta, tol, weight_budget
        self.records: list[SolveRecord] = []
        self.allowed = frozenset(_xbar(net, i))

    def _solve(self, kind: str, prog: sos.SosProgram, allowed: frozenset[int] | None = None) -> sos.SosResult:
        used = _program_vars(prog)
        allowed = allowed if allowed is not None else self.allowed
        if not used <= allowed:
            raise CertifyError(f"agent {self.id}: {kind} program references variables outside its neighborhood")
        r = prog.solve(self.opts)
        self.records.append(SolveRecord(self.id, kind, used, r.status))
        return r

    def _register(self, label, r, claim):
        if self.registry is not None and r is not None and r.feasible:
            self.registry.add(label, r.certificate, claim)

    # Phase 1 ---------------------------------------------------------------
    def envelope_trial(self, level: float, levels: Mapping[int, float]):
        """Returns (status, certificate registrar) for the boundary test at ``level``."""
        i = self.id
        if self.mode == "parallel" and self.net.neighbors(i):
            total, regs = 0.0, []
            for j in self.net.neighbors(i):
                prog, claim = pair_phase1_program(self.net, self.lfs, i, j, level, levels[j])
                pair_allowed = frozenset(_pair_vars(self.net, i, j))
                r = self._solve("phase1-pair", prog, pair_allowed)
                if r.status == sos.UNKNOWN:
                    return "unknown", None
                if not r.feasible:
                    return "infeasible", None
                wv = max(r.scalar("w"), 0.0)
                total += wv
                regs.append((f"p1[{i},{j}]@{level:.4f}", r, claim(wv)))
            if total > self.budget:
                return "infeasible", None
            return "ok", regs
        prog, claim = phase1_program(self.net, self.lfs, i, level, levels)
        r = self._solve("phase1", prog)
        if r.status == sos.UNKNOWN:
            return "unknown", None
        if not r.feasible:
            return "infeasible", None
        return "ok", [(f"p1[{i}]@{level:.4f}", r, claim)]

    def phase1_step(self, current: float, levels: Mapping[int, float]) -> StepOutcome:
        """Smallest level >= current, in increments of delta, whose boundary test passes."""
        # the zero level is a single point where the gradient vanishes: nothing can be certified there
        level = current if current > 0 else self.delta
        solves = 0
        while True:
            if level >= 1.0:
                return StepOutcome(current, "failed", solves=solves, detail="envelope reached the unit level set")
            st, regs = self.envelope_trial(level, levels)
            solves += 1
            if st == "unknown":
                return StepOutcome(current, "unknown", solves=solves, unknowns=1)
            if st == "ok":
                for lab, r, c in regs:
                    self._register(lab, r, c)
                return StepOutcome(level, "ok", solves=solves)
            level = round(level + self.delta, 12)

    # Phase 2 ---------------------------------------------------------------
    def decay_trial(self, new_level: float, levels: Mapping[int, float]):
        i = self.id
        if self.mode == "parallel" and self.net.neighbors(i):
            total, a_total, weights, regs = 0.0, 0.0, {}, []
            for j in self.net.neighbors(i):
                prog, claim = pair_phase2_program(self.net, self.lfs, i, j, new_level, levels[i], levels[j])
                r = self._solve("phase2-pair", prog, frozenset(_pair_vars(self.net, i, j)))
                if r.status == sos.UNKNOWN:
                    return "unknown", None
                if not r.feasible:
                    return "infeasible", None
                wv = max(r.scalar("w"), 0.0)
                a = -EPS - max(r.scalar("a_slack"), 0.0)
                total += wv
                a_total += a
                weights[j] = wv
                regs.append((f"p2[{i},{j}]@{new_level:.5f}", r, claim(wv, a)))
            if total > self.budget:
                return "infeasible", None
            return "ok", (a_total, weights, regs)
        prog, claim = phase2_program(self.net, self.lfs, i, new_level, levels)
        r = self._solve("phase2", prog)
        if r.status == sos.UNKNOWN:
            return "unknown", None
        if not r.feasible:
            return "infeasible", None
        a = -EPS - max(r.scalar("a_slack"), 0.0)
        return "ok", (a, {}, [(f"p2[{i}]@{new_level:.5f}", r, claim(a))])

    def phase2_step(self, levels: Mapping[int, float]) -> StepOutcome:
        """Bisect the smallest next level in [0, current] with a certified decay."""
        cur = levels[self.id]
        solves = unknowns = 0
        best = None

        def trial(x):
            nonlocal solves, unknowns
            st, payload = self.decay_trial(x, levels)
            solves += 1
            unknowns += st == "unknown"
            return payload if st == "ok" else None

        if cur <= 0.0:
            return StepOutcome(0.0, "ok", solves=0)
        # straight to zero only works when no neighbor can push back from a positive level
        quiet = all(levels[j] == 0.0 for j in self.net.neighbors(self.id))
        got = trial(0.0) if quiet else None
        if got is not None:
            best = (0.0, got)
        else:
            lo, hi = 0.0, cur
            while hi - lo > self.tol:
                mid = 0.5 * (lo + hi)
                got = trial(mid)
                if got is not None:
                    hi, best = mid, (mid, got)
                else:
                    lo = mid
            if best is None:
                got = trial(cur)
                if got is None:
                    return StepOutcome(cur, "stalled", solves=solves, unknowns=unknowns)
                best = (cur, got)
        level, (a, weights, regs) = best
        for lab, r, c in regs:
            self._register(lab, r, c)
        return StepOutcome(level, "ok", a, weights, solves, unknowns)

    def decreases_from(self, levels: Mapping[int, float], tol: float) -> bool:
        """Single feasibility test at current - tol (a smaller next level is only harder)."""
        st, payload = self.decay_trial(max(levels[self.id] - tol, 0.0), levels)
        if st == "ok":
            for lab, r, c in payload[2]:
                self._register(lab, r, c)
        return st == "ok"


# -- protocol --------------------------------------------------------------------------------

@dataclass
class AgentMessage:
    sender: int
    phase: int
    index: int
    level: float
    recipients: list[int]

    def to_json(self) -> dict:
        return {"sender": self.sender, "round": [self.phase, self.index], "level": self.level,
                "recipients": self.recipients}


@dataclass
class ProtocolOptions:
    mode: str = "sequential"  # or "parallel"
    delta: float = DELTA
    tol: float = BISECT_TOL
    max_phase1_rounds: int = 100
    max_rounds: int = 60
    closure_level: float = 0.15
    jobs: int = 1
    sdp: SolverOptions | None = None


@dataclass
class CertificationReport:
    mode: str
    v0: dict[int, float]
    gamma0: dict[int, float] | None
    phase1: list[dict[int, float]]
    levels: list[dict[int, float]]
    rates: list[dict[int, float | None]]
    weights: list[dict[int, dict[int, float]]]
    verdict: str
    gamma_star: dict[int, float] | None
    messages: list[AgentMessage]
    diagnostics: dict = field(default_factory=dict)
    closure: dict | None = None

    SCHEMA = "vecstab-report/1"

    @property
    def exponentially_stable(self) -> bool:
        return self.verdict == "ExponentiallyStable"

    def to_json(self) -> dict:
        def keyed(d):
            return None if d is None else {str(k): v for k, v in sorted(d.items())}

        return {
            "schema": self.SCHEMA,
            "mode": self.mode,
            "verdict": self.verdict,
            "v0": keyed(self.v0),
            "gamma0": keyed(self.gamma0),
            "gamma_star": keyed(self.gamma_star),
            "phase1": [keyed(r) for r in self.phase1],
            "levels": [keyed(r) for r in self.levels],
            "rates": [keyed(r) for r in self.rates],
            "weights": [{str(i): keyed(w) for i, w in sorted(r.items())} for r in self.weights],
            "closure": self.closure,
            "diagnostics": self.diagnostics,
            "messages": [m.to_json() for m in self.messages],
        }

    def rounds_rows(self) -> list[dict]:
        rows = []
        for l, lv in enumerate(self.phase1):
            for i, g in sorted(lv.items()):
                rows.append({"phase": 1, "round": l, "subsystem": i, "gamma": g, "a_ii": "", "weights": ""})
        for k, lv in enumerate(self.levels):
            for i, g in sorted(lv.items()):
                a = self.rates[k - 1].get(i) if k >= 1 and k - 1 < len(self.rates) else None
                w = self.weights[k - 1].get(i, {}) if k >= 1 and k - 1 < len(self.weights) else {}
                rows.append({"phase": 2, "round": k, "subsystem": i, "gamma": g,
                             "a_ii": "" if a is None else a,
                             "weights": ";".join(f"{j}:{v:.6g}" for j, v in sorted(w.items()))})
        return rows


class _Bus:
    """Synchronous broadcast over the neighbor graph; also the replay source."""

    def __init__(self, net: Network, replay: Sequence[AgentMessage] | None = None):
        self.net = net
        self.log: list[AgentMessage] = []
        self.listeners = {i: [k for k in net.ids if i in net.neighborhoods[k] and k != i] for i in net.ids}
        self.replay = {(m.phase, m.index, m.sender): m.level for m in (replay or [])}

    def broadcast(self, phase: int, index: int, levels: Mapping[int, float]) -> None:
        for i in sorted(levels):
            self.log.append(AgentMessage(i, phase, index, levels[i], list(self.listeners[i])))

    def view(self, i: int, phase: int, index: int, live: Mapping[int, float]) -> dict[int, float]:
        """Levels agent i may read in this round: its own plus those sent by N_i."""
        out = {}
        for j in self.net.neighborhoods[i]:
            key = (phase, index, j)
            out[j] = self.replay.get(key, live[j]) if j != i else live[i]
        return out


def run_protocol(net: Network, lfs: Mapping[int, LyapunovFn], v0: Mapping[int, float],
                 opts: ProtocolOptions | None = None, registry: CertificateRegistry | None = None,
                 replay: Sequence[AgentMessage] | None = None) -> CertificationReport:
    opts = opts or ProtocolOptions()
    if opts.mode not in ("sequential", "parallel"):
        raise ValueError(f"unknown protocol mode {opts.mode!r}")
    for i in net.ids:
        if not 0.0 <= v0[i] < 1.0:
            raise ValueError(f"initial level for subsystem {i} must lie in [0, 1)")
    agents = {i: Agent(net, lfs, i, opts.mode, opts.sdp, registry, opts.delta, opts.tol) for i in net.ids}
    bus = _Bus(net, replay)
    diag = {"phase1_solves": 0, "phase2_solves": 0, "unknown_solves": 0, "stalled": []}
    ids = net.ids

    def report(verdict, gamma0, p1, levels, rates, weights, gstar, closure=None, **extra):
        diag.update(extra)
        diag["locality_ok"] = all(r.variables <= agents[r.agent].allowed for a in agents.values() for r in a.records)
        return CertificationReport(opts.mode, dict(v0), gamma0, p1, levels, rates, weights, verdict, gstar,
                                   bus.log, diag, closure)

    # Phase 1: expand until the boundary tests agree
    cur = {i: float(v0[i]) for i in ids}
    p1 = [dict(cur)]
    bus.broadcast(1, 0, cur)
    for l in range(opts.max_phase1_rounds):
        outs = dict(_map(lambda i: (i, agents[i].phase1_step(cur[i], bus.view(i, 1, l, cur))), ids, opts.jobs))
        diag["phase1_solves"] += sum(o.solves for o in outs.values())
        diag["unknown_solves"] += sum(o.unknowns for o in outs.values())
        bad = [i for i, o in outs.items() if o.status != "ok"]
        if bad:
            why = {i: outs[i].status for i in bad}
            return report("Inconclusive", None, p1, [], [], [], None, phase1_failure=why)
        nxt = {i: outs[i].level for i in ids}
        p1.append(nxt)
        bus.broadcast(1, l + 1, nxt)
        moved = max(nxt[i] - cur[i] for i in ids)
        cur = nxt
        if moved < opts.delta / 2:
            break
    else:
        return report("Inconclusive", None, p1, [], [], [], None, phase1_failure="no agreement")
    gamma0 = dict(cur)

    # Phase 2: shrink with diagonal decay certificates
    levels = [dict(gamma0)]
    rates: list[dict] = []
    weights: list[dict] = []
    closure = None
    converged = False
    for k in range(opts.max_rounds):
        cur = levels[-1]
        if all(v == 0.0 for v in cur.values()):
            break
        if max(cur.values()) <= opts.closure_level or k == 0 and max(cur.values()) <= opts.tol:
            closure = _try_closure(net, lfs, cur, opts, registry)
            if closure["feasible"]:
                levels.append({i: 0.0 for i in ids})
                rates.append({i: None for i in ids})
                weights.append({i: {} for i in ids})
                bus.broadcast(2, k + 1, levels[-1])
                break
        outs = dict(_map(lambda i: (i, agents[i].phase2_step(bus.view(i, 2, k, cur))), ids, opts.jobs))
        diag["phase2_solves"] += sum(o.solves for o in outs.values())
        diag["unknown_solves"] += sum(o.unknowns for o in outs.values())
        nxt = {i: outs[i].level for i in ids}
        rates.append({i: outs[i].a_ii for i in ids})
        weights.append({i: outs[i].weights for i in ids})
        levels.append(nxt)
        bus.broadcast(2, k + 1, nxt)
        for i in ids:
            if outs[i].status == "stalled" and i not in diag["stalled"]:
                diag["stalled"].append(i)
        if all(v == 0.0 for v in nxt.values()):
            break
        if max(cur[i] - nxt[i] for i in ids) < opts.tol:
            converged = True
            closure = _try_closure(net, lfs, nxt, opts, registry)
            if closure["feasible"]:
                levels.append({i: 0.0 for i in ids})
                rates.append({i: None for i in ids})
                weights.append({i: {} for i in ids})
                bus.broadcast(2, k + 2, levels[-1])
            break
    gstar = levels[-1]
    if all(v == 0.0 for v in gstar.values()):
        verdict = "ExponentiallyStable"
    elif converged and diag["unknown_solves"] == 0:
        verdict = "ConvergesToLimitSet"
    else:
        verdict = "Inconclusive"
    return report(verdict, gamma0, p1, levels, rates, weights, dict(gstar), closure)


def _try_closure(net, lfs, levels, opts: ProtocolOptions, registry) -> dict:
    """Final comparison step straight to the origin on the current envelope."""
    # a zero level is replaced by a small positive one: a larger set is still a sound domain
    pos = {i: max(levels[i], opts.tol) for i in net.ids}
    if opts.mode == "parallel":
        return _parallel_closure(net, lfs, pos, opts, registry)
    res = direct_single_cs(net, lfs, pos, "feasibility", opts.sdp, registry, opts.jobs, label="closure")
    out = {"kind": "direct", "levels": {str(i): v for i, v in sorted(pos.items())}, "feasible": res.feasible}
    if res.feasible:
        out["matrix"] = res.matrix.entries.tolist()
    else:
        out["failed_rows"] = res.failed()
    return out


def _parallel_closure(net, lfs, levels, opts, registry) -> dict:
    """Pairwise rows b_ij V_i + c_ij V_j aggregated into one comparison row per agent."""
    ids = net.ids
    A = np.zeros((len(ids), len(ids)))
    failed = []
    for i in ids:
        nb = net.neighbors(i)
        if not nb:
            prog, _ = direct_row_program(net, lfs, i, levels, "feasibility")
            r = prog.solve(opts.sdp)
            if not r.feasible:
                failed.append(i)
                continue
            A[ids.index(i), ids.index(i)] = r.scalar(f"a_{i}")
            continue
        wsum = 0.0
        for j in nb:
            prog, claim = _closure_pair_program(net, lfs, i, j, levels)
            r = prog.solve(opts.sdp)
            if not r.feasible:
                failed.append(i)
                break
            wsum += max(r.scalar("w"), 0.0)
            b, c = r.scalar("b"), max(r.scalar("c"), 0.0)
            A[ids.index(i), ids.index(i)] += b
            A[ids.index(i), ids.index(j)] += c
            if registry is not None:
                registry.add(f"closure[{i},{j}]", r.certificate, claim(r.scalar("w"), b, c))
        else:
            if wsum > 1.0 - EPS:
                failed.append(i)
    ok = not failed
    out = {"kind": "pairwise", "levels": {str(i): v for i, v in sorted(levels.items())}, "feasible": ok}
    if ok:
        out["matrix"] = A.tolist()
    else:
        out["failed_rows"] = failed
    return out


def _closure_pair_program(net, lfs, i, j, levels):
    U = net.universe
    xv = _pair_vars(net, i, j)
    prog = sos.SosProgram(U, groups=_groups(net, [i, j]))
    idx = net.state_indices(i)
    Vi, Vj = lfs[i].V, lfs[j].V
    hf = lie_derivative(Vi, list(net.subsystem(i).f), idx)
    hg = lie_derivative(Vi, list(net.incoming(i)[j]), idx)
    w = prog.scalar("w", nonneg=True)
    b = prog.scalar("b")
    c = prog.scalar("c", nonneg=True)
    deg = _mult_degree(max(hf.degree(), hg.degree()), Vi.degree())
    si = prog.sos_poly("sigma_i", xv, deg, basis=_tight_basis(net, i, j, deg))
    sj = prog.sos_poly("sigma_j", xv, deg, basis=_tight_basis(net, i, j, deg))
    prog.add_sos(-1.0 * (w * hf) - hg + b * Vi + c * Vj - si * (levels[i] - Vi) - sj * (levels[j] - Vj), "pair")
    prog.add_nonneg(-1.0 * (b + c) - EPS, "hurwitz")
    prog.add_nonneg(-1.0 * (b * levels[i] + c * levels[j]) - EPS, "invariance")
    prog.minimize(w.expr)

    def claim(wv, bv, cv):
        return Claim(-(wv * hf) - hg + bv * Vi + cv * Vj,
                     [LevelBand(Vi, idx, 0.0, levels[i]), LevelBand(Vj, net.state_indices(j), 0.0, levels[j])])

    return prog, claim


# -- checker for general multiple comparison matrices --------------------------------------------

@dataclass
class MultipleCsCheck:
    ok: bool
    failures: list[tuple[int, int, str]]


def check_multiple_cs_certificate(matrices: Sequence[np.ndarray], levels: Sequence[Mapping[int, float]],
                             net: Network, lfs: Mapping[int, LyapunovFn],
                             opts: SolverOptions | None = None) -> MultipleCsCheck:
    """Verify dV_i/dt <= sum_j a_ij^k (V_j - g_j^{k+1}) on the neighborhood annuli, plus row conditions.

    ``levels`` has one more entry than ``matrices``.
    """
    if len(levels) != len(matrices) + 1:
        raise ValueError("need one more level vector than matrices")
    ids = net.ids
    failures = []
    for k, A in enumerate(matrices):
        A = np.asarray(A, dtype=float)
        off = A - np.diag(np.diag(A))
        if np.any(off < 0):
            failures.append((k, -1, "negative off-diagonal entry"))
        hi, lo = levels[k], levels[k + 1]
        for a, i in enumerate(ids):
            nb = sorted(net.neighborhoods[i])
            if sum(A[a, ids.index(j)] for j in nb) >= 0:
                failures.append((k, i, "row sum not negative"))
            if k == 0 and sum(A[a, ids.index(j)] * (levels[0][j] - levels[1][j]) for j in nb) >= 0:
                if any(levels[0][j] != levels[1][j] for j in nb):
                    failures.append((k, i, "invariance condition fails"))
            if any(A[a, b] != 0 for b, j in enumerate(ids) if j not in nb):
                failures.append((k, i, "entry outside the neighborhood"))
            r = _multiple_cs_row(net, lfs, i, A[a], hi, lo, opts)
            if not r.feasible:
                failures.append((k, i, f"SOS check {r.status}"))
    return MultipleCsCheck(not failures, failures)


def _multiple_cs_row(net, lfs, i, row, hi, lo, opts):
    U = net.universe
    ids = net.ids
    xbar = _xbar(net, i)
    prog = sos.SosProgram(U, groups=_groups(net, net.neighborhoods[i]))
    vd = vdot(net, lfs, i)
    tight = all(lo[j] == 0.0 for j in net.neighborhoods[i])
    expr = sos.SosExpr.lift(U, -vd)
    for j in sorted(net.neighborhoods[i]):
        a = row[ids.index(j)]
        if a:
            expr = expr + a * (lfs[j].V - lo[j])
    for j in sorted(net.neighborhoods[i]):
        deg = _mult_degree(vd.degree(), lfs[j].V.degree())
        s_hi = prog.sos_poly(f"sigma_hi_{j}", xbar, deg, min_degree=1 if tight else 0)
        expr = expr - s_hi * (hi[j] - lfs[j].V)
        if lo[j] > 0:
            s_lo = prog.sos_poly(f"sigma_lo_{j}", xbar, deg)
            expr = expr - s_lo * (lfs[j].V - lo[j])
    prog.add_sos(expr, "row")
    return prog.solve(opts)


def diagonal_matrices(report: CertificationReport) -> list[np.ndarray]:
    ids = sorted(report.levels[0])
    out = []
    for r in report.rates:
        if any(v is None for v in r.values()):
            break
        out.append(np.diag([r[i] for i in ids]))
    return out


# -- uniform-level probes used by sweeps --------------------------------------------------------

def first_step_decreases(net: Network, lfs: Mapping[int, LyapunovFn], gamma: float, mode: str = "sequential",
                         opts: SolverOptions | None = None, tol: float = BISECT_TOL,
                         registry: CertificateRegistry | None = None) -> dict[int, bool]:
    """Per subsystem: does the first shrink step strictly decrease the uniform level ``gamma``?"""
    levels = {i: gamma for i in net.ids}
    return {i: Agent(net, lfs, i, mode, opts, registry, tol=tol).decreases_from(levels, tol) for i in net.ids}
