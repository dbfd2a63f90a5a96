"""Sum-of-squares programs lowered to block SDPs by Gram parameterization.

A program owns decision variables (SOS polynomials, free polynomials and
scalars) and constraints that are affine in them. ``lower`` matches
coefficients monomial by monomial; each ``IsSos`` constraint gets its own
Gram block whose basis is pruned with Newton-polytope style directional
tests, so expressions that vanish at the origin never force a degenerate
constant monomial into the basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .poly import ONE, Monomial, Polynomial, Universe, VarId, grlex_key, monomial_basis
from . import sdp as sdpmod

FEASIBLE = "Feasible"
OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
UNKNOWN = "Unknown"

COEFF_TOL = 1e-6
EPS_MARGIN = 1e-6


class BilinearError(ValueError):
    """A product of two decision variables was requested."""


class SosDegreeError(ValueError):
    pass


# -- decision variables and affine expressions ------------------------------------------

@dataclass
class DecisionVar:
    id: int
    name: str
    kind: str  # "sos" | "free_poly" | "scalar"
    universe: Universe
    monomials: list[Monomial] = field(default_factory=list)  # Gram basis or free-poly support
    nonneg: bool = False

    @property
    def expr(self) -> "SosExpr":
        return SosExpr(self.universe, Polynomial.zero(self.universe), {self.id: Polynomial.constant(self.universe, 1.0)})

    # arithmetic delegates to the expression form
    def __add__(self, o):
        return self.expr + o

    __radd__ = __add__

    def __sub__(self, o):
        return self.expr - o

    def __rsub__(self, o):
        return (-self.expr) + o

    def __neg__(self):
        return -self.expr

    def __mul__(self, o):
        return self.expr * o

    __rmul__ = __mul__


class SosExpr:
    """const + sum_k multiplier_k * decision_k, multipliers known polynomials."""

    __slots__ = ("universe", "const", "parts")

    def __init__(self, universe: Universe, const: Polynomial, parts: Mapping[int, Polynomial] | None = None):
        self.universe = universe
        self.const = const
        self.parts = {k: v for k, v in (parts or {}).items() if not v.is_zero()}

    @classmethod
    def lift(cls, universe: Universe, o) -> "SosExpr":
        if isinstance(o, SosExpr):
            return o
        if isinstance(o, DecisionVar):
            return o.expr
        if isinstance(o, Polynomial):
            return cls(universe, o)
        if isinstance(o, (int, float, np.floating, np.integer)):
            return cls(universe, Polynomial.constant(universe, float(o)))
        raise TypeError(f"cannot use {type(o).__name__} in an SOS expression")

    def __add__(self, o):
        o = SosExpr.lift(self.universe, o)
        parts = dict(self.parts)
        for k, v in o.parts.items():
            parts[k] = parts[k] + v if k in parts else v
        return SosExpr(self.universe, self.const + o.const, parts)

    __radd__ = __add__

    def __neg__(self):
        return SosExpr(self.universe, -self.const, {k: -v for k, v in self.parts.items()})

    def __sub__(self, o):
        return self + (-SosExpr.lift(self.universe, o))

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        o = SosExpr.lift(self.universe, o)
        if self.parts and o.parts:
            raise BilinearError("product of two decision variables is not affine")
        if o.parts:
            self, o = o, self
        c = o.const
        return SosExpr(self.universe, self.const * c, {k: v * c for k, v in self.parts.items()})

    __rmul__ = __mul__

    def is_constant(self) -> bool:
        return not self.parts

    def substitute(self, values: Mapping[int, Polynomial]) -> Polynomial:
        out = self.const
        for k, q in self.parts.items():
            out = out + q * values[k]
        return out


# -- program -------------------------------------------------------------------------------

@dataclass
class _Constraint:
    expr: SosExpr
    kind: str  # "sos" | "zero"
    name: str


@dataclass
class SosCertificate:
    """Decision-variable values plus a Gram matrix for every SOS requirement."""

    universe: Universe
    values: dict[str, Polynomial]
    grams: dict[str, tuple[list[Monomial], np.ndarray]]
    constraints: list[tuple[str, str, Polynomial]]  # (name, kind, expression value)

    def scalar(self, name: str) -> float:
        return self.values[name].constant_term()

    def to_json(self) -> dict:
        names = self.universe.names

        def mono_text(m):
            return "*".join(f"{names[i]}^{e}" if e > 1 else names[i] for i, e in m) or "1"

        return {
            "values": {k: v.to_text() for k, v in self.values.items()},
            "grams": {
                k: {"basis": [mono_text(m) for m in basis], "matrix": g.tolist()}
                for k, (basis, g) in self.grams.items()
            },
            "constraints": [{"name": n, "kind": kd, "expression": p.to_text()} for n, kd, p in self.constraints],
        }


@dataclass
class SosResult:
    status: str
    objective: float | None
    certificate: SosCertificate | None
    residual: float
    sdp_status: str
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status in (FEASIBLE, OPTIMAL)

    def value(self, name: str) -> Polynomial:
        return self.certificate.values[name]

    def scalar(self, name: str) -> float:
        return self.certificate.scalar(name)


class SosProgram:
    def __init__(self, universe: Universe, groups: Sequence[Sequence[int]] | None = None):
        self.universe = universe
        self.vars: list[DecisionVar] = []
        self.constraints: list[_Constraint] = []
        self.objective: SosExpr | None = None
        self.groups = [list(g) for g in (groups or [])]

    # variables
    def _add(self, name, kind, monos, nonneg=False) -> DecisionVar:
        if any(v.name == name for v in self.vars):
            raise ValueError(f"duplicate decision variable {name!r}")
        v = DecisionVar(len(self.vars), name, kind, self.universe, list(monos), nonneg)
        self.vars.append(v)
        return v

    def scalar(self, name: str, nonneg: bool = False) -> DecisionVar:
        return self._add(name, "scalar", [ONE], nonneg)

    def sos_poly(self, name: str, vars: Sequence, degree: int, min_degree: int = 0,
                 basis: Sequence[Monomial] | None = None) -> DecisionVar:
        """SOS polynomial m^T Q m with m = monomials of degree in [min_degree, degree/2]."""
        if basis is None:
            if degree % 2:
                raise SosDegreeError(f"SOS multiplier {name!r} needs an even degree, got {degree}")
            basis = monomial_basis(_indices(self.universe, vars), degree // 2, min_degree)
        if not basis:
            raise SosDegreeError(f"empty Gram basis for {name!r}")
        return self._add(name, "sos", sorted(basis, key=grlex_key))

    def free_poly(self, name: str, vars: Sequence, degree: int, min_degree: int = 0,
                  monomials: Sequence[Monomial] | None = None) -> DecisionVar:
        if monomials is None:
            monomials = monomial_basis(_indices(self.universe, vars), degree, min_degree)
        return self._add(name, "free_poly", sorted(monomials, key=grlex_key))

    # constraints
    def add_sos(self, expr, name: str | None = None) -> None:
        e = SosExpr.lift(self.universe, expr)
        self.constraints.append(_Constraint(e, "sos", name or f"sos{len(self.constraints)}"))

    def add_zero(self, expr, name: str | None = None) -> None:
        e = SosExpr.lift(self.universe, expr)
        self.constraints.append(_Constraint(e, "zero", name or f"zero{len(self.constraints)}"))

    def add_nonneg(self, expr, name: str | None = None) -> None:
        """Scalar (degree-0) affine expression >= 0."""
        e = SosExpr.lift(self.universe, expr)
        if e.const.degree() > 0 or any(q.degree() > 0 for q in e.parts.values()) or any(
            self.vars[k].kind != "scalar" for k in e.parts
        ):
            raise ValueError("add_nonneg expects a scalar affine expression")
        self.add_sos(e, name)

    def minimize(self, expr) -> None:
        e = SosExpr.lift(self.universe, expr)
        for k, q in e.parts.items():
            if self.vars[k].kind != "scalar" or q.degree() > 0:
                raise ValueError("objective must be linear in scalar decision variables")
        self.objective = e

    # lowering
    def lower(self) -> "Lowered":
        return _lower(self)

    def solve(self, opts: sdpmod.SolverOptions | None = None, backend=None, coeff_tol: float = COEFF_TOL) -> SosResult:
        low = self.lower()
        opts = opts or sdpmod.SolverOptions()
        if low.trivially_infeasible:
            return SosResult(INFEASIBLE, None, None, math.inf, sdpmod.INFEASIBLE, low.trivially_infeasible)
        sol = sdpmod.solve(low.problem, opts, backend)
        status_map = {sdpmod.OPTIMAL: OPTIMAL, sdpmod.FEASIBLE: FEASIBLE, sdpmod.INFEASIBLE: INFEASIBLE,
                      sdpmod.UNBOUNDED: UNBOUNDED}
        status = status_map.get(sol.status, UNKNOWN)
        if self.objective is not None and status == UNKNOWN:
            # the best iterate is often a perfectly good (slightly suboptimal) certificate
            if all(sdpmod.passes_psd(x, opts.psd_tol) for x in sol.block_values):
                cert = low.back_map(sol)
                res = check_certificate(cert)
                if res <= coeff_tol:
                    vals = {v.id: cert.values[v.name] for v in self.vars}
                    obj = self.objective.substitute(vals).constant_term()
                    return SosResult(FEASIBLE, obj, cert, res, sol.status, "best iterate: " + sol.message)
            # classify with the slack formulation; a feasible point is still a valid certificate
            feas = _with_sense(low.problem, "feasibility")
            sol2 = sdpmod.solve(feas, opts, backend)
            if sol2.status == sdpmod.INFEASIBLE:
                status, sol = INFEASIBLE, sol2
            elif sol2.status == sdpmod.FEASIBLE:
                status, sol = FEASIBLE, sol2
        if status not in (OPTIMAL, FEASIBLE):
            return SosResult(status, None, None, math.inf, sol.status, sol.message)
        cert = low.back_map(sol)
        res = check_certificate(cert)
        obj = None
        if self.objective is not None:
            vals = {v.id: cert.values[v.name] for v in self.vars}
            obj = self.objective.substitute(vals).constant_term()
        if res > coeff_tol:
            return SosResult(UNKNOWN, obj, cert, res, sol.status, f"certificate residual {res:.3g} exceeds {coeff_tol:g}")
        return SosResult(status, obj, cert, res, sol.status, sol.message)


def _with_sense(p: sdpmod.SdpProblem, sense: str) -> sdpmod.SdpProblem:
    return sdpmod.SdpProblem(p.block_dims, p.n_free, p.A, p.F, p.b, p.C, p.c_free, sense)


def _indices(universe: Universe, vars) -> list[int]:
    out = []
    for v in vars:
        if isinstance(v, VarId):
            out.append(v.index)
        elif isinstance(v, int):
            out.append(v)
        elif isinstance(v, str):
            out.append(universe.index[v])
        elif isinstance(v, Polynomial):
            (m,) = v.terms
            out.append(m[0][0])
        else:
            raise TypeError(f"not a variable: {v!r}")
    return out


# -- lowering machinery --------------------------------------------------------------------

def _exps(monos: Sequence[Monomial], pos: Mapping[int, int], n: int) -> np.ndarray:
    E = np.zeros((len(monos), n), dtype=np.int64)
    for r, m in enumerate(monos):
        for i, e in m:
            E[r, pos[i]] = e
    return E


def _to_mono(row: np.ndarray, local: Sequence[int]) -> Monomial:
    return tuple((local[j], int(e)) for j, e in enumerate(row) if e)


def _poly_exps(p: Polynomial, pos, n):
    monos = list(p.terms)
    return _exps(monos, pos, n), np.array([p.terms[m] for m in monos], dtype=float)


def _pair_exps(B: np.ndarray) -> np.ndarray:
    nb = B.shape[0]
    return (B[:, None, :] + B[None, :, :]).reshape(nb * nb, B.shape[1])


def gram_basis_for_support(S: np.ndarray, groups: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Exponent rows of a Gram basis able to represent a polynomial with support in S."""
    n = S.shape[1]
    if S.shape[0] == 0:
        return np.zeros((0, n), dtype=np.int64)
    degs = S.sum(axis=1)
    lo, hi = int(math.ceil(degs.min() / 2)), int(degs.max() // 2)
    active = np.nonzero(S.max(axis=0) > 0)[0]
    cand = monomial_basis(list(active), hi, lo) if hi >= lo else []
    if not cand:
        return np.zeros((0, n), dtype=np.int64)
    B = _exps(cand, {i: i for i in range(n)}, n)
    dirs = [np.eye(n, dtype=np.int64)[j] for j in range(n)] + [np.ones(n, dtype=np.int64)] + list(groups)
    keep = np.ones(len(B), dtype=bool)
    for w in dirs:
        for sgn in (1, -1):
            ww = sgn * np.asarray(w)
            top = (S @ ww).max()
            keep &= 2 * (B @ ww) <= top
    B = B[keep]
    # a basis monomial whose square is absent from S and not produced by any other
    # pair has a zero diagonal Gram entry, hence a zero row
    Sset = {tuple(r) for r in S}
    changed = True
    while changed and len(B):
        changed = False
        sums: dict[tuple, int] = {}
        for a in range(len(B)):
            for b in range(a + 1, len(B)):
                key = tuple(B[a] + B[b])
                sums[key] = sums.get(key, 0) + 1
        good = np.array([tuple(2 * r) in Sset or tuple(2 * r) in sums for r in B])
        if not good.all():
            B = B[good]
            changed = True
    return B


@dataclass
class Lowered:
    program: SosProgram
    problem: sdpmod.SdpProblem
    local: list[int]
    var_blocks: dict[int, int]  # decision id -> PSD block (sos, nonneg scalars)
    var_free: dict[int, list[int]]  # decision id -> free columns
    con_blocks: dict[int, tuple[int, list[Monomial]]]  # constraint idx -> (block, basis)
    trivially_infeasible: str = ""

    def back_map(self, sol: sdpmod.SdpSolution) -> SosCertificate:
        prog = self.program
        U = prog.universe
        values: dict[str, Polynomial] = {}
        grams: dict[str, tuple[list[Monomial], np.ndarray]] = {}
        for v in prog.vars:
            if v.kind == "sos":
                G = sol.block_values[self.var_blocks[v.id]]
                G = (G + G.T) / 2
                values[v.name] = gram_polynomial(U, v.monomials, G)
                grams[v.name] = (list(v.monomials), G)
            elif v.kind == "scalar" and v.nonneg:
                val = float(sol.block_values[self.var_blocks[v.id]][0, 0])
                values[v.name] = Polynomial.constant(U, val)
                grams[v.name] = ([ONE], np.array([[val]]))
            else:
                cols = self.var_free[v.id]
                values[v.name] = Polynomial.from_monomials(U, v.monomials, sol.free_values[cols])
        byid = {v.id: values[v.name] for v in prog.vars}
        cons = []
        for ci, c in enumerate(prog.constraints):
            val = c.expr.substitute(byid)
            cons.append((c.name, c.kind, val))
            if c.kind == "sos":
                if ci in self.con_blocks:
                    blk, basis = self.con_blocks[ci]
                    G = sol.block_values[blk]
                    grams[c.name] = (basis, (G + G.T) / 2)
                else:
                    grams[c.name] = ([], np.zeros((0, 0)))
        return SosCertificate(U, values, grams, cons)


def gram_polynomial(U: Universe, basis: Sequence[Monomial], G: np.ndarray) -> Polynomial:
    from .poly import mono_mul

    acc: dict[Monomial, float] = {}
    nb = len(basis)
    for a in range(nb):
        for b in range(nb):
            if G[a, b] != 0.0:
                m = mono_mul(basis[a], basis[b])
                acc[m] = acc.get(m, 0.0) + float(G[a, b])
    return Polynomial(U, acc)


def _lower(prog: SosProgram) -> Lowered:
    idx: set[int] = set()
    for v in prog.vars:
        for m in v.monomials:
            idx.update(i for i, _ in m)
    for c in prog.constraints:
        idx.update(c.expr.const.var_indices())
        for q in c.expr.parts.values():
            idx.update(q.var_indices())
    local = sorted(idx)
    pos = {i: j for j, i in enumerate(local)}
    n = len(local)
    groups = []
    for g in prog.groups:
        w = np.zeros(n, dtype=np.int64)
        for i in g:
            if i in pos:
                w[pos[i]] = 1
        if w.any():
            groups.append(w)

    block_dims: list[int] = []
    var_blocks: dict[int, int] = {}
    var_free: dict[int, list[int]] = {}
    n_free = 0
    var_exps: dict[int, np.ndarray] = {}
    for v in prog.vars:
        E = _exps(v.monomials, pos, n)
        if v.kind == "sos":
            var_blocks[v.id] = len(block_dims)
            block_dims.append(len(v.monomials))
            var_exps[v.id] = _pair_exps(E)
        elif v.kind == "scalar" and v.nonneg:
            var_blocks[v.id] = len(block_dims)
            block_dims.append(1)
            var_exps[v.id] = E
        else:
            var_free[v.id] = list(range(n_free, n_free + len(v.monomials)))
            n_free += len(v.monomials)
            var_exps[v.id] = E

    # entries: (row, block or -1 for free, column, value)
    ent_rows, ent_blk, ent_col, ent_val = [], [], [], []
    rhs_parts = []
    con_blocks: dict[int, tuple[int, list[Monomial]]] = {}
    row0 = 0
    for ci, c in enumerate(prog.constraints):
        pieces = []  # (exps, blk, col, val)
        for k, q in c.expr.parts.items():
            v = prog.vars[k]
            qE, qc = _poly_exps(q, pos, n)
            VE = var_exps[k]
            nvar = VE.shape[0]
            exps = (qE[:, None, :] + VE[None, :, :]).reshape(len(qE) * nvar, n)
            vals = np.repeat(qc, nvar)
            if k in var_blocks:
                cols = np.tile(np.arange(nvar), len(qc))
                blk = np.full(len(vals), var_blocks[k])
            else:
                cols = np.tile(np.asarray(var_free[k]), len(qc))
                blk = np.full(len(vals), -1)
            pieces.append((exps, blk, cols, vals))
        cE, cc = _poly_exps(c.expr.const, pos, n)
        if c.kind == "sos":
            S_list = [cE] + [p[0] for p in pieces]
            S = np.unique(np.vstack(S_list), axis=0) if sum(len(s) for s in S_list) else np.zeros((0, n), dtype=np.int64)
            cdeg = c.expr.const.degree()
            ddeg = max((int(p[0].sum(axis=1).max()) for p in pieces if len(p[0])), default=-1)
            if cdeg % 2 and cdeg > ddeg:
                raise SosDegreeError(f"constraint {c.name!r} has odd degree {cdeg}")
            B = gram_basis_for_support(S, groups)
            if len(B):
                blk_id = len(block_dims)
                block_dims.append(len(B))
                basis = [_to_mono(r, local) for r in B]
                con_blocks[ci] = (blk_id, basis)
                PE = _pair_exps(B)
                pieces.append((PE, np.full(len(PE), blk_id), np.arange(len(PE)), -np.ones(len(PE))))
        all_exps = [p[0] for p in pieces] + [cE]
        allE = np.vstack(all_exps) if any(len(a) for a in all_exps) else np.zeros((0, n), dtype=np.int64)
        if len(allE) == 0:
            continue
        uniq, inv = np.unique(allE, axis=0, return_inverse=True)
        inv = inv.ravel()
        off = 0
        for exps, blk, cols, vals in pieces:
            k = len(exps)
            ent_rows.append(row0 + inv[off:off + k])
            ent_blk.append(blk)
            ent_col.append(cols)
            ent_val.append(vals)
            off += k
        rhs = np.zeros(len(uniq))
        np.add.at(rhs, inv[off:off + len(cE)], -cc)
        rhs_parts.append(rhs)
        row0 += len(uniq)

    m = row0
    rows = np.concatenate(ent_rows) if ent_rows else np.zeros(0, dtype=int)
    blks = np.concatenate(ent_blk) if ent_blk else np.zeros(0, dtype=int)
    cols = np.concatenate(ent_col) if ent_col else np.zeros(0, dtype=int)
    vals = np.concatenate(ent_val) if ent_val else np.zeros(0)
    b = np.concatenate(rhs_parts) if rhs_parts else np.zeros(0)

    # drop rows with no decision entries; a nonzero rhs there is a contradiction
    used = np.zeros(m, dtype=bool)
    nzv = vals != 0
    used[rows[nzv]] = True
    bad = np.nonzero(~used & (np.abs(b) > 1e-12))[0]
    trivial = ""
    if len(bad):
        trivial = "an SOS or zero requirement has a fixed coefficient that cannot be matched"
    remap = -np.ones(m, dtype=int)
    remap[used] = np.arange(int(used.sum()))
    rows = remap[rows]
    keep = rows >= 0
    rows, blks, cols, vals = rows[keep], blks[keep], cols[keep], vals[keep]
    b = b[used]
    m = len(b)
    if m == 0:
        # nothing to match: add a harmless row tying the first variable to itself
        b = np.zeros(1)
        m = 1

    A = []
    for bi, nb in enumerate(block_dims):
        sel = blks == bi
        A.append(sp.csr_matrix((vals[sel], (rows[sel], cols[sel])), shape=(m, nb * nb)))
    sel = blks == -1
    F = sp.csr_matrix((vals[sel], (rows[sel], cols[sel])), shape=(m, n_free))

    C = [np.zeros((nb, nb)) for nb in block_dims]
    cf = np.zeros(n_free)
    sense = "feasibility"
    if prog.objective is not None:
        sense = "minimize"
        for k, q in prog.objective.parts.items():
            coef = q.constant_term()
            if k in var_blocks:
                C[var_blocks[k]][0, 0] += coef
            else:
                cf[var_free[k][0]] += coef
    if not block_dims:
        # pure linear program over free scalars: add a dummy 1x1 block
        block_dims.append(1)
        A.append(sp.csr_matrix((m, 1)))
        C.append(np.zeros((1, 1)))
    problem = sdpmod.SdpProblem(block_dims, n_free, A, F, b, C, cf, sense)
    return Lowered(prog, problem, local, var_blocks, var_free, con_blocks, trivial)


# -- certificate checking ---------------------------------------------------------------------

def check_certificate(cert: SosCertificate, psd_tol: float = 1e-6) -> float:
    """Max coefficient mismatch of every requirement; ``inf`` if a Gram matrix is not PSD."""
    worst = 0.0
    for name, kind, val in cert.constraints:
        if kind == "zero":
            worst = max(worst, val.max_abs_coeff())
            continue
        basis, G = cert.grams[name]
        if len(basis) == 0:
            worst = max(worst, val.max_abs_coeff())
            continue
        worst = max(worst, (val - gram_polynomial(cert.universe, basis, G)).max_abs_coeff())
    for name, (basis, G) in cert.grams.items():
        if G.size and not _psd_ok(G, psd_tol):
            return math.inf
    return worst


def _psd_ok(G: np.ndarray, tol: float) -> bool:
    scale = max(1.0, float(np.max(np.abs(np.diag(G)))))
    return float(np.linalg.eigvalsh((G + G.T) / 2)[0]) >= -tol * scale


# -- convenience front ends ----------------------------------------------------------------------

def default_multiplier_degree(target_degree: int, k_degree: int, cap: int = 4) -> int:
    d = max(0, target_degree - k_degree)
    d += d % 2
    return min(d, cap)


@dataclass
class PutinarCertificate:
    sigma0: Polynomial
    multipliers: list[Polynomial]
    result: SosResult


def prove_nonneg_on(p: Polynomial, domain: Sequence[tuple[Polynomial, str]],
                    multiplier_degrees: Sequence[int] | None = None,
                    opts: sdpmod.SolverOptions | None = None) -> SosResult:
    """Search p - sum s_j k_j - sum l_j h_j = s_0 with s_j SOS and l_j free.

    ``domain`` items are ``(k, ">=0")`` or ``(k, "=0")``."""
    U = p.universe
    prog = SosProgram(U)
    vars_ = sorted(set(p.var_indices()).union(*[k.var_indices() for k, _ in domain]) if domain else p.var_indices())
    expr = SosExpr.lift(U, p)
    for j, (k, sense) in enumerate(domain):
        deg = multiplier_degrees[j] if multiplier_degrees is not None else default_multiplier_degree(p.degree(), k.degree())
        if sense in (">=0", "ge"):
            s = prog.sos_poly(f"sigma{j + 1}", vars_, deg if deg % 2 == 0 else deg + 1)
        elif sense in ("=0", "eq"):
            s = prog.free_poly(f"lambda{j + 1}", vars_, deg)
        else:
            raise ValueError(f"unknown domain sense {sense!r}")
        expr = expr - s * k
    prog.add_sos(expr, "sigma0")
    return prog.solve(opts)


def minimize_scalar(prog: SosProgram, objective_var: DecisionVar,
                    opts: sdpmod.SolverOptions | None = None) -> SosResult:
    if objective_var.kind != "scalar":
        raise ValueError("objective must be a scalar decision variable")
    prog.minimize(objective_var.expr)
    return prog.solve(opts)


def margin(universe: Universe, vars: Sequence, degree: int = 2, eps: float = EPS_MARGIN) -> Polynomial:
    """eps * (sum x^2)^(degree/2), the polynomial strictness margin."""
    from .poly import sum_of_squares_norm

    return eps * sum_of_squares_norm(universe, _indices(universe, vars), degree // 2)
