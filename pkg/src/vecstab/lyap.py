"""Isolated-subsystem Lyapunov functions, self-decay rates and bound constants."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import sos
from .audit import CertificateRegistry, Claim, LevelBand
from .model import Network, jacobian_at_origin
from .poly import Polynomial, Universe, lie_derivative, parse, sum_of_squares_norm
from .sdp import SolverOptions

GAMMA_CAP = 1e3
GAMMA_FLOOR = 1e-4
BISECT_TOL = 1e-3


class LyapunovError(RuntimeError):
    pass


@dataclass
class LyapunovFn:
    subsystem: int
    state_vars: tuple[str, ...]
    V: Polynomial
    d: int = 2
    scaling: dict = field(default_factory=dict)

    def var_indices(self) -> list[int]:
        return [self.V.universe.index[v] for v in self.state_vars]

    def to_json(self) -> dict:
        return {
            "subsystem": self.subsystem,
            "state_vars": list(self.state_vars),
            "V": self.V.to_text(),
            "d": self.d,
            "scaling": self.scaling,
        }

    @classmethod
    def from_json(cls, doc: Mapping, universe: Universe) -> "LyapunovFn":
        V = parse(doc["V"], universe)
        d = int(doc.get("d", V.min_degree()))
        if d <= 0 or d % 2:
            raise LyapunovError(f"subsystem {doc['subsystem']}: d must be a positive even integer")
        return cls(int(doc["subsystem"]), tuple(doc["state_vars"]), V, d, dict(doc.get("scaling", {})))


def dumps_lfs(lfs: Mapping[int, LyapunovFn]) -> str:
    return json.dumps({"lfs": [lfs[i].to_json() for i in sorted(lfs)]}, indent=2) + "\n"


def loads_lfs(text: str, universe: Universe) -> dict[int, LyapunovFn]:
    doc = json.loads(text)
    return {int(e["subsystem"]): LyapunovFn.from_json(e, universe) for e in doc["lfs"]}


def _vars_of(net: Network, i: int) -> list[int]:
    return net.state_indices(i)


def _level_program(U: Universe, idx: Sequence[int], target: Polynomial, V: Polynomial, gamma: float,
                   mult_degree: int, tight: bool, extra=None):
    """target - sigma*(gamma - V) SOS with sigma SOS over idx."""
    prog = sos.SosProgram(U)
    sigma = prog.sos_poly("sigma", idx, mult_degree, min_degree=1 if tight else 0)
    expr = sos.SosExpr.lift(U, target) - sigma * (gamma - V)
    if extra is not None:
        expr = extra(prog, expr)
    prog.add_sos(expr, "main")
    return prog


def decrease_certificate(net: Network, i: int, Vt: Polynomial, gamma: float,
                         opts: SolverOptions | None = None) -> sos.SosResult:
    """-dV/dt - eps|x|^2 - sigma (gamma - V) SOS: decrease on {V <= gamma}."""
    U = net.universe
    idx = _vars_of(net, i)
    Vdot = lie_derivative(Vt, list(net.subsystem(i).f), idx)
    target = -Vdot - sos.margin(U, idx, 2)
    deg = sos.default_multiplier_degree(max(target.degree(), 2), Vt.degree())
    prog = _level_program(U, idx, target, Vt, gamma, max(deg, 2), tight=True)
    return prog.solve(opts)


def synth_quadratic_lf(net: Network, i: int, opts: SolverOptions | None = None,
                       registry: CertificateRegistry | None = None, cap: float = GAMMA_CAP,
                       tol: float = BISECT_TOL) -> LyapunovFn:
    """Quadratic LF from the linearization, scaled so its unit level set is the ROA estimate."""
    J = jacobian_at_origin(net, i)
    if np.max(np.linalg.eigvals(J).real) >= 0:
        raise LyapunovError(f"subsystem {i}: isolated Jacobian is not Hurwitz")
    P = solve_continuous_lyapunov(J.T, -np.eye(J.shape[0]))
    P = (P + P.T) / 2
    U = net.universe
    idx = _vars_of(net, i)
    xs = [Polynomial(U, {((k, 1),): 1.0}) for k in idx]
    Vt = Polynomial.zero(U)
    for a in range(len(xs)):
        for b in range(len(xs)):
            Vt = Vt + P[a, b] * xs[a] * xs[b]

    capped = False
    best = decrease_certificate(net, i, Vt, cap, opts)
    if best.feasible:
        lo, capped = cap, True
    else:
        lo, hi = 0.0, cap
        best = None
        # geometric bracketing first keeps the bisection short
        g = 1.0
        while g < cap:
            r = decrease_certificate(net, i, Vt, g, opts)
            if not r.feasible:
                hi = g
                break
            lo, best = g, r
            g *= 2.0
        if best is None:
            g = 1.0
            while g >= GAMMA_FLOOR:
                r = decrease_certificate(net, i, Vt, g, opts)
                if r.feasible:
                    lo, best = g, r
                    break
                hi = g
                g /= 2.0
            if best is None:
                raise LyapunovError(f"subsystem {i}: level-set scaling fell below {GAMMA_FLOOR:g}")
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            r = decrease_certificate(net, i, Vt, mid, opts)
            if r.feasible:
                lo, best = mid, r
            else:
                hi = mid
    gamma_max = lo
    V = Vt / gamma_max
    if registry is not None:
        target = -lie_derivative(Vt, list(net.subsystem(i).f), idx) - sos.margin(U, idx, 2)
        registry.add(f"lf{i}/decrease", best.certificate, Claim(target, [LevelBand(Vt, idx, 0.0, gamma_max)]))
    return LyapunovFn(i, net.subsystem(i).state_vars, V, 2,
                      {"gamma_max": gamma_max, "capped": capped, "method": "quadratic", "P": P.tolist()})


# -- self-decay ------------------------------------------------------------------------------

@dataclass
class DecayResult:
    alpha: float
    status: str
    raw: float | None
    result: sos.SosResult | None


def self_decay_rate(lf: LyapunovFn, f: Sequence[Polynomial], gamma: float, opts: SolverOptions | None = None,
                    registry: CertificateRegistry | None = None, label: str = "") -> DecayResult:
    """Largest alpha >= 0 with dV/dt <= -alpha V on the boundary {V = gamma}.

    alpha enters affinely, so it is maximized directly rather than bisected.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    U = lf.V.universe
    idx = lf.var_indices()
    Vdot = lie_derivative(lf.V, list(f), idx)
    prog = sos.SosProgram(U)
    alpha = prog.scalar("alpha")
    deg = sos.default_multiplier_degree(Vdot.degree(), lf.V.degree())
    lam = prog.free_poly("lambda", idx, deg)
    prog.add_sos(-Vdot - alpha * lf.V - lam * (gamma - lf.V), "main")
    prog.minimize(-1.0 * alpha)
    r = prog.solve(opts)
    if not r.feasible:
        status = "Unknown" if r.status in (sos.UNKNOWN, sos.UNBOUNDED) else r.status
        return DecayResult(0.0 if status == sos.INFEASIBLE else math.nan, status, None, r)
    a = r.scalar("alpha")
    if registry is not None:
        registry.add(label or f"decay{lf.subsystem}@{gamma:g}", r.certificate,
                     Claim(-Vdot - a * lf.V, [LevelBand(lf.V, idx, gamma, gamma)]))
    return DecayResult(max(a, 0.0), r.status, a, r)


# -- bound constants -------------------------------------------------------------------------

@dataclass
class BoundConstants:
    gamma: float
    d: dict[int, int]
    eta1: dict[int, float]
    eta2: dict[int, float]
    eta3: dict[int, float]
    zeta: dict[tuple[int, int], float]
    status: dict[str, str] = field(default_factory=dict)

    def ok(self) -> bool:
        return all(s in (sos.OPTIMAL, sos.FEASIBLE) for s in self.status.values())


def _norm_d(U, idx, d):
    return sum_of_squares_norm(U, idx, d // 2)


def _opt_on_level(U, idx, V, gamma, target, minimize, opts):
    """Optimize scalar t subject to target(t) >= 0 on {V <= gamma}."""
    prog = sos.SosProgram(U)
    t = prog.scalar("t")
    expr = target(t)
    deg = sos.default_multiplier_degree(max(2, _expr_degree(expr)), V.degree())
    sigma = prog.sos_poly("sigma", idx, max(deg, 2), min_degree=1)
    prog.add_sos(expr - sigma * (gamma - V), "main")
    prog.minimize(t if minimize else -1.0 * t)
    return prog.solve(opts)


def _expr_degree(e: sos.SosExpr) -> int:
    return max([e.const.degree()] + [q.degree() for q in e.parts.values()])


def eta_constants(lf: LyapunovFn, f: Sequence[Polynomial], gamma: float, opts: SolverOptions | None = None,
                  registry: CertificateRegistry | None = None) -> tuple[dict, dict]:
    U = lf.V.universe
    idx = lf.var_indices()
    nd = _norm_d(U, idx, lf.d)
    Vdot = lie_derivative(lf.V, list(f), idx)
    V = lf.V
    out, st = {}, {}
    # name -> (polynomial that must be >= 0 given the scalar t, minimize t?)
    specs = {
        "eta1": (lambda t: V - t * nd, False),
        "eta2": (lambda t: t * nd - V, True),
        "eta3": (lambda t: -Vdot - t * nd, False),
    }
    for name, (target, minimize) in specs.items():
        r = _opt_on_level(U, idx, V, gamma, target, minimize, opts)
        st[name] = r.status
        out[name] = r.scalar("t") if r.feasible else math.nan
        if registry is not None and r.feasible:
            registry.add(f"{name}[{lf.subsystem}]@{gamma:g}", r.certificate,
                         Claim(target(out[name]), [LevelBand(V, idx, 0.0, gamma)]))
    return out, st


def bilinear_basis(idx_i: Sequence[int], idx_j: Sequence[int]):
    return [tuple(sorted(((a, 1), (b, 1)))) for a in idx_i for b in idx_j]


def zeta_constant(lf_i: LyapunovFn, lf_j: LyapunovFn, g: Sequence[Polynomial], gamma: float,
                  opts: SolverOptions | None = None, registry: CertificateRegistry | None = None):
    """Smallest zeta with |dV_i . g_ij| <= zeta |x_i|^(d-1) |x_j| on D_i x D_j (squared form)."""
    U = lf_i.V.universe
    ii, jj = lf_i.var_indices(), lf_j.var_indices()
    h = lie_derivative(lf_i.V, list(g), ii)
    if h.is_zero():
        return 0.0, sos.OPTIMAL
    lhs = sum_of_squares_norm(U, ii, lf_i.d - 1) * sum_of_squares_norm(U, jj, 1)
    prog = sos.SosProgram(U, groups=[ii, jj])
    t = prog.scalar("t")
    basis = bilinear_basis(ii, jj)
    si = prog.sos_poly("sigma_i", ii + jj, 0, basis=basis)
    sj = prog.sos_poly("sigma_j", ii + jj, 0, basis=basis)
    prog.add_sos(t * lhs - h * h - si * (gamma - lf_i.V) - sj * (gamma - lf_j.V), "main")
    prog.minimize(t.expr)
    r = prog.solve(opts)
    if not r.feasible:
        return math.nan, r.status
    tval = r.scalar("t")
    if registry is not None:
        registry.add(f"zeta[{lf_i.subsystem},{lf_j.subsystem}]@{gamma:g}", r.certificate,
                     Claim(tval * lhs - h * h, [LevelBand(lf_i.V, ii, 0.0, gamma), LevelBand(lf_j.V, jj, 0.0, gamma)]))
    return math.sqrt(max(tval, 0.0)), r.status


def bound_constants(net: Network, lfs: Mapping[int, LyapunovFn], gamma: float,
                    opts: SolverOptions | None = None, registry: CertificateRegistry | None = None) -> BoundConstants:
    e1, e2, e3, z, st, dd = {}, {}, {}, {}, {}, {}
    for i in net.ids:
        lf = lfs[i]
        if lf.d % 2:
            raise LyapunovError("bound constants need an even d")
        vals, s = eta_constants(lf, net.subsystem(i).f, gamma, opts, registry)
        e1[i], e2[i], e3[i], dd[i] = vals["eta1"], vals["eta2"], vals["eta3"], lf.d
        for k, v in s.items():
            st[f"{k}[{i}]"] = v
        for j, g in net.incoming(i).items():
            z[i, j], st[f"zeta[{i},{j}]"] = zeta_constant(lf, lfs[j], g, gamma, opts, registry)
    return BoundConstants(gamma, dd, e1, e2, e3, z, st)
