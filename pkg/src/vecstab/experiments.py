"""Pipeline steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import certify as cf
from . import sim
from .audit import CertificateRegistry, radial_level_points
from .lyap import LyapunovFn, bound_constants, self_decay_rate, synth_quadratic_lf
from .model import Network
from .sdp import SolverOptions

DEFAULT_GRID = tuple(round(0.1 * k, 10) for k in range(1, 10))
DECAY_GRID = tuple(round(0.05 * k, 10) for k in range(1, 21))
MODES = ("single-traditional", "single-direct", "multiple-sequential", "multiple-parallel")


def synth_lfs(net: Network, opts: SolverOptions | None = None,
              registry: CertificateRegistry | None = None) -> dict[int, LyapunovFn]:
    return {i: synth_quadratic_lf(net, i, opts, registry) for i in net.ids}


def decay_table(net: Network, lfs: Mapping[int, LyapunovFn], grid: Sequence[float] = DECAY_GRID,
                opts: SolverOptions | None = None, registry: CertificateRegistry | None = None):
    """alpha_i(gamma) per subsystem over the grid, plus solver statuses."""
    alphas, statuses = {}, {}
    for i in net.ids:
        res = [self_decay_rate(lfs[i], net.subsystem(i).f, g, opts, registry, f"decay{i}@{g:g}") for g in grid]
        alphas[i] = [r.alpha for r in res]
        statuses[i] = [r.status for r in res]
    return alphas, statuses


def is_monotone_nonincreasing(values: Sequence[float], tol: float = 0.0) -> bool:
    return all(b <= a + tol for a, b in zip(values, values[1:]))


# -- single comparison systems as full certification runs ----------------------------------------

def floor_levels(v0: Mapping[int, float], floor: float) -> dict[int, float]:
    return {i: max(float(v), floor) for i, v in v0.items()}


def certify_single(net: Network, lfs: Mapping[int, LyapunovFn], v0: Mapping[int, float], method: str,
                   popts: cf.ProtocolOptions, registry: CertificateRegistry | None = None) -> cf.CertificationReport:
    """One comparison system on the envelope given by v0 (zero entries floored at the bisection tolerance)."""
    gammas = floor_levels(v0, popts.tol)
    ids = net.ids
    diag: dict = {}
    if method == "single-direct":
        res = cf.direct_single_cs(net, lfs, gammas, "feasibility", popts.sdp, registry, popts.jobs)
        ok = res.feasible
        diag["statuses"] = {str(i): s for i, s in sorted(res.statuses.items())}
        matrix = res.matrix
    elif method == "single-traditional":
        gamma = max(gammas.values())
        bc = bound_constants(net, lfs, gamma, popts.sdp, registry)
        diag["constants_ok"] = bc.ok()
        matrix = None
        ok = False
        if bc.ok():
            try:
                At = cf.traditional_single_cs(net, lfs, bc)
                matrix = cf.traditional_implied(At, _common_d(lfs))
                gammas = {i: gamma for i in ids}
                matrix.domain_gammas = gammas
                ok = cf.gershgorin_verdict(matrix, gammas).rows_ok
            except (cf.CertifyError, ValueError) as exc:
                diag["error"] = str(exc)
    else:
        raise ValueError(f"{method!r} is not a single comparison mode")
    if matrix is not None:
        gv = cf.gershgorin_verdict(matrix, gammas)
        diag["row_sums"] = {str(i): float(s) for i, s in zip(ids, matrix.row_sums())}
        diag["max_real_eig"] = gv.max_real_eig
    levels = [dict(gammas)] + ([{i: 0.0 for i in ids}] if ok else [])
    closure = {"kind": method, "feasible": ok, "matrix": matrix.entries.tolist() if matrix is not None else None}
    return cf.CertificationReport(method, dict(v0), dict(gammas), [dict(v0)], levels,
                                  [{i: None for i in ids}] if ok else [], [{i: {} for i in ids}] if ok else [],
                                  "ExponentiallyStable" if ok else "Inconclusive", levels[-1], [], diag, closure)


def _common_d(lfs: Mapping[int, LyapunovFn]) -> int:
    ds = {lf.d for lf in lfs.values()}
    if len(ds) != 1:
        raise cf.CertifyError("the traditional construction needs a common d")
    return ds.pop()


def run_mode(net, lfs, v0, mode: str, popts: cf.ProtocolOptions, registry=None) -> cf.CertificationReport:
    if mode in ("single-traditional", "single-direct"):
        return certify_single(net, lfs, v0, mode, popts, registry)
    if mode in ("multiple-sequential", "multiple-parallel"):
        popts.mode = mode.split("-")[1]
        return cf.run_protocol(net, lfs, v0, popts, registry)
    raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")


# -- sweeps ----------------------------------------------------------------------------------------

@dataclass
class SweepRow:
    gamma: float
    method: str
    status: str
    max_row_sum: float | None
    max_real_eig: float | None
    certified: list[int]
    total: int

    @property
    def all_certified(self) -> bool:
        return len(self.certified) == self.total

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "method": self.method,
            "status": self.status,
            "max_row_sum": "" if self.max_row_sum is None else self.max_row_sum,
            "max_real_eig": "" if self.max_real_eig is None else self.max_real_eig,
            "certified": ";".join(map(str, self.certified)),
            "all_certified": int(self.all_certified),
        }


def sweep(net: Network, lfs: Mapping[int, LyapunovFn], grid: Sequence[float] = DEFAULT_GRID,
          multiple: str = "sequential", opts: SolverOptions | None = None, tol: float = cf.BISECT_TOL,
          registry: CertificateRegistry | None = None, methods: Sequence[str] = ("traditional", "direct", "multiple"),
          jobs: int = 1) -> list[SweepRow]:
    """Per uniform level: traditional implied matrix, direct minimum-row-sum matrix, first multiple-CS step."""
    ids = net.ids
    rows = []
    for g in grid:
        gam = {i: g for i in ids}
        if "traditional" in methods:
            bc = bound_constants(net, lfs, g, opts, registry)
            if bc.ok():
                try:
                    # row sums are reported even when the transform's hypothesis fails
                    A = cf.traditional_implied(cf.traditional_single_cs(net, lfs, bc), _common_d(lfs), check=False)
                    rs = A.row_sums()
                    rows.append(SweepRow(g, "traditional", "ok", float(rs.max()), cf.gershgorin_verdict(A).max_real_eig,
                                         [i for i, s in zip(ids, rs) if s < 0], len(ids)))
                except (cf.CertifyError, ValueError) as exc:
                    rows.append(SweepRow(g, "traditional", f"failed: {exc}", None, None, [], len(ids)))
            else:
                bad = sorted(k for k, s in bc.status.items() if s not in ("Optimal", "Feasible"))
                rows.append(SweepRow(g, "traditional", "constants unavailable: " + ",".join(bad[:4]), None, None, [], len(ids)))
        if "direct" in methods:
            res = cf.direct_single_cs(net, lfs, gam, "minimize-rowsum", opts, registry, jobs, invariance=False,
                                      label=f"sweep-direct@{g:g}")
            if res.feasible:
                rs = res.matrix.row_sums()
                rows.append(SweepRow(g, "direct", "ok", float(rs.max()), cf.gershgorin_verdict(res.matrix).max_real_eig,
                                     [i for i, s in zip(ids, rs) if s < 0], len(ids)))
            else:
                rows.append(SweepRow(g, "direct", "failed rows " + ";".join(map(str, res.failed())), None, None, [],
                                     len(ids)))
        if "multiple" in methods:
            dec = cf.first_step_decreases(net, lfs, g, multiple, opts, tol, registry)
            rows.append(SweepRow(g, f"multiple-{multiple}", "ok", None, None, [i for i in ids if dec[i]], len(ids)))
    return rows


def max_certified(rows: Sequence[SweepRow], method: str, subsystem: int | None = None) -> float:
    """Largest grid level certified for all subsystems (or one), 0 when none."""
    best = 0.0
    for r in rows:
        if r.method != method:
            continue
        ok = r.all_certified if subsystem is None else subsystem in r.certified
        if ok:
            best = max(best, r.gamma)
    return best


# -- validation by simulation ------------------------------------------------------------------------

@dataclass
class ValidationResult:
    rows: list[dict]
    boundary: dict[int, dict]
    matrix_available: bool
    sample_traj: sim.Trajectory | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r["ok"] for r in self.rows) and all(b["violations"] == 0 for b in self.boundary.values())


def envelope_initial_states(net, lfs, gammas, count, seed) -> np.ndarray:
    """Levels uniform in [0, gamma_i]; every other state has one subsystem placed on its boundary."""
    rng = np.random.default_rng(seed)
    X = np.zeros((count, len(net.universe)))
    ids = net.ids
    on_edge = rng.integers(0, len(ids), size=count)
    for a, i in enumerate(ids):
        idx = net.state_indices(i)
        levels = rng.uniform(0.0, gammas[i], size=count)
        pin = (on_edge == a) & (np.arange(count) % 2 == 0)
        levels[pin] = gammas[i]
        X[:, idx] = radial_level_points(lfs[i].V, idx, levels, rng)
    return X


def boundary_check(net, lfs, gammas, samples: int = 10_000, seed: int = 0) -> dict[int, dict]:
    """Sample dV_i/dt on {V_i = gamma_i} inside the neighbors' sets; count points where it is >= 0."""
    out = {}
    rng = np.random.default_rng(seed)
    n = len(net.universe)
    for i in net.ids:
        if gammas[i] <= 0:
            out[i] = {"violations": 0, "max_vdot": None}
            continue
        vd = cf.vdot(net, lfs, i)
        X = np.zeros((samples, n))
        for j in net.neighborhoods[i]:
            idx = net.state_indices(j)
            lv = np.full(samples, gammas[i]) if j == i else rng.uniform(0.0, gammas[j], size=samples)
            X[:, idx] = radial_level_points(lfs[j].V, idx, lv, rng)
        vals = vd.evaluate_array(X)
        out[i] = {"violations": int((vals >= 0).sum()), "max_vdot": float(vals.max())}
    return out


def validate_report(net: Network, lfs: Mapping[int, LyapunovFn], report: Mapping, count: int = 100, seed: int = 0,
                    T: float = sim.T_END, dt: float = sim.DT, opts: SolverOptions | None = None,
                    stride: int = 100, boundary_samples: int = 10_000) -> ValidationResult:
    """Simulate from the report's envelope; check invariance, the comparison bound and final decay."""
    ids = net.ids
    g0 = report.get("gamma0")
    if count <= 0:
        return ValidationResult([], {}, False, None, ["no trajectories requested"])
    if not g0:
        return ValidationResult([], {}, False, None, ["report has no envelope"])
    gammas = {i: float(g0[str(i)]) for i in ids}
    exp_stable = report.get("verdict") == "ExponentiallyStable"
    X0 = envelope_initial_states(net, lfs, gammas, count, seed)
    A = None
    positive = {i: max(v, cf.BISECT_TOL) for i, v in gammas.items()}
    if all(v <= 1.0 for v in positive.values()):
        res = cf.direct_single_cs(net, lfs, positive, "feasibility", opts)
        if res.feasible:
            A = res.matrix.entries
    notes = [] if A is not None else ["no single comparison matrix on this envelope; bound check skipped"]
    bc = sim.check_comparison_bound(net, lfs, X0, A if A is not None else np.zeros((len(ids), len(ids))),
                                    positive if A is not None else gammas, T, dt, envelope=gammas, stride=stride)
    rows = []
    for b in range(count):
        excess = float(bc.envelope_excess[b])
        viol = float(bc.violation[b]) if A is not None else None
        final = float(bc.final_V[b].max())
        ok = excess <= 1e-6 and (viol is None or viol <= 1e-4) and (not exp_stable or final < 1e-3)
        rows.append({"trajectory": b, "max_envelope_excess": excess,
                     "exit_time": "" if not math.isfinite(bc.exit_time[b]) else float(bc.exit_time[b]),
                     "bound_violation": "" if viol is None else viol, "final_max_V": final, "ok": ok})
    bd = boundary_check(net, lfs, gammas, boundary_samples, seed)
    return ValidationResult(rows, bd, A is not None, bc.trajectory, notes)
