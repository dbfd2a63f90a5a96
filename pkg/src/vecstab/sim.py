"""Fixed-step RK4 simulation of the coupled network, used to check certificates empirically."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .audit import radial_level_points
from .lyap import LyapunovFn
from .model import Network
from .poly import Polynomial

DT = 1e-3
T_END = 50.0
BLOWUP = 1e6


class SimulationError(RuntimeError):
    def __init__(self, msg: str, step: int):
        super().__init__(f"{msg} at step {step}")
        self.step = step


class CompiledPolys:
    """Evaluates a list of polynomials on a batch of points with one gather-multiply per factor."""

    def __init__(self, polys: Sequence[Polynomial], n: int):
        monos: dict = {}
        for p in polys:
            for m in p.terms:
                monos.setdefault(m, len(monos))
        deg = max((sum(e for _, e in m) for m in monos), default=0)
        self.factors = np.full((len(monos), max(deg, 1)), n, dtype=np.intp)
        for m, k in monos.items():
            flat = [v for v, e in m for _ in range(e)]
            self.factors[k, : len(flat)] = flat
        self.coef = np.zeros((len(monos), len(polys)))
        for c, p in enumerate(polys):
            for m, a in p.terms.items():
                self.coef[monos[m], c] = a
        self.n = n

    def __call__(self, X: np.ndarray) -> np.ndarray:
        Xa = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        M = Xa[:, self.factors[:, 0]]
        for d in range(1, self.factors.shape[1]):
            M = M * Xa[:, self.factors[:, d]]
        return M @ self.coef


def compile_field(net: Network, reverse: bool = False, only: int | None = None) -> CompiledPolys:
    n = len(net.universe)
    fld = net.vector_field()
    if only is not None:
        idx = net.state_indices(only)
        s = net.subsystem(only)
        fld = [Polynomial.zero(net.universe)] * n
        for k, p in zip(idx, s.f):
            fld[k] = p
    if reverse:
        fld = [-p for p in fld]
    return CompiledPolys(fld, n)


def compile_lfs(net: Network, lfs: Mapping[int, LyapunovFn]) -> CompiledPolys:
    return CompiledPolys([lfs[i].V for i in net.ids], len(net.universe))


def rk4_step(f: Callable[[np.ndarray], np.ndarray], X: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(X)
    k2 = f(X + 0.5 * dt * k1)
    k3 = f(X + 0.5 * dt * k2)
    k4 = f(X + dt * k3)
    return X + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Trajectory:
    """Batch of trajectories on a shared uniform grid (recorded every ``stride`` steps)."""

    times: np.ndarray
    states: np.ndarray  # (samples, batch, n)
    V: np.ndarray | None  # (samples, batch, m)
    dt: float
    stride: int
    v_max: np.ndarray | None = None  # (batch, m) running max over every step, not just recorded ones

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path: str | Path, names: Sequence[str], ids: Sequence[int] = (), member: int = 0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *names, *(f"V_{i}" for i in ids)])
            for k, t in enumerate(self.times):
                row = [f"{t:.6g}", *(f"{v:.10g}" for v in self.states[k, member])]
                if self.V is not None:
                    row += [f"{v:.10g}" for v in self.V[k, member]]
                w.writerow(row)


def integrate(net: Network, x0: np.ndarray, T: float = T_END, dt: float = DT,
              lfs: Mapping[int, LyapunovFn] | None = None, stride: int = 1,
              on_step: Callable[[int, np.ndarray], None] | None = None,
              field_fn: CompiledPolys | None = None) -> Trajectory:
    """RK4 of the coupled dynamics from one (n,) or a batch (B, n) of initial states."""
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    f = field_fn or compile_field(net)
    Vf = compile_lfs(net, lfs) if lfs is not None else None
    steps = int(round(T / dt))
    times, states, Vs = [0.0], [X.copy()], []
    vmax = None
    if Vf is not None:
        v = Vf(X)
        Vs.append(v)
        vmax = v.copy()
    for k in range(1, steps + 1):
        X = rk4_step(f, X, dt)
        if not np.all(np.isfinite(X)) or np.abs(X).max() > BLOWUP:
            raise SimulationError("non-finite or exploding state", k)
        if Vf is not None:
            v = Vf(X)
            np.maximum(vmax, v, out=vmax)
        if on_step is not None:
            on_step(k, X)
        if k % stride == 0 or k == steps:
            times.append(k * dt)
            states.append(X.copy())
            if Vf is not None:
                Vs.append(v)
    return Trajectory(np.array(times), np.array(states), np.array(Vs) if Vs else None, dt, stride, vmax)


def step_halving_error(net: Network, x0: np.ndarray, T: float, dt: float = DT) -> float:
    a = integrate(net, x0, T, dt, stride=10**9).final
    b = integrate(net, x0, T, dt / 2, stride=10**9).final
    return float(np.max(np.abs(a - b)))


def sample_disturbance(net: Network, lfs: Mapping[int, LyapunovFn], v0: Mapping[int, float],
                       seed: int) -> np.ndarray:
    """x0 with V_i(x0_i) = v0_i along a random direction per subsystem."""
    rng = np.random.default_rng(seed)
    x0 = np.zeros(len(net.universe))
    for i in net.ids:
        if not 0.0 <= v0[i] < 1.0:
            raise ValueError(f"disturbance level for subsystem {i} must lie in [0, 1)")
        idx = net.state_indices(i)
        x0[idx] = radial_level_points(lfs[i].V, idx, np.array([v0[i]]), rng)[0]
    return x0


def sample_in_envelope(net: Network, lfs: Mapping[int, LyapunovFn], gammas: Mapping[int, float],
                       count: int, seed: int) -> np.ndarray:
    """Initial states with V_i uniform in [0, gamma_i] (radial sampling per subsystem)."""
    rng = np.random.default_rng(seed)
    X = np.zeros((count, len(net.universe)))
    for i in net.ids:
        idx = net.state_indices(i)
        levels = rng.uniform(0.0, gammas[i], size=count)
        X[:, idx] = radial_level_points(lfs[i].V, idx, levels, rng)
    return X


@dataclass
class BoundCheck:
    violation: np.ndarray  # (batch,) max_i,t V_i - r_i while inside the domain
    exit_time: np.ndarray  # (batch,) first time the domain is left, inf if never
    envelope_excess: np.ndarray  # (batch,) max_i,t V_i - envelope_i over the whole run
    final_V: np.ndarray  # (batch, m)
    trajectory: Trajectory | None = None

    @property
    def max_violation(self) -> float:
        return float(self.violation.max()) if self.violation.size else 0.0

    @property
    def exits(self) -> int:
        return int(np.isfinite(self.exit_time).sum())


def check_comparison_bound(net: Network, lfs: Mapping[int, LyapunovFn], X0: np.ndarray, A: np.ndarray,
                           gammas: Mapping[int, float], T: float = T_END, dt: float = DT,
                           envelope: Mapping[int, float] | None = None, stride: int = 10**9) -> BoundCheck:
    """Co-integrate r' = A r, r(0) = V(x0), and report V - r up to the first exit from the domain.

    ``gammas`` is the domain the matrix is valid on; ``envelope`` (default: the same) is
    the set whose invariance is being checked.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    Vf = compile_lfs(net, lfs)
    g = np.array([gammas[i] for i in net.ids])
    env = np.array([(envelope or gammas)[i] for i in net.ids])
    A = np.asarray(A, dtype=float)
    r = Vf(X0)
    viol = np.zeros(X0.shape[0])
    exit_t = np.full(X0.shape[0], math.inf)
    exit_t[np.any(r > g + 1e-9, axis=1)] = 0.0
    excess = np.max(r - env, axis=1)
    state = {"r": r, "v": r}

    def lin(R):
        return R @ A.T

    def on_step(k, X):
        state["r"] = rk4_step(lin, state["r"], dt)
        v = Vf(X)
        newly = np.any(v > g + 1e-9, axis=1) & ~np.isfinite(exit_t)
        exit_t[newly] = k * dt
        inside = ~np.isfinite(exit_t)
        np.maximum(viol, np.where(inside, np.max(v - state["r"], axis=1), -np.inf), out=viol)
        np.maximum(excess, np.max(v - env, axis=1), out=excess)
        state["v"] = v

    traj = integrate(net, X0, T, dt, lfs=lfs, stride=stride, on_step=on_step)
    return BoundCheck(viol, exit_t, excess, state["v"], traj)


@dataclass
class BoundaryCloud:
    points: np.ndarray
    dropped: int
    seeds: int = 0
    meta: dict = field(default_factory=dict)


def reverse_time_boundary(net: Network, i: int, lf: LyapunovFn | None = None, seeds: int = 64,
                          T: float = 30.0, dt: float = 1e-2, ring: float = 1.05, tail: float = 5.0,
                          radius: float = 1.0, seed: int = 0) -> BoundaryCloud:
    """Run the isolated subsystem backwards from a ring of seeds and keep what stays bounded.

    The ring is the level ``ring`` of ``lf`` when given, else a circle of ``radius``.
    Points from the last ``tail`` time units of bounded runs form the cloud.
    """
    rng = np.random.default_rng(seed)
    n = len(net.universe)
    idx = net.state_indices(i)
    if lf is not None:
        ring_pts = radial_level_points(lf.V, idx, np.full(seeds, ring), rng)
    else:
        th = np.linspace(0, 2 * np.pi, seeds, endpoint=False)
        ring_pts = radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    X = np.zeros((seeds, n))
    X[:, idx] = ring_pts
    f = compile_field(net, reverse=True, only=i)
    steps = int(round(T / dt))
    keep_from = steps - int(round(tail / dt))
    alive = np.ones(seeds, dtype=bool)
    cloud = []
    for k in range(1, steps + 1):
        X = rk4_step(f, X, dt)
        with np.errstate(invalid="ignore"):
            bad = ~np.all(np.isfinite(X), axis=1) | (np.abs(X).max(axis=1) > 1e3)
        alive &= ~bad
        X[bad] = 0.0
        if k >= keep_from and k % 10 == 0:
            cloud.append(X[alive][:, idx])
    pts = np.concatenate(cloud) if cloud else np.zeros((0, len(idx)))
    alive_final = alive
    pts = pts if alive_final.any() else np.zeros((0, len(idx)))
    return BoundaryCloud(pts, int((~alive).sum()), seeds)
