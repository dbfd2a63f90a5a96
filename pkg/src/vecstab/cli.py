"""Batch front end: generate, certify, sweep, validate (and ``run`` for all of them)."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import certify as cf
from . import experiments as ex
from . import lyap, model, plotting, sim
from .audit import CertificateRegistry
from .sdp import SolverOptions

EXIT_OK, EXIT_LIMIT, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 2, 3, 1
VERDICT_EXIT = {"ExponentiallyStable": EXIT_OK, "ConvergesToLimitSet": EXIT_LIMIT, "Inconclusive": EXIT_INCONCLUSIVE}

ENV_TOLERANCES = {
    "VECSTAB_DELTA": "delta",
    "VECSTAB_BISECT_TOL": "bisect_tol",
    "VECSTAB_EPS_MARGIN": "eps_margin",
    "VECSTAB_GAP_TOL": "gap_tol",
    "VECSTAB_FEAS_TOL": "feas_tol",
    "VECSTAB_PSD_TOL": "psd_tol",
}


class ConfigError(ValueError):
    pass


@dataclass
class Tolerances:
    delta: float = cf.DELTA
    bisect_tol: float = cf.BISECT_TOL
    eps_margin: float = cf.EPS
    gap_tol: float = 1e-7
    feas_tol: float = 1e-7
    psd_tol: float = 1e-7

    def sdp(self) -> SolverOptions:
        return SolverOptions(gap_tol=self.gap_tol, feas_tol=self.feas_tol, psd_tol=self.psd_tol)


@dataclass
class RunConfig:
    seed: int = 1
    topology: dict[int, list[int]] | None = None
    lf: str = "quad"
    mode: str = "multiple-sequential"
    disturbance: dict = field(default_factory=lambda: {"sample": {"seed": 0, "high": 0.3}})
    tolerances: Tolerances = field(default_factory=Tolerances)
    out: str = "out"
    jobs: int = 1
    sweep_grid: list[float] = field(default_factory=lambda: list(ex.DEFAULT_GRID))
    validate: dict = field(default_factory=lambda: {"count": 100, "seed": 0, "T": sim.T_END, "dt": sim.DT})
    audit_samples: int = 10_000
    max_rounds: int = 60
    closure_level: float = 0.15

    def check(self) -> None:
        if self.mode not in ex.MODES:
            raise ConfigError(f"mode must be one of {', '.join(ex.MODES)}")
        t = self.tolerances
        for f in fields(t):
            if not getattr(t, f.name) > 0:
                raise ConfigError(f"tolerance {f.name} must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not (self.lf == "quad" or self.lf.startswith("file:")):
            raise ConfigError("lf must be 'quad' or 'file:PATH'")
        if any(not 0 < g < 1 for g in self.sweep_grid):
            raise ConfigError("sweep grid must lie inside (0, 1)")

    def protocol(self) -> cf.ProtocolOptions:
        t = self.tolerances
        return cf.ProtocolOptions(delta=t.delta, tol=t.bisect_tol, max_rounds=self.max_rounds,
                                  closure_level=self.closure_level, jobs=self.jobs, sdp=t.sdp())


def load_config(path: str | None, environ=os.environ) -> RunConfig:
    doc = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: {exc.msg} at line {exc.lineno}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    tol = Tolerances(**{k: float(v) for k, v in doc.pop("tolerances", {}).items()})
    for env, name in ENV_TOLERANCES.items():
        if env in environ:
            try:
                setattr(tol, name, float(environ[env]))
            except ValueError:
                raise ConfigError(f"{env} must be a number") from None
    if "topology" in doc and doc["topology"] is not None:
        doc["topology"] = {int(k): [int(j) for j in v] for k, v in doc["topology"].items()}
    try:
        cfg = RunConfig(tolerances=tol, **doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def resolve_v0(cfg: RunConfig, net: model.Network) -> dict[int, float]:
    d = cfg.disturbance or {}
    ids = net.ids
    if "v0" in d:
        raw = d["v0"]
        if isinstance(raw, dict):
            v0 = {int(k): float(v) for k, v in raw.items()}
        else:
            if len(raw) != len(ids):
                raise ConfigError(f"v0 needs {len(ids)} entries")
            v0 = dict(zip(ids, map(float, raw)))
        if set(v0) != set(ids):
            raise ConfigError("v0 must name every subsystem")
    elif "sample" in d:
        s = d["sample"]
        rng = np.random.default_rng(int(s.get("seed", 0)))
        lo, hi = float(s.get("low", 0.0)), float(s.get("high", 0.3))
        v0 = {i: float(v) for i, v in zip(ids, rng.uniform(lo, hi, size=len(ids)))}
    else:
        raise ConfigError("disturbance needs 'v0' or 'sample'")
    bad = [i for i, v in v0.items() if not 0.0 <= v < 1.0]
    if bad:
        raise ConfigError(f"disturbance levels must lie in [0, 1); offending subsystems {bad}")
    return v0


# -- file plumbing ------------------------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: Sequence[dict], header: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header))
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _load_network(cfg: RunConfig) -> model.Network:
    path = Path(cfg.out) / "network.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'generate' first")
    return model.load(path)


def _lfs(cfg: RunConfig, net: model.Network, registry=None) -> dict[int, lyap.LyapunovFn]:
    out = Path(cfg.out)
    if cfg.lf.startswith("file:"):
        src = Path(cfg.lf[5:])
        if not src.exists():
            raise ConfigError(f"LF file {src} not found")
        lfs = lyap.loads_lfs(src.read_text(encoding="utf-8"), net.universe)
        if set(lfs) != set(net.ids):
            raise ConfigError("LF file must define a function for every subsystem")
    else:
        lfs = ex.synth_lfs(net, cfg.tolerances.sdp(), registry)
    (out / "lfs.json").write_text(lyap.dumps_lfs(lfs), encoding="utf-8")
    return lfs


def _apply_margin(cfg: RunConfig) -> None:
    cf.EPS = cfg.tolerances.eps_margin


# -- commands ------------------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    """Draw the oscillator network for a seed and write network.json."""
    topo = cfg.topology or model.DEFAULT_TOPOLOGY
    net, params = model.generate_vdp_network(cfg.seed, topo)
    rep = model.validate(net)
    if not rep.ok:
        raise ConfigError("generated network failed validation: " + "; ".join(rep.issues))
    out = _out(cfg)
    model.save(net, out / "network.json")
    _write_json(out / "params.json", params.to_json())
    print(f"network: {len(net.ids)} subsystems, {net.edge_count()} edges -> {out / 'network.json'}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    """Certify the configured disturbance; writes report.json, rounds.csv, rounds.png."""
    _apply_margin(cfg)
    net = _load_network(cfg)
    out = _out(cfg)
    registry = CertificateRegistry(samples=cfg.audit_samples, seed=cfg.seed)
    lfs = _lfs(cfg, net, registry)
    v0 = resolve_v0(cfg, net)
    report = ex.run_mode(net, lfs, v0, cfg.mode, cfg.protocol(), registry)
    audit = registry.audit()
    doc = report.to_json()
    doc["certificates"] = [
        {"label": a.label, "residual": a.residual, "min_sample": a.min_target, "passed": a.passed} for a in audit
    ]
    doc["audit_passed"] = all(a.passed for a in audit)
    _write_json(out / "report.json", doc)
    _write_csv(out / "rounds.csv", report.rounds_rows(), ["phase", "round", "subsystem", "gamma", "a_ii", "weights"])
    plotting.plot_levels(report, out / "rounds.png")
    print(f"{cfg.mode}: {report.verdict}; gamma* = {report.gamma_star}")
    if not doc["audit_passed"]:
        print("certificate audit failed", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return VERDICT_EXIT[report.verdict]


def cmd_sweep(cfg: RunConfig) -> int:
    """Uniform-level comparison of the constructions; writes sweep.csv and decay.csv with figures."""
    _apply_margin(cfg)
    net = _load_network(cfg)
    out = _out(cfg)
    lfs = _lfs(cfg, net)
    multiple = "parallel" if cfg.mode == "multiple-parallel" else "sequential"
    rows = ex.sweep(net, lfs, cfg.sweep_grid, multiple, cfg.tolerances.sdp(), cfg.tolerances.bisect_tol,
                    jobs=cfg.jobs)
    dicts = [r.as_dict() for r in rows]
    _write_csv(out / "sweep.csv", dicts, ["gamma", "method", "status", "max_row_sum", "max_real_eig", "certified",
                                          "all_certified"])
    methods = sorted({r.method for r in rows})
    summary = {
        "max_uniform_level": {m: ex.max_certified(rows, m) for m in methods},
        "max_uniform_level_per_subsystem": {
            m: {str(i): ex.max_certified(rows, m, i) for i in net.ids} for m in methods
        },
    }
    _write_json(out / "sweep_summary.json", summary)
    plotting.plot_sweep(dicts, out / "sweep.png")
    alphas, _ = ex.decay_table(net, lfs, opts=cfg.tolerances.sdp())
    _write_csv(out / "decay.csv",
               [{"gamma": g, **{str(i): alphas[i][k] for i in net.ids}} for k, g in enumerate(ex.DECAY_GRID)],
               ["gamma", *map(str, net.ids)])
    plotting.plot_decay(ex.DECAY_GRID, alphas, out / "decay.png")
    print(json.dumps(summary["max_uniform_level"]))
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    """Simulate from the certified envelope; writes validation.csv and trajectories/."""
    net = _load_network(cfg)
    out = _out(cfg)
    rpath = out / "report.json"
    if not rpath.exists():
        raise ConfigError(f"{rpath} not found; run 'certify' first")
    lpath = out / "lfs.json"
    if not lpath.exists():
        raise ConfigError(f"{lpath} not found")
    lfs = lyap.loads_lfs(lpath.read_text(encoding="utf-8"), net.universe)
    report = json.loads(rpath.read_text(encoding="utf-8"))
    v = cfg.validate
    res = ex.validate_report(net, lfs, report, int(v.get("count", 100)), int(v.get("seed", 0)),
                             float(v.get("T", sim.T_END)), float(v.get("dt", sim.DT)), cfg.tolerances.sdp())
    _write_csv(out / "validation.csv", res.rows,
               ["trajectory", "max_envelope_excess", "exit_time", "bound_violation", "final_max_V", "ok"])
    _write_json(out / "validation_boundary.json",
                {"boundary": {str(i): b for i, b in res.boundary.items()}, "notes": res.notes,
                 "bound_checked": res.matrix_available})
    if res.sample_traj is not None:
        tdir = out / "trajectories"
        tdir.mkdir(exist_ok=True)
        ids = net.ids
        for b in range(min(5, res.sample_traj.states.shape[1])):
            res.sample_traj.to_csv(tdir / f"traj_{b:03d}.csv", net.universe.names, ids, member=b)
        g0 = report["gamma0"]
        plotting.plot_trajectories(res.sample_traj.times, res.sample_traj.V[:, 0, :],
                                   [g0[str(i)] for i in ids], out / "trajectories.png", ids)
    bad = sum(not r["ok"] for r in res.rows)
    bviol = sum(b["violations"] for b in res.boundary.values())
    print(f"validated {len(res.rows)} trajectories: {bad} failing; boundary samples with dV/dt >= 0: {bviol}")
    return EXIT_OK if res.ok else EXIT_INCONCLUSIVE


def cmd_run(cfg: RunConfig) -> int:
    """generate, certify and validate in one go."""
    t0 = time.perf_counter()
    cmd_generate(cfg)
    code = cmd_certify(cfg)
    vcode = cmd_validate(cfg)
    print(f"pipeline finished in {time.perf_counter() - t0:.1f} s")
    return code if code != EXIT_OK else vcode


COMMANDS = {"generate": cmd_generate, "certify": cmd_certify, "sweep": cmd_sweep, "validate": cmd_validate,
            "run": cmd_run}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit code 2 free for ConvergesToLimitSet
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="network seed")
    common.add_argument("--mode", choices=ex.MODES)
    common.add_argument("--lf", help="'quad' or 'file:PATH'")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="concurrent SOS solves per round")
    p = _Parser(prog="vecstab", description="Vector Lyapunov stability certification for networked polynomial systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "mode", "lf", "out", "jobs") if getattr(args, k) is not None}
        cfg = replace(cfg, **overrides)
        cfg.check()
        return COMMANDS[args.command](cfg)
    except (ConfigError, model.NetworkError, lyap.LyapunovError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
