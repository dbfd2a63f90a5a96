"""Interconnected polynomial systems and the randomized Van der Pol benchmark.

Each subsystem ``i`` evolves as ``x_i' = f_i(x_i) + sum_j g_ij(x_i, x_j)``.
Interactions are stored pairwise; the neighborhood of ``i`` is ``i`` plus
every ``j`` with a nonzero ``g_ij``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .poly import Polynomial, PolyParseError, Universe, parse

PRNG_VERSION = "pcg64-v1"

DEFAULT_TOPOLOGY: dict[int, list[int]] = {
    1: [1, 2, 5, 9],
    2: [2, 1, 3],
    3: [3, 2, 8],
    4: [4, 6, 7],
    5: [5, 1, 6],
    6: [6, 4, 5],
    7: [7, 4, 8, 9],
    8: [8, 3, 7],
    9: [9, 1, 7],
}

MU_RANGE = (-3.0, -1.0)
C_RANGE = (-0.2, 0.2)
BETA1_RANGE = (-0.1, 0.1)
BETA2_RANGE = (-0.1, 0.1)


class NetworkError(ValueError):
    def __init__(self, msg: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(msg + where)


@dataclass(frozen=True)
class Subsystem:
    id: int
    state_vars: tuple[str, ...]
    f: tuple[Polynomial, ...]


@dataclass(frozen=True)
class Interaction:
    to: int
    source: int
    g: tuple[Polynomial, ...]


@dataclass
class Network:
    universe: Universe
    subsystems: list[Subsystem]
    interactions: list[Interaction]
    neighborhoods: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.neighborhoods:
            self.neighborhoods = derive_neighborhoods(self.subsystems, self.interactions)
        self._by_id = {s.id: s for s in self.subsystems}

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.subsystems]

    def subsystem(self, i: int) -> Subsystem:
        return self._by_id[i]

    def incoming(self, i: int) -> dict[int, tuple[Polynomial, ...]]:
        return {e.source: e.g for e in self.interactions if e.to == i}

    def coupling(self, i: int) -> list[Polynomial]:
        """Summed interaction g_i = sum_j g_ij."""
        s = self.subsystem(i)
        total = [Polynomial.zero(self.universe) for _ in s.state_vars]
        for g in self.incoming(i).values():
            total = [a + b for a, b in zip(total, g)]
        return total

    def neighbors(self, i: int) -> list[int]:
        """N_i without i."""
        return [j for j in self.neighborhoods[i] if j != i]

    def neighborhood_vars(self, i: int) -> list[str]:
        out: list[str] = []
        for j in sorted(self.neighborhoods[i]):
            for v in self.subsystem(j).state_vars:
                if v not in out:
                    out.append(v)
        return out

    def state_indices(self, i: int) -> list[int]:
        return [self.universe.index[v] for v in self.subsystem(i).state_vars]

    def vector_field(self) -> list[Polynomial]:
        """Right-hand side for every universe variable, in universe order."""
        rhs: list[Polynomial | None] = [None] * len(self.universe)
        for s in self.subsystems:
            total = [a + b for a, b in zip(s.f, self.coupling(s.id))]
            for v, p in zip(s.state_vars, total):
                k = self.universe.index[v]
                if rhs[k] is not None:
                    raise NetworkError(f"variable {v!r} is shared by several subsystems; simulation needs a partition")
                rhs[k] = p
        return [p if p is not None else Polynomial.zero(self.universe) for p in rhs]

    def edge_count(self) -> int:
        return sum(len(n) - 1 for n in self.neighborhoods.values())


def derive_neighborhoods(subsystems: Sequence[Subsystem], interactions: Sequence[Interaction]) -> dict[int, list[int]]:
    out = {s.id: [s.id] for s in subsystems}
    for e in interactions:
        if any(not p.is_zero() for p in e.g) and e.source not in out[e.to]:
            out[e.to].append(e.source)
    return out


# -- Van der Pol benchmark ------------------------------------------------------------

@dataclass
class VdpParams:
    seed: int | None
    mu: dict[int, float]
    c: dict[tuple[int, int], float]
    beta1_tilde: dict[tuple[int, int], float]
    beta2: dict[tuple[int, int], float]
    prng: str = PRNG_VERSION

    def to_json(self) -> dict:
        def edges(d):
            return [{"to": i, "from": j, "value": v} for (i, j), v in sorted(d.items())]

        return {
            "seed": self.seed,
            "prng": self.prng,
            "mu": {str(i): v for i, v in sorted(self.mu.items())},
            "c": edges(self.c),
            "beta1_tilde": edges(self.beta1_tilde),
            "beta2": edges(self.beta2),
        }


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def draw_vdp_params(seed: int, topology: Mapping[int, Sequence[int]] = DEFAULT_TOPOLOGY) -> VdpParams:
    """Uniform draws; each subsystem and each edge has its own PRNG stream."""
    _check_topology(topology)
    mu, c, b1, b2 = {}, {}, {}, {}
    for i in sorted(topology):
        mu[i] = float(_rng(seed, 0, i).uniform(*MU_RANGE))
        attempt = 0
        while True:
            for j in topology[i]:
                if j == i:
                    continue
                r = _rng(seed, 1, i, j, attempt)
                c[i, j] = float(r.uniform(*C_RANGE))
                b1[i, j] = float(r.uniform(*BETA1_RANGE))
                b2[i, j] = float(r.uniform(*BETA2_RANGE))
            denom = 1.0 - sum(b1[i, j] for j in topology[i] if j != i)
            if abs(denom) > 1e-6:
                break
            attempt += 1
    return VdpParams(seed, mu, c, b1, b2)


def _check_topology(topology: Mapping[int, Sequence[int]]) -> None:
    for i, nb in topology.items():
        if i not in nb:
            raise NetworkError(f"neighborhood of subsystem {i} must contain {i}")
        for j in nb:
            if j not in topology:
                raise NetworkError(f"subsystem {i} lists unknown neighbor {j}")


def var_names(i: int) -> tuple[str, str]:
    return (f"x{i}_1", f"x{i}_2")


def build_vdp_network(params: VdpParams, topology: Mapping[int, Sequence[int]] = DEFAULT_TOPOLOGY) -> Network:
    """Oscillator network with its equilibrium shifted to the origin."""
    _check_topology(topology)
    ids = sorted(topology)
    U = Universe([v for i in ids for v in var_names(i)])
    subsystems, interactions = [], []
    for i in ids:
        nb = [j for j in topology[i] if j != i]
        denom = 1.0 - sum(params.beta1_tilde[i, j] for j in nb)
        if abs(denom) <= 1e-6:
            raise NetworkError(f"degenerate equilibrium for subsystem {i}")
        x_star = sum(params.c[i, j] for j in nb) / denom
        c2 = 2.0 * x_star
        c1 = 1.0 - (0.5 * c2) ** 2
        beta1 = {j: 0.5 * params.beta2[i, j] * c2 - params.beta1_tilde[i, j] for j in nb}
        c3 = 1.0 - sum(0.5 * params.beta2[i, j] * c2 - beta1[j] for j in nb)
        p1, p2 = U.vars(var_names(i))
        mu = params.mu[i]
        f = (p2, mu * p2 * (c1 - c2 * p1 - p1 * p1) - c3 * p1)
        subsystems.append(Subsystem(i, var_names(i), f))
        for j in nb:
            q2 = U.var(var_names(j)[1])
            g = (Polynomial.zero(U), beta1[j] * q2 + params.beta2[i, j] * q2 * p1)
            interactions.append(Interaction(i, j, g))
    return Network(U, subsystems, interactions, {i: list(topology[i]) for i in ids})


def generate_vdp_network(seed: int, topology: Mapping[int, Sequence[int]] = DEFAULT_TOPOLOGY) -> tuple[Network, VdpParams]:
    params = draw_vdp_params(seed, topology)
    return build_vdp_network(params, topology), params


# -- validation -------------------------------------------------------------------------

@dataclass
class ValidationReport:
    issues: list[str]

    @property
    def ok(self) -> bool:
        return not self.issues


def jacobian_at_origin(net: Network, i: int) -> np.ndarray:
    s = net.subsystem(i)
    idx = net.state_indices(i)
    J = np.zeros((len(idx), len(idx)))
    for r, p in enumerate(s.f):
        for c, k in enumerate(idx):
            J[r, c] = p.coeff(((k, 1),))
    return J


def validate(net: Network) -> ValidationReport:
    issues = []
    for s in net.subsystems:
        own = set(net.state_indices(s.id))
        if len(s.f) != len(s.state_vars):
            issues.append(f"subsystem {s.id}: f has {len(s.f)} components for {len(s.state_vars)} states")
        for k, p in enumerate(s.f):
            if p.constant_term() != 0.0:
                issues.append(f"subsystem {s.id}: f[{k}](0) = {p.constant_term():g} != 0")
            if not p.var_indices() <= own:
                issues.append(f"subsystem {s.id}: f[{k}] depends on foreign states")
        J = jacobian_at_origin(net, s.id)
        eig = np.linalg.eigvals(J)
        if np.max(eig.real) >= 0:
            issues.append(f"subsystem {s.id}: isolated Jacobian not Hurwitz (max real part {np.max(eig.real):.4g})")
    for e in net.interactions:
        if e.to not in net._by_id or e.source not in net._by_id:
            issues.append(f"interaction {e.source}->{e.to}: unknown subsystem")
            continue
        own = set(net.state_indices(e.to))
        other = set(net.state_indices(e.source)) - own
        if len(e.g) != len(net.subsystem(e.to).state_vars):
            issues.append(f"interaction {e.source}->{e.to}: wrong number of components")
        for k, p in enumerate(e.g):
            if not p.var_indices() <= own | set(net.state_indices(e.source)):
                issues.append(f"interaction {e.source}->{e.to}: g[{k}] depends on states outside x_i, x_j")
            # terms free of x_j survive at x_j = 0
            residue = {m: c for m, c in p.terms.items() if not any(i in other for i, _ in m)}
            if residue:
                issues.append(f"interaction {e.source}->{e.to}: g[{k}](x_i, 0) is not identically zero")
    derived = derive_neighborhoods(net.subsystems, net.interactions)
    for i in net.ids:
        if sorted(derived.get(i, [])) != sorted(net.neighborhoods.get(i, [])):
            issues.append(f"subsystem {i}: stored neighborhood {sorted(net.neighborhoods.get(i, []))} "
                          f"differs from interactions {sorted(derived.get(i, []))}")
    return ValidationReport(issues)


# -- JSON ---------------------------------------------------------------------------------

def network_to_json(net: Network) -> dict:
    return {
        "variables": list(net.universe.names),
        "subsystems": [
            {"id": s.id, "state_vars": list(s.state_vars), "f": [p.to_text() for p in s.f]}
            for s in net.subsystems
        ],
        "interactions": [
            {"to": e.to, "from": e.source, "g": [p.to_text() for p in e.g]} for e in net.interactions
        ],
    }


def dumps(net: Network) -> str:
    return json.dumps(network_to_json(net), indent=2) + "\n"


def save(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(net))


def _locate(text: str, needle: str, offset: int = 0) -> tuple[int, int]:
    pos = text.find(json.dumps(needle))
    if pos < 0:
        return 1, 1
    pos += 1 + offset
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def loads(text: str) -> Network:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from None
    try:
        U = Universe(doc["variables"])
    except (KeyError, TypeError):
        raise NetworkError("missing 'variables' list") from None

    def poly(s: str) -> Polynomial:
        try:
            return parse(s, U)
        except PolyParseError as exc:
            line, col = _locate(text, s, exc.pos)
            raise NetworkError(str(exc.args[0]), line, col) from None

    try:
        subs = [
            Subsystem(int(s["id"]), tuple(s["state_vars"]), tuple(poly(p) for p in s["f"]))
            for s in doc["subsystems"]
        ]
        inter = [
            Interaction(int(e["to"]), int(e["from"]), tuple(poly(p) for p in e["g"]))
            for e in doc.get("interactions", [])
        ]
    except KeyError as exc:
        raise NetworkError(f"missing field {exc.args[0]!r}") from None
    for s in subs:
        for v in s.state_vars:
            if v not in U.index:
                raise NetworkError(f"subsystem {s.id} lists unknown variable {v!r}", *_locate(text, v))
    return Network(U, subs, inter)


def load(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
