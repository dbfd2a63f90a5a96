import numpy as np
import pytest

from vecstab import experiments as ex
from vecstab.lyap import LyapunovFn
from vecstab.model import Interaction, Network, Subsystem, generate_vdp_network
from vecstab.poly import Polynomial, Universe


def decoupled_network(m: int = 2, rate: float = 1.0) -> tuple[Network, dict[int, LyapunovFn]]:
    """m scalar subsystems x_i' = -rate x_i with V_i = x_i^2 and no interactions."""
    names = [f"x{i}" for i in range(1, m + 1)]
    U = Universe(names)
    subs = [Subsystem(i, (n,), (-rate * U.var(n),)) for i, n in enumerate(names, start=1)]
    net = Network(U, subs, [])
    lfs = {i: LyapunovFn(i, (n,), U.var(n) ** 2, 2) for i, n in enumerate(names, start=1)}
    return net, lfs


def weakly_coupled_pair(k: float = 0.1) -> tuple[Network, dict[int, LyapunovFn]]:
    """x1' = -x1 + k x2, x2' = -x2 + k x1 with V_i = x_i^2."""
    U = Universe(["x1", "x2"])
    x1, x2 = U.vars(["x1", "x2"])
    subs = [Subsystem(1, ("x1",), (-x1,)), Subsystem(2, ("x2",), (-x2,))]
    inter = [Interaction(1, 2, (k * x2,)), Interaction(2, 1, (k * x1,))]
    net = Network(U, subs, inter)
    lfs = {1: LyapunovFn(1, ("x1",), x1 ** 2, 2), 2: LyapunovFn(2, ("x2",), x2 ** 2, 2)}
    return net, lfs


@pytest.fixture
def decoupled():
    return decoupled_network()


@pytest.fixture(scope="session")
def seed1():
    net, params = generate_vdp_network(1)
    return net, params


@pytest.fixture(scope="session")
def seed1_lfs(seed1):
    net, _ = seed1
    return ex.synth_lfs(net)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def poly_from_dict(U: Universe, terms: dict) -> Polynomial:
    return Polynomial(U, terms)


SEED1_V0 = 0.3


def _protocol_run(net, lfs, mode):
    from vecstab import certify as cf
    from vecstab.audit import CertificateRegistry

    reg = CertificateRegistry()
    rep = cf.run_protocol(net, lfs, {i: SEED1_V0 for i in net.ids}, cf.ProtocolOptions(mode=mode), reg)
    return rep, reg


@pytest.fixture(scope="session")
def seq_run(seed1, seed1_lfs):
    return _protocol_run(seed1[0], seed1_lfs, "sequential")


@pytest.fixture(scope="session")
def par_run(seed1, seed1_lfs):
    return _protocol_run(seed1[0], seed1_lfs, "parallel")


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
