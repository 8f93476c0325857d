import socket

import pytest

from cvguard import eot, features
from cvguard.net.instruments import CellState, InstrumentServer
from cvguard.voltagram import CellCondition, simulate

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="session")
def corpus():
    """Feature vectors of 40 Normal (seeds 0-39) and 40 Disconnected (seeds 40-79) runs."""
    normal = [features.extract(simulate(condition=CellCondition.NORMAL, seed=s)) for s in range(40)]
    disc = [features.extract(simulate(condition=CellCondition.DISCONNECTED, seed=s)) for s in range(40, 80)]
    return normal, disc


@pytest.fixture(scope="session")
def model(corpus):
    return eot.train(eot.TrainingSet.from_vectors(*corpus))


@pytest.fixture(scope="session")
def model_file(model, tmp_path_factory):
    return eot.save(model, tmp_path_factory.mktemp("model") / "eot.json")


@pytest.fixture
def bench():
    """Potentiostat, pump and MFC servers sharing one cell, on ephemeral ports."""
    cell = CellState()
    servers = {kind: InstrumentServer(kind, 0, cell).start() for kind in ("potentiostat", "pump", "mfc")}
    yield servers, cell
    for srv in servers.values():
        srv.stop()
