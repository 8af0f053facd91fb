import pytest

from dohpool.testing import MockDohServer, make_test_pki


@pytest.fixture(scope="session")
def pki(tmp_path_factory):
    return make_test_pki(str(tmp_path_factory.mktemp("pki")))


@pytest.fixture
def mock_server(pki):
    """Factory for started MockDohServer instances, stopped at teardown."""
    started = []

    def factory(addresses=(), **kwargs):
        server = MockDohServer(pki, addresses, **kwargs).start()
        started.append(server)
        return server

    yield factory
    for server in started:
        server.stop()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import CRITERIA

    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            name = getattr(report, "nodeid", "").rpartition("::")[2]
            if name in CRITERIA and report.when == "call" or (status == "error" and name in CRITERIA):
                outcomes[name] = "PASS" if status == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        if name in outcomes:
            terminalreporter.write_line(f"{outcomes[name]}  {label}")
