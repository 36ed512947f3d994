import pytest

from logitest.fixture import openapi_path, openapi_text, serve_fixture
from logitest.spec_model import parse_spec


@pytest.fixture(scope="session")
def fixture_server():
    handle = serve_fixture()
    yield handle
    handle.stop()


@pytest.fixture
def petstore(fixture_server):
    """The shared fixture server, reset to its seed snapshot with every bug enabled."""
    fixture_server.app.bugs = {"B1", "B2", "B3", "B4"}
    fixture_server.reset()
    return fixture_server


@pytest.fixture(scope="session")
def catalog():
    return parse_spec(openapi_text(), "yaml")


@pytest.fixture(scope="session")
def spec_file():
    return openapi_path()


_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _criteria[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        terminalreporter.write_line(f"{_criteria[name]:4}  {name}")
