import pytest

from hybridtod.corpus import ingest, minicorpus_dir
from hybridtod.redistribute import load_templates

# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def mini():
    return ingest(minicorpus_dir())


@pytest.fixture(scope="session")
def templates():
    return load_templates()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
