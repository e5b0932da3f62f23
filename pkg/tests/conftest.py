import pytest

from gridgame.netmodel import bundled_case_path, load_case


@pytest.fixture(scope="session")
def net69():
    return load_case(bundled_case_path())


ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(key: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'}  {key}  {detail}".rstrip()
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
