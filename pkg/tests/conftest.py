"""Shared pytest plumbing: the acceptance report printed after the run."""

import pytest

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


class AcceptanceRecorder:
    """Collects one verdict per acceptance criterion."""

    def __call__(self, number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = ("PASS" if passed else "FAIL", detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        verdict, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {verdict}  {detail}")
