import pytest

ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(key, ok, detail):
        """``ok=None`` files a non-gating note under the criterion."""
        tag = "INFO" if ok is None else ("PASS" if ok else "FAIL")
        line = f"{tag}  criterion {key}: {detail}"
        ACCEPTANCE[key] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
