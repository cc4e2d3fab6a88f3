import pytest


def pytest_configure(config):
    config._acceptance_results = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion outcome and assert it.

    The results are replayed as a PASS/FAIL block in the terminal summary
    so the release gate is readable at the end of any pytest run.
    """
    results = request.config._acceptance_results

    def record(num, desc, ok, detail=""):
        results.append((num, desc, bool(ok), detail))
        assert ok, f"criterion {num} failed: {desc} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, desc, ok, detail in sorted(results):
        status = "PASS" if ok else "FAIL"
        line = f"[criterion {num}] {status}: {desc}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
