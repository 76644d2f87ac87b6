import sys


def pytest_terminal_summary(terminalreporter):
    """Replay the acceptance gate as one PASS/FAIL line per criterion.

    The lines are recorded by the criterion decorator in test_acceptance;
    printing them here keeps them visible under default output capture.
    """
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, outcome, desc in sorted(results):
        terminalreporter.write_line(f"[criterion {num:02d}] {outcome} {desc}")
