"""Shared pytest wiring.

The acceptance suite registers one line per criterion; the hook below prints
them after the run so the verdicts are visible even when every test passes.
"""

ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    """Register one acceptance verdict and return ``ok`` for the caller."""
    verdict = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append((number, f"[{number:2d}] {verdict}  {detail}"))
    return ok


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
