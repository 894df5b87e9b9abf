"""Shared test plumbing: the acceptance suite reports one line per criterion
in the terminal summary, pass or fail."""

ACCEPTANCE_RESULTS = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> str:
    line = (f"[criterion {number:>2}] {'PASS' if passed else 'FAIL'} "
            f"{name}: {detail}")
    ACCEPTANCE_RESULTS.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(line)
