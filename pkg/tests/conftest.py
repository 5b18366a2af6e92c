"""Collects acceptance verdicts and prints them at the end of the run."""

VERDICTS = {}


def record(number, title, passed, detail=""):
    VERDICTS[number] = (title, passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, passed, detail = VERDICTS[number]
        terminalreporter.write_line(
            f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}"
            + (f"  [{detail}]" if detail else ""))
