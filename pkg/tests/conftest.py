"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

ACCEPTANCE = {}


def record(number, title, ok, detail=""):
    line = f"C{number:<2} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
