from pathlib import Path

ACCEPTANCE_LINES: list[str] = []
SUMMARY_FILE = Path(__file__).resolve().parent.parent / "results" / "acceptance" / "summary.txt"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    SUMMARY_FILE.parent.mkdir(parents=True, exist_ok=True)
    SUMMARY_FILE.write_text("\n".join(ACCEPTANCE_LINES) + "\n", encoding="utf-8")
