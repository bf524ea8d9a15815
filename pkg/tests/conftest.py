from helpers import ACCEPTANCE

CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in range(1, CRITERIA + 1):
        if k not in ACCEPTANCE:
            tr.write_line(f"criterion {k:2d}: NOT RUN")
            continue
        title, ok, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
