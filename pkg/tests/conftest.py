"""Collects acceptance outcomes and prints one line per criterion after the run."""

ACCEPTANCE: dict = {}


def record(criterion: int, label: str, ok: bool, detail: str = ""):
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(ok), detail))
    line = f"criterion {criterion} [{label}]: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        ok = all(c[1] for c in checks)
        failed = [f"{label} ({detail})" for label, good, detail in checks if not good]
        tail = "" if ok else " failing: " + "; ".join(failed)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} "
                                    f"({sum(c[1] for c in checks)}/{len(checks)} checks){tail}")
