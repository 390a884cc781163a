from __future__ import annotations

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, text: str) -> None:
    ACCEPTANCE[n] = (bool(ok), text)
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}")
