from pathlib import Path

import pytest

from specache.ir import parse_program

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def load(name: str):
    return parse_program((CORPUS / f"{name}.cfgir").read_text())


@pytest.fixture
def corpus_dir() -> Path:
    return CORPUS


# --- acceptance verdict lines -------------------------------------------------

ACCEPTANCE: list = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append((n, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
