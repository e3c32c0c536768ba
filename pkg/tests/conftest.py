import numpy as np
import pytest

from wfeff.core import RngSpec, derive_rng_stream

# fixed before any acceptance run was looked at
ACCEPTANCE_SEED = 20261016

_CRITERIA: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    _CRITERIA.append(line)
    print(line)


def tv(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@pytest.fixture
def rng():
    return derive_rng_stream(RngSpec(12345, 0))


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
