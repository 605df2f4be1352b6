import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seltrack import _backend, _pykernels  # noqa: E402

BACKENDS = [pytest.param(_pykernels, id="python")]
if _backend.compiled:
    BACKENDS.append(pytest.param(_backend.kernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def kern(request):
    """Each available kernel implementation in turn."""
    return request.param


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; ``record(n, ok, detail)`` must be called before asserting."""
    seen = []

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        seen.append(n)
        print(line)
        return ok

    yield record
    if not seen:
        n = int(request.node.name.split("_")[1])
        ACCEPTANCE[n] = f"criterion {n:2d}: FAIL  raised before completing"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
