import os
import sys
from pathlib import Path

# The worker-count determinism tests need a thread pool larger than one even on
# single-core machines; numba reads this once at import.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

sys.path.insert(0, str(Path(__file__).parent))

from etree import kernels  # noqa: E402
from etree.data import ObservedMatrix  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
MOVIELENS = ROOT / "data" / "ml-100k" / "u.data"


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


def random_masked(rng, n, m, rate=0.7, scale=3.0):
    """Dense nonnegative matrix with a random mask that leaves no empty row or column."""
    dense = rng.random((n, m)) * scale
    mask = rng.random((n, m)) < rate
    mask[np.arange(n), rng.integers(0, m, n)] = True
    mask[rng.integers(0, n, m), np.arange(m)] = True
    return dense, mask, ObservedMatrix.from_dense(dense, mask)


# ---- acceptance report: one line per criterion, printed after the run

ACCEPTANCE_LINES = {}


def record_criterion(number, title, ok, detail):
    """Store the verdict for acceptance criterion ``number`` (all parts must pass)."""
    prev = ACCEPTANCE_LINES.get(number)
    if prev is not None:
        ok = ok and prev[1]
        detail = f"{prev[2]}; {detail}"
    ACCEPTANCE_LINES[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        title, ok, detail = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
