import numpy as np
import pytest

from streamwalk.hybrid import from_edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_edges(rng, n, m):
    """``m`` distinct undirected edges on ``0..n-1`` without self-loops."""
    out = set()
    while len(out) < m:
        a, b = rng.integers(0, n, 2).tolist()
        if a != b:
            out.add((min(a, b), max(a, b)))
    return np.array(sorted(out), dtype=np.int64)


@pytest.fixture
def small_graph(rng):
    return from_edges(random_edges(rng, 40, 120))


# criterion id -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def report(cid: str, passed: bool, detail: str) -> None:
    line = f"{cid} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE[cid] = (passed, detail)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        passed, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if passed else 'FAIL'}: {detail}")
