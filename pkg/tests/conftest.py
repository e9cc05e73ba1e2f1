import numpy as np
import pytest

from osbmlink.rng import SeededRng


@pytest.fixture
def rng():
    return SeededRng(1234)


def ring_with_chords(n=12, chords=((0, 6), (2, 9), (3, 7))):
    ring = [(i, (i + 1) % n) for i in range(n)]
    return np.array(ring + list(chords), dtype=np.int64)


def numeric_grad(f, x, step=1e-6):
    """Central differences of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f(x)
        flat[i] = old - step
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * step)
    return g


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
