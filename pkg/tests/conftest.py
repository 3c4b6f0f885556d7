import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def simplex_points(rng, n, k=2, margin=1e-3):
    """Random points on the simplex kept ``margin`` away from its faces."""
    out = []
    while len(out) < n:
        p = rng.dirichlet(np.ones(k))
        if p.min() > margin:
            out.append(p)
    return out


def central_diff(f, p, h=1e-5):
    g = np.zeros(len(p))
    for k in range(len(p)):
        e = np.zeros(len(p))
        e[k] = h
        g[k] = (f(p + e) - f(p - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; the terminal summary prints one line each."""
    def record(n, ok, detail):
        _ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
