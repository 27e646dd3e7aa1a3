import numpy as np
import pytest
from hypothesis import settings

from distbeam.estimation import hermitize

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_hpd(rng, K, n, cond=10.0):
    """Stack of well-conditioned Hermitian positive definite matrices."""
    A = rng.standard_normal((K, n, n)) + 1j * rng.standard_normal((K, n, n))
    return hermitize(A @ np.conj(np.swapaxes(A, -1, -2)) + cond ** -1 * n * np.eye(n))


def random_ratfs(rng, K, M, count):
    a = rng.standard_normal((count, K, M)) + 1j * rng.standard_normal((count, K, M))
    a[..., 0] = 1.0
    return a


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records and prints a criterion outcome."""

    def record(n, ok, detail=""):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
