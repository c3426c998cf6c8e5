"""Shared random-instance generators for the test suite."""

import numpy as np
import pytest

from rsergodic.chains import validate_generator


def random_generator(rng, n, density=1.0, scale=1.0):
    """Irreducible generator with off-diagonal rates in (0.1, 1.1) * scale.

    With ``density < 1`` entries are dropped but a cycle keeps it irreducible.
    """
    q = rng.uniform(0.1, 1.1, (n, n)) * scale
    if density < 1.0:
        q *= rng.random((n, n)) < density
        idx = np.arange(n)
        q[idx, (idx + 1) % n] = rng.uniform(0.1, 1.1, n) * scale
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return validate_generator(q)


def random_reversible(rng, n):
    """Generator reversible w.r.t. a random pi: q_ij = s_ij / pi_i, s symmetric."""
    pi = rng.uniform(0.2, 1.0, n)
    pi /= pi.sum()
    s = rng.uniform(0.05, 1.0, (n, n))
    s = np.triu(s, 1)
    s = s + s.T
    q = s / pi[:, None]
    np.fill_diagonal(q, -q.sum(axis=1))
    return validate_generator(q), pi


def random_z_matrix(rng, n, zero_frac=0.3):
    """sI - B with B >= 0 and s / rho(B) in (0.5, 1.5), away from 1."""
    B = rng.uniform(0.0, 1.0, (n, n)) * (rng.random((n, n)) > zero_frac)
    rho = max(abs(np.linalg.eigvals(B)).max(), 1e-3)
    while True:
        f = rng.uniform(0.5, 1.5)
        if abs(f - 1.0) > 0.02:
            break
    return f * rho * np.eye(n) - B


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)
