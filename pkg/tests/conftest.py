import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cdtinfer.constraints import ConstraintSet
from cdtinfer.data import SparseTensor4
from cdtinfer.tucker import init_model

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_sparse(dims, nnz, rng, positive=True):
    total = int(np.prod(dims))
    flat = np.sort(rng.choice(total, size=min(nnz, total), replace=False))
    idx = np.stack(np.unravel_index(flat, dims), axis=1)
    vals = rng.integers(1, 5, len(flat)).astype(float) if positive else rng.standard_normal(len(flat))
    return SparseTensor4(dims, idx, vals)


def random_constraints(n, m, q, rng):
    """Arbitrary (not log-derived) side matrices with a valid Laplacian."""
    Z = rng.random((m, m))
    Z = (Z + Z.T) / 2
    np.fill_diagonal(Z, 1.0)
    K = np.diag(Z.sum(axis=1))
    return ConstraintSet(rng.random((n, n)), rng.random((n, m)), Z, K, K - Z, np.eye(q, k=1))


def random_model(dims, rank, rng, scale=1.0):
    m = init_model(dims, rank, seed=int(rng.integers(1 << 30)), scale=scale)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
