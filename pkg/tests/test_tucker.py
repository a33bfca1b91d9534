import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdtinfer.errors import DataError
from cdtinfer.tucker import (
    TuckerModel,
    contracted_row_gradient,
    init_model,
    load_checkpoint,
    matched_core_scale,
    reconstruct_cell,
    reconstruct_cells,
    reconstruct_slice,
    save_checkpoint,
)


def const_model(dims, g=2.0):
    n, _, m, q = dims
    return TuckerModel(np.full((1, 1, 1, 1), g), np.ones((n, 1)), np.ones((n, 1)), np.ones((m, 1)), np.ones((q, 1)))


def loop_cell(model, idx):
    i, j, k, l = idx
    R = model.rank
    total = 0.0
    for a, b, c, d in itertools.product(range(R), repeat=4):
        total += model.core[a, b, c, d] * model.S[i, a] * model.D[j, b] * model.C[k, c] * model.T[l, d]
    return total


def test_constant_rank1():
    m = const_model((3, 3, 2, 2))
    assert reconstruct_cell(m, (2, 1, 1, 0)) == 2.0
    assert contracted_row_gradient(m, (0, 0, 0, 0), 3).tolist() == [2.0]


def test_zero_core():
    m = init_model((4, 4, 2, 3), 2, seed=0)
    m.core[:] = 0
    assert reconstruct_cell(m, (1, 2, 0, 2)) == 0
    assert not reconstruct_slice(m, 1).any()


@given(st.integers(0, 2**32 - 1))
def test_cell_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    m = init_model((5, 5, 3, 4), 2, seed=seed, scale=1.0)
    m.core[:] = rng.standard_normal(m.core.shape)
    idx = tuple(int(rng.integers(0, d)) for d in m.dims)
    assert reconstruct_cell(m, idx) == pytest.approx(loop_cell(m, idx), rel=1e-12, abs=1e-14)


def test_vectorized_cells(rng):
    m = init_model((6, 6, 3, 5), 3, seed=1, scale=1.0)
    idx = np.column_stack([rng.integers(0, d, 50) for d in m.dims])
    want = [reconstruct_cell(m, row) for row in idx]
    assert np.allclose(reconstruct_cells(m, idx), want, rtol=1e-12)
    with pytest.raises(DataError):
        reconstruct_cells(m, [[6, 0, 0, 0]])


@pytest.mark.parametrize("mode", [1, 2, 3, 4])
def test_euler_identity(mode, rng):
    m = init_model((5, 5, 2, 3), 3, seed=2, scale=1.0)
    idx = (1, 3, 1, 2)
    row = (m.S[1], m.D[3], m.C[1], m.T[2])[mode - 1]
    assert contracted_row_gradient(m, idx, mode) @ row == pytest.approx(reconstruct_cell(m, idx), rel=1e-12)


def test_row_gradient_finite_difference():
    m = init_model((5, 5, 2, 3), 3, seed=3, scale=1.0)
    idx, h = (2, 4, 0, 1), 1e-6
    g = contracted_row_gradient(m, idx, 1)
    for r in range(3):
        p = m.copy()
        p.S[2, r] += h
        fd = (reconstruct_cell(p, idx) - reconstruct_cell(m, idx)) / h
        assert fd == pytest.approx(g[r], rel=1e-4)


def test_bad_mode():
    with pytest.raises(DataError):
        contracted_row_gradient(init_model((2, 2, 1, 1), 1), (0, 0, 0, 0), 5)


def test_slice_matches_cells(rng):
    m = init_model((7, 7, 3, 4), 3, seed=4, scale=1.0)
    sl = reconstruct_slice(m, 2)
    for _ in range(100):
        i, j, k = rng.integers(0, 7), rng.integers(0, 7), rng.integers(0, 3)
        assert sl[i, j, k] == pytest.approx(reconstruct_cell(m, (i, j, k, 2)), rel=1e-12)


def test_slice_constant_and_budget():
    assert np.all(reconstruct_slice(const_model((3, 3, 2, 2)), 0) == 2.0)
    with pytest.raises(DataError, match="budget"):
        reconstruct_slice(const_model((30, 30, 2, 2)), 0, budget=100)


def test_init_contract():
    a, b = init_model((6, 6, 2, 4), seed=5), init_model((6, 6, 2, 4), seed=5)
    assert a == b
    assert a.rank == 3
    for arr in (a.core, *a.factors()):
        assert arr.min() >= 0 and arr.max() <= 0.1
    assert init_model((6, 6, 2, 4), seed=6) != a


def test_matched_core_expectation():
    c = matched_core_scale(2.0, 3, 0.4)
    assert 3**4 * (c / 2) * (0.4 / 2) ** 4 == pytest.approx(2.0)


def test_shape_validation():
    with pytest.raises(DataError):
        TuckerModel(np.zeros((2, 2, 2, 2)), np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(DataError):
        TuckerModel(np.zeros((2, 2, 2)), np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_checkpoint_roundtrip(tmp_path):
    m = init_model((5, 5, 2, 3), 2, seed=7, scale=1.0)
    save_checkpoint(m, tmp_path / "m.ckpt")
    assert load_checkpoint(tmp_path / "m.ckpt") == m
    (tmp_path / "bad.ckpt").write_text("5 2 3 2\n1 2\n")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "bad.ckpt")
