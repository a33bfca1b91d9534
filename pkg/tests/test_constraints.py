import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdtinfer.constraints import (
    ConstraintSet,
    ReactionGraph,
    build_constraints,
    build_mc,
    build_nma,
    build_sda,
    build_ts_matrix,
    reaction_graph,
    read_matrix,
    write_matrix,
)
from cdtinfer.data import DiffusionLog, generate_synthetic
from cdtinfer.errors import DataError


def test_sda_single_neighbor():
    X = build_sda(ReactionGraph(3, {(0, 2): 7}))
    assert X[0, 2] == 0.5
    assert X.sum() == 0.5


def test_sda_ties():
    a, b, c = 1, 2, 3
    X = build_sda(ReactionGraph(4, {(0, a): 5, (0, b): 2, (0, c): 2}))
    assert X[0, a] == pytest.approx(2.5 / 3)
    assert X[0, b] == pytest.approx(1 / 3)
    assert X[0, c] == pytest.approx(1 / 3)


def test_sda_naive_oracle(rng):
    reactions = {}
    for _ in range(40):
        i, j = rng.integers(0, 8, 2)
        reactions[(int(i), int(j))] = int(rng.integers(1, 6))
    g = ReactionGraph(8, reactions)
    X = build_sda(g)
    for i in range(8):
        nb = g.neighbors(i)
        for j in range(8):
            if j not in nb:
                assert X[i, j] == 0
                continue
            less = sum(1 for k in nb if nb[k] < nb[j])
            eq = sum(1 for k in nb if nb[k] == nb[j])
            assert X[i, j] == pytest.approx((less + 0.5 * eq) / len(nb), abs=1e-15)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=40))
def test_sda_range(pairs):
    log = DiffusionLog(6, 1, 1, [(i, j, 0, 0) for i, j in pairs])
    X = build_sda(reaction_graph(log))
    support = {(i, j) for i, j in pairs}
    for i in range(6):
        for j in range(6):
            if (i, j) in support:
                assert 0 < X[i, j] <= 1
            else:
                assert X[i, j] == 0


def test_reaction_graph_orientation():
    log = DiffusionLog(3, 1, 1, [(0, 2, 0, 0), (0, 2, 0, 0), (1, 0, 0, 0)])
    g = reaction_graph(log)
    assert g.reactions == {(0, 2): 2, (1, 0): 1}


def test_reaction_count_validated():
    with pytest.raises(DataError):
        ReactionGraph(2, {(0, 1): 0})


def test_nma_rows():
    log = DiffusionLog(3, 2, 1, [(0, 1, 0, 0)] * 3 + [(2, 1, 1, 0), (1, 2, 0, 0)])
    Y = build_nma(log)
    assert Y[1].tolist() == [0.75, 0.25]
    assert Y[2].tolist() == [1.0, 0.0]
    assert Y[0].tolist() == [0.0, 0.0]
    assert not build_nma(DiffusionLog(3, 2, 1, np.zeros((0, 4), int))).any()


def test_mc_jaccard():
    # meme 0 reaches {0,1,2,3}, meme 1 reaches {2,3,4}, meme 2 reaches {5}, meme 3 == meme 0
    ev = [(9, d, 0, 0) for d in (0, 1, 2, 3)] + [(9, d, 1, 0) for d in (2, 3, 4)]
    ev += [(9, 5, 2, 0)] + [(8, d, 3, 0) for d in (3, 2, 1, 0)]
    Z, K, LZ = build_mc(DiffusionLog(10, 4, 1, ev))
    assert Z[0, 1] == pytest.approx(2 / 5)
    assert Z[0, 2] == 0.0
    assert Z[0, 3] == 1.0
    assert np.allclose(Z, Z.T)
    assert np.array_equal(K, np.diag(Z.sum(axis=1)))
    assert np.array_equal(LZ, K - Z)


def test_ts_matrix():
    assert build_ts_matrix(1).tolist() == [[0.0]]
    U = build_ts_matrix(3)
    assert U.tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 0]]
    T = np.random.default_rng(0).random((3, 2))
    UT = U @ T
    assert np.array_equal(UT[:2], T[1:])
    assert not UT[2].any()


@given(st.integers(0, 2**32 - 1))
def test_laplacian_identity(seed):
    rng = np.random.default_rng(seed)
    m, r = rng.integers(1, 8), rng.integers(1, 4)
    Z = rng.random((m, m))
    Z = (Z + Z.T) / 2
    C = rng.standard_normal((m, r))
    LZ = np.diag(Z.sum(axis=1)) - Z
    lhs = np.trace(C.T @ LZ @ C)
    rhs = 0.5 * sum(Z[i, j] * np.sum((C[i] - C[j]) ** 2) for i in range(m) for j in range(m))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_constraint_set_shapes_and_windows():
    cons = build_constraints(generate_synthetic(12, 3, 5, 0.05, seed=0))
    assert (cons.n, cons.m, cons.q) == (12, 3, 5)
    w = cons.for_window(2)
    assert w.U.shape == (2, 2) and w.X is cons.X
    with pytest.raises(DataError):
        ConstraintSet(cons.X, cons.Y[:, :2], cons.Z, cons.K, cons.LZ, cons.U)
    with pytest.raises(ValueError):
        cons.X[0, 0] = 1.0


def test_q_override():
    cons = build_constraints(generate_synthetic(12, 3, 5, 0.05, seed=0), q=9)
    assert cons.U.shape == (9, 9)


def test_zero_constraints():
    z = ConstraintSet.zeros(4, 2, 3)
    assert not z.X.any() and not z.LZ.any() and z.U.shape == (3, 3)


def test_matrix_roundtrip(tmp_path, rng):
    a = rng.standard_normal((4, 3))
    write_matrix(a, tmp_path / "a.txt")
    assert np.array_equal(read_matrix(tmp_path / "a.txt"), a)
    (tmp_path / "b.txt").write_text("2 2\n1 2\n3\n")
    with pytest.raises(DataError):
        read_matrix(tmp_path / "b.txt")
