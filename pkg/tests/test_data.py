import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdtinfer.data import (
    DiffusionLog,
    SparseTensor4,
    assemble_cdt,
    extract_subtensor,
    generate_synthetic,
    log_from_tensor,
    planted_truth,
    read_event_log,
    read_tensor,
    synthetic_gaussian_cdt,
    time_slice,
    write_event_log,
    write_tensor,
)
from cdtinfer.errors import DataError
from cdtinfer.tucker import reconstruct_cells

from conftest import random_sparse


def test_empty_log_gives_empty_tensor():
    t = assemble_cdt(DiffusionLog(4, 2, 3, np.zeros((0, 4), int)))
    assert t.nnz == 0 and t.dims == (4, 4, 2, 3)


def test_duplicate_events_accumulate():
    t = assemble_cdt(DiffusionLog(8, 2, 4, [(2, 7, 1, 0), (2, 7, 1, 0)]))
    assert t.nnz == 1
    assert t.get((2, 7, 1, 0)) == 2.0


def test_distinct_events_one_each():
    ev = [(0, 1, 0, 0), (1, 2, 1, 3), (7, 7, 0, 2), (3, 4, 1, 1), (5, 0, 0, 3)]
    t = assemble_cdt(DiffusionLog(8, 2, 4, ev))
    assert t.nnz == 5
    assert np.all(t.vals == 1.0)
    assert t.support == set(ev)


def test_out_of_range_event_is_named():
    with pytest.raises(DataError, match=r"\(0, 9, 0, 0\)"):
        DiffusionLog(8, 2, 4, [(0, 1, 0, 0), (0, 9, 0, 0)])


def test_log_is_immutable():
    log = DiffusionLog(3, 1, 1, [(0, 1, 0, 0)])
    with pytest.raises(ValueError):
        log.events[0, 0] = 2


def test_diffusion_filters_meme():
    log = DiffusionLog(3, 2, 1, [(0, 1, 0, 0), (1, 2, 1, 0), (2, 0, 1, 0)])
    assert len(log.diffusion(1)) == 2
    assert all(e.meme == 1 for e in log.diffusion(1))


def test_slice_of_empty_and_reindex():
    assert time_slice(SparseTensor4.empty((2, 2, 1, 3)), 1).nnz == 0
    t = SparseTensor4.from_entries((2, 2, 1, 2), [(0, 1, 0, 0), (1, 0, 0, 1), (1, 1, 0, 1)], [1, 2, 3])
    s = time_slice(t, 1)
    assert s.dims == (2, 2, 1, 1)
    assert s.support == {(1, 0, 0, 0), (1, 1, 0, 0)}
    with pytest.raises(DataError):
        time_slice(t, 2)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 60))
def test_slices_partition_nnz(seed, q, nnz):
    t = random_sparse((4, 4, 2, q), nnz, np.random.default_rng(seed))
    assert sum(time_slice(t, k).nnz for k in range(q)) == t.nnz
    assert t.slice_nnz().sum() == t.nnz


def test_full_window_is_identity(rng):
    t = random_sparse((5, 5, 2, 6), 40, rng)
    assert extract_subtensor(t, (1, 6)) == t


def test_six_slice_windows_contain_named_slices(rng):
    t = random_sparse((5, 5, 2, 6), 80, rng)
    for s, q in [(1, 3), (2, 5), (3, 6)]:
        sub = extract_subtensor(t, (s, q))
        assert sub.dims[3] == q - s + 1
        full = {(i, j, k, l + s - 1) for i, j, k, l in sub.support}
        assert full == {c for c in t.support if s - 1 <= c[3] <= q - 1}


def test_overlapping_windows_share_slices(rng):
    t = random_sparse((5, 5, 2, 6), 80, rng)
    a, b = extract_subtensor(t, (1, 3)), extract_subtensor(t, (2, 5))
    # slices 2..3 sit at local times 1..2 in a and 0..1 in b
    in_a = {(i, j, k, l + 0): a.get((i, j, k, l)) for i, j, k, l in a.support if l >= 1}
    in_b = {(i, j, k, l + 1): b.get((i, j, k, l)) for i, j, k, l in b.support if l <= 1}
    assert in_a == in_b and len(in_a) > 0


def test_bad_window_rejected(rng):
    t = random_sparse((3, 3, 1, 4), 5, rng)
    for w in [(0, 2), (3, 2), (2, 5)]:
        with pytest.raises(DataError):
            extract_subtensor(t, w)


def test_from_entries_sums_and_sorts():
    t = SparseTensor4.from_entries((2, 2, 1, 2), [(1, 1, 0, 1), (0, 0, 0, 0), (1, 1, 0, 1)], [1.0, 2.0, 3.0])
    assert t.idx.tolist() == [[0, 0, 0, 0], [1, 1, 0, 1]]
    assert t.vals.tolist() == [2.0, 4.0]


def test_gaussian_determinism_and_density():
    a = generate_synthetic(20, 2, 5, 0.01, mode="gaussian-magnitude", seed=3)
    b = generate_synthetic(20, 2, 5, 0.01, mode="gaussian-magnitude", seed=3)
    assert a == b
    assert assemble_cdt(a).nnz == round(0.01 * 20 * 20 * 2 * 5)


def test_planted_determinism():
    assert generate_synthetic(30, 3, 6, 0.02, seed=1) == generate_synthetic(30, 3, 6, 0.02, seed=1)
    assert generate_synthetic(30, 3, 6, 0.02, seed=1) != generate_synthetic(30, 3, 6, 0.02, seed=2)


def test_density_boundaries():
    with pytest.raises(DataError):
        generate_synthetic(10, 2, 3, 0.0)
    assert len(generate_synthetic(10, 2, 3, 1e-6, mode="gaussian-magnitude")) == 0
    assert len(generate_synthetic(10, 2, 3, 1e-6)) == 0


def test_table1_scale_dims():
    for n in (1000, 5000):
        t = synthetic_gaussian_cdt(n, 2, 35, 1e-6, seed=0)
        assert t.dims == (n, n, 2, 35)
        assert t.nnz == round(1e-6 * n * n * 70)


def test_raw_gaussian_keeps_sign():
    t = synthetic_gaussian_cdt(20, 2, 5, 0.05, seed=0, raw=True)
    assert (t.vals < 0).any()
    assert (synthetic_gaussian_cdt(20, 2, 5, 0.05, seed=0).vals >= 1).all()


def test_planted_counts_follow_truth():
    truth, t = planted_truth(30, 3, 6, 0.05, seed=0)
    v = reconstruct_cells(truth, t.idx)
    assert np.corrcoef(v, t.vals)[0, 1] > 0.9
    # kept cells are the largest planted values
    assert v.min() >= np.quantile(reconstruct_cells(truth, np.argwhere(np.ones(t.dims))), 0.9)


def test_aux_period_shares_nodes_not_time():
    a, b = planted_truth(30, 3, 6, 0.05, seed=0), planted_truth(30, 3, 6, 0.05, seed=0, period=1)
    assert np.array_equal(a[0].S, b[0].S) and np.array_equal(a[0].C, b[0].C)
    assert not np.array_equal(a[0].T, b[0].T)


def test_event_log_roundtrip(tmp_path):
    log = generate_synthetic(15, 2, 4, 0.05, seed=0)
    write_event_log(log, tmp_path / "log.txt")
    assert read_event_log(tmp_path / "log.txt") == log


def test_log_from_tensor_roundtrip():
    log = generate_synthetic(15, 2, 4, 0.05, seed=0)
    assert assemble_cdt(log_from_tensor(assemble_cdt(log))) == assemble_cdt(log)


def test_malformed_line_named(tmp_path):
    lines = ["5 2 3"] + ["0 1 0 0"] * 15 + ["0 1 zero 0"]
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match=r"bad.txt:17"):
        read_event_log(tmp_path / "bad.txt")


def test_comments_and_blank_lines_skipped(tmp_path):
    (tmp_path / "log.txt").write_text("# header follows\n3 1 2\n\n0 1 0 1\n# done\n")
    assert len(read_event_log(tmp_path / "log.txt")) == 1


@given(st.integers(0, 2**32 - 1))
def test_tensor_file_roundtrip_exact(seed):
    t = random_sparse((4, 3, 2, 3), 12, np.random.default_rng(seed), positive=False)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "t.txt")
        write_tensor(t, p)
        assert read_tensor(p) == t


def test_tensor_threshold(tmp_path):
    t = SparseTensor4.from_entries((2, 2, 1, 1), [(0, 0, 0, 0), (1, 1, 0, 0)], [0.1, 2.0])
    write_tensor(t, tmp_path / "t.txt", threshold=0.5)
    assert read_tensor(tmp_path / "t.txt").support == {(1, 1, 0, 0)}
