"""Infection event logs, the coexisting-diffusions tensor (CDT) and synthetic data.

All indices are 0-based internally. Time windows are given in the 1-based,
inclusive ``[s, q]`` convention so that reports read the same as the
window notation used throughout the docs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataError

__all__ = [
    "InfectionEvent",
    "DiffusionLog",
    "SparseTensor4",
    "assemble_cdt",
    "time_slice",
    "extract_subtensor",
    "log_from_tensor",
    "generate_synthetic",
    "synthetic_gaussian_cdt",
    "sample_planted_model",
    "read_event_log",
    "write_event_log",
    "read_tensor",
    "write_tensor",
]

VALUE_MODES = ("gaussian-magnitude", "planted-tucker")
GAUSSIAN_COUNT_SCALE = 3.0


class InfectionEvent(NamedTuple):
    source: int
    dest: int
    meme: int
    time: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_events(events: np.ndarray, n: int, m: int, q: int) -> None:
    if events.size == 0:
        return
    bounds = np.array([n, n, m, q])
    bad = np.nonzero(((events < 0) | (events >= bounds)).any(axis=1))[0]
    if bad.size:
        e = InfectionEvent(*(int(v) for v in events[bad[0]]))
        raise DataError(
            f"event #{bad[0]} {tuple(e)} is out of range for dims N={n}, M={m}, Q={q}"
        )


@dataclass(frozen=True, eq=False)
class DiffusionLog:
    """Multiset of infections over ``n`` nodes, ``m`` memes and ``q`` time points.

    ``events`` is an ``(E, 4)`` integer array of (source, dest, meme, time)
    rows. Repeated rows are repeated infections.
    """

    n: int
    m: int
    q: int
    events: np.ndarray

    def __post_init__(self):
        if min(self.n, self.m, self.q) <= 0:
            raise DataError(f"log dims must be positive, got N={self.n} M={self.m} Q={self.q}")
        ev = np.asarray(self.events, dtype=np.int64).reshape(-1, 4).copy()
        _check_events(ev, self.n, self.m, self.q)
        object.__setattr__(self, "events", _frozen(ev))

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n, self.m, self.q)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[InfectionEvent]:
        for row in self.events:
            yield InfectionEvent(*(int(v) for v in row))

    def diffusion(self, meme: int) -> "DiffusionLog":
        """The sub-multiset of infections carrying ``meme``."""
        return DiffusionLog(self.n, self.m, self.q, self.events[self.events[:, 2] == meme])

    def __eq__(self, other):
        if not isinstance(other, DiffusionLog):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.events, other.events)


@dataclass(frozen=True, eq=False)
class SparseTensor4:
    """Coordinate-form 4th-order tensor.

    ``idx`` rows are unique and sorted lexicographically; ``vals`` holds the
    matching stored values. Use :meth:`from_entries` to build one from
    possibly duplicated coordinates.
    """

    dims: tuple[int, int, int, int]
    idx: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 4 or min(dims) <= 0:
            raise DataError(f"tensor dims must be 4 positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "idx", _frozen(np.asarray(self.idx, dtype=np.int64).reshape(-1, 4)))
        object.__setattr__(self, "vals", _frozen(np.asarray(self.vals, dtype=np.float64).reshape(-1)))
        if len(self.idx) != len(self.vals):
            raise DataError("idx and vals lengths differ")

    @classmethod
    def from_entries(cls, dims, idx, vals) -> "SparseTensor4":
        """Build from coordinates, summing duplicates and sorting."""
        dims = tuple(int(d) for d in dims)
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 4)
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if len(idx) == 0:
            return cls(dims, np.zeros((0, 4), np.int64), np.zeros(0))
        if ((idx < 0) | (idx >= np.array(dims))).any():
            raise DataError(f"entry index out of range for dims {dims}")
        flat = np.ravel_multi_index(idx.T, dims)
        uniq, inv = np.unique(flat, return_inverse=True)
        summed = np.zeros(len(uniq))
        np.add.at(summed, inv, vals)
        out_idx = np.stack(np.unravel_index(uniq, dims), axis=1)
        return cls(dims, out_idx, summed)

    @classmethod
    def empty(cls, dims) -> "SparseTensor4":
        return cls(tuple(dims), np.zeros((0, 4), np.int64), np.zeros(0))

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @property
    def support(self) -> set[tuple[int, int, int, int]]:
        return {tuple(int(v) for v in row) for row in self.idx}

    def get(self, index, default=0.0) -> float:
        flat = np.ravel_multi_index(np.asarray(index).reshape(4, 1), self.dims)[0]
        pos = np.searchsorted(self._flat(), flat)
        if pos < self.nnz and self._flat()[pos] == flat:
            return float(self.vals[pos])
        return default

    def _flat(self) -> np.ndarray:
        if self.nnz == 0:
            return np.zeros(0, np.int64)
        return np.ravel_multi_index(self.idx.T, self.dims)

    def slice_nnz(self) -> np.ndarray:
        """Number of stored cells per time index."""
        return np.bincount(self.idx[:, 3], minlength=self.dims[3])

    def __eq__(self, other):
        if not isinstance(other, SparseTensor4):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.idx, other.idx)
            and np.array_equal(self.vals, other.vals)
        )


def assemble_cdt(log: DiffusionLog) -> SparseTensor4:
    """Count occurrences of each (source, dest, meme, time) infection."""
    _check_events(log.events, log.n, log.m, log.q)
    dims = (log.n, log.n, log.m, log.q)
    return SparseTensor4.from_entries(dims, log.events, np.ones(len(log.events)))


def time_slice(t: SparseTensor4, q: int) -> SparseTensor4:
    """Cells at time index ``q`` (0-based), reindexed to a length-1 time mode."""
    if not 0 <= q < t.dims[3]:
        raise DataError(f"time index {q} out of range [0, {t.dims[3]})")
    keep = t.idx[:, 3] == q
    idx = t.idx[keep].copy()
    idx[:, 3] = 0
    return SparseTensor4((*t.dims[:3], 1), idx, t.vals[keep])


def extract_subtensor(t: SparseTensor4, window) -> SparseTensor4:
    """Sub-tensor for the 1-based inclusive window ``[s, q]``."""
    s, q = (int(w) for w in window)
    if not 1 <= s <= q <= t.dims[3]:
        raise DataError(f"invalid window [{s},{q}] for Q={t.dims[3]}")
    keep = (t.idx[:, 3] >= s - 1) & (t.idx[:, 3] <= q - 1)
    idx = t.idx[keep].copy()
    idx[:, 3] -= s - 1
    return SparseTensor4((*t.dims[:3], q - s + 1), idx, t.vals[keep])


def log_from_tensor(t: SparseTensor4) -> DiffusionLog:
    """Expand a count tensor back into an event log (cells with value <= 0 are dropped)."""
    counts = np.rint(t.vals).astype(np.int64)
    counts[counts < 0] = 0
    events = np.repeat(t.idx, counts, axis=0)
    return DiffusionLog(t.dims[0], t.dims[2], t.dims[3], events)


def _cell_budget(n, m, q, density):
    if not 0 < density <= 1:
        raise DataError(f"density must be in (0, 1], got {density}")
    if min(n, m, q) <= 0:
        raise DataError("n, m, q must be positive")
    total = n * n * m * q
    return total, int(round(density * total))


def synthetic_gaussian_cdt(n, m, q, density, seed, raw=False) -> SparseTensor4:
    """Random-support CDT with standard-normal cell values.

    With ``raw=False`` each draw x becomes the count ``max(1, round(3|x|))``;
    ``raw=True`` keeps the signed normal draws (timing runs only).
    """
    total, k = _cell_budget(n, m, q, density)
    dims = (n, n, m, q)
    rng = np.random.default_rng(seed)
    if k == 0:
        return SparseTensor4.empty(dims)
    flat = np.sort(rng.choice(total, size=k, replace=False))
    x = rng.standard_normal(k)
    if not raw:
        x = np.maximum(1.0, np.rint(np.abs(x) * GAUSSIAN_COUNT_SCALE))
    idx = np.stack(np.unravel_index(flat, dims), axis=1)
    return SparseTensor4(dims, idx, x)


def _smooth_time_factors(q, rank, rng):
    t_axis = np.linspace(0.0, 1.0, q)
    centers = rng.uniform(0.0, 1.0, size=rank)
    widths = rng.uniform(0.25, 0.6, size=rank)
    return 0.2 + np.exp(-0.5 * ((t_axis[:, None] - centers[None, :]) / widths[None, :]) ** 2)


def sample_planted_model(n, m, q, rank, rng, period_rng=None):
    """Nonnegative rank-``rank`` Tucker ground truth with clustered nodes and smooth time.

    Each node and meme leans on one dominant latent component, so affinity
    and co-occurrence statistics of the generated log carry signal about
    the factors. Node rows carry a lognormal activity level (heavy-tailed
    counts); time factors are smooth bumps, drawn from ``period_rng`` when
    given so that other observation periods share everything but time.
    """
    from .tucker import TuckerModel

    def clustered(rows):
        f = 0.15 * rng.random((rows, rank))
        grp = rng.integers(0, rank, size=rows)
        f[np.arange(rows), grp] += rng.uniform(0.6, 1.0, size=rows)
        return f

    T = _smooth_time_factors(q, rank, rng)
    core = 0.2 * rng.random((rank,) * 4)
    for r in range(rank):
        core[r, r, r, :] += 1.0
    S = clustered(n) * rng.lognormal(0.0, 0.5, size=(n, 1))
    D = clustered(n) * rng.lognormal(0.0, 0.5, size=(n, 1))
    C = clustered(m)
    if period_rng is not None:
        T = _smooth_time_factors(q, rank, period_rng)
    return TuckerModel(core, S, D, C, T)


def _planted_counts(n, m, q, density, seed, rank, period):
    from .tucker import reconstruct_slice

    total, k = _cell_budget(n, m, q, density)
    dims = (n, n, m, q)
    rng = np.random.default_rng(seed)
    period_rng = np.random.default_rng((seed, period)) if period else None
    truth = sample_planted_model(n, m, q, rank, rng, period_rng)
    if k == 0:
        return truth, SparseTensor4.empty(dims)
    dense = np.stack([reconstruct_slice(truth, t) for t in range(q)], axis=3)
    flat = dense.reshape(-1)
    # tiny jitter breaks ties deterministically
    flat = flat + 1e-12 * rng.random(flat.size)
    top = np.sort(np.argpartition(flat, total - k)[total - k:])
    kept = flat[top]
    counts = np.maximum(1.0, np.rint(kept / kept.min()))
    idx = np.stack(np.unravel_index(top, dims), axis=1)
    return truth, SparseTensor4(dims, idx, counts)


def generate_synthetic(n, m, q, density, mode="planted-tucker", seed=0, rank=3, period=0) -> DiffusionLog:
    """Synthetic event log.

    ``gaussian-magnitude`` samples a uniformly random support and turns
    standard-normal draws into counts. ``planted-tucker`` keeps the top
    ``density`` fraction of a dense nonnegative rank-``rank`` Tucker tensor,
    with counts proportional to the planted value (smallest kept value -> 1).
    A nonzero ``period`` gives another observation period of the same
    planted network (same node and meme factors, new time factors), which
    is the intended auxiliary log for building constraints.
    Deterministic for a fixed seed.
    """
    if mode == "gaussian-magnitude":
        t = synthetic_gaussian_cdt(n, m, q, density, seed + period)
    elif mode == "planted-tucker":
        _, t = _planted_counts(n, m, q, density, seed, rank, period)
    else:
        raise DataError(f"unknown value mode {mode!r}; expected one of {VALUE_MODES}")
    return log_from_tensor(t)


def planted_truth(n, m, q, density, seed=0, rank=3, period=0):
    """Ground-truth model and count tensor behind ``generate_synthetic(..., 'planted-tucker')``."""
    return _planted_counts(n, m, q, density, seed, rank, period)


# --- text formats -------------------------------------------------------------

def _parse_ints(line, lineno, count, path):
    parts = line.split()
    if len(parts) != count:
        raise DataError(f"{path}:{lineno}: expected {count} integers, got {len(parts)} fields")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-integer field in {line.strip()!r}") from None


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip() and not line.lstrip().startswith("#"):
                yield lineno, line


def read_event_log(path) -> DiffusionLog:
    """Read ``N M Q`` header then one ``source dest meme time`` line per event."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: missing 'N M Q' header") from None
    n, m, q = _parse_ints(header, lineno, 3, path)
    if min(n, m, q) <= 0:
        raise DataError(f"{path}:{lineno}: dims must be positive")
    bounds = (n, n, m, q)
    rows = []
    for lineno, line in lines:
        ev = _parse_ints(line, lineno, 4, path)
        if any(not 0 <= v < b for v, b in zip(ev, bounds)):
            raise DataError(f"{path}:{lineno}: event {tuple(ev)} out of range for N={n} M={m} Q={q}")
        rows.append(ev)
    return DiffusionLog(n, m, q, np.array(rows, dtype=np.int64).reshape(-1, 4))


def write_event_log(log: DiffusionLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{log.n} {log.m} {log.q}\n")
        for row in log.events:
            fh.write(f"{row[0]} {row[1]} {row[2]} {row[3]}\n")


def read_tensor(path) -> SparseTensor4:
    """Read the coordinate interchange format written by :func:`write_tensor`."""
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: missing dims header") from None
    dims = _parse_ints(header, lineno, 4, path)
    idx, vals = [], []
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 'i j m q value'")
        try:
            idx.append([int(p) for p in parts[:4]])
            vals.append(float(parts[4]))
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    return SparseTensor4.from_entries(dims, np.array(idx, np.int64).reshape(-1, 4), vals)


def write_tensor(t: SparseTensor4, path, threshold=None) -> None:
    """Write ``I1 I2 I3 I4`` then ``i j m q value`` lines; values use repr for exact round-trip.

    With ``threshold`` only cells with ``|value| > threshold`` are written.
    """
    keep = np.ones(t.nnz, bool) if threshold is None else np.abs(t.vals) > threshold
    with open(Path(path), "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(d) for d in t.dims) + "\n")
        for row, v in zip(t.idx[keep], t.vals[keep]):
            fh.write(f"{row[0]} {row[1]} {row[2]} {row[3]} {float(v)!r}\n")
