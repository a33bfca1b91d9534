"""Tucker model for the CDT: a core tensor times one factor matrix per mode.

Modes are (source, destination, meme, time) with factors ``S, D, C, T``.
Dense reconstruction is only ever done one time slice at a time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError

__all__ = [
    "TuckerModel",
    "init_model",
    "matched_core_scale",
    "reconstruct_cell",
    "reconstruct_cells",
    "contracted_row_gradient",
    "reconstruct_slice",
    "save_checkpoint",
    "load_checkpoint",
    "DEFAULT_SLICE_BUDGET",
]

# max cells (N*N*M) materialized by reconstruct_slice
DEFAULT_SLICE_BUDGET = 50_000_000

_FACTORS = ("S", "D", "C", "T")


@dataclass(eq=False)
class TuckerModel:
    core: np.ndarray
    S: np.ndarray
    D: np.ndarray
    C: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        self.core = np.ascontiguousarray(self.core, dtype=np.float64)
        R = self.core.shape[0]
        if self.core.shape != (R,) * 4:
            raise DataError(f"core must be R^4, got {self.core.shape}")
        for name in _FACTORS:
            f = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if f.ndim != 2 or f.shape[1] != R:
                raise DataError(f"factor {name} must have {R} columns, got shape {f.shape}")
            setattr(self, name, f)
        if self.S.shape[0] != self.D.shape[0]:
            raise DataError("S and D must have the same number of rows")

    @property
    def rank(self) -> int:
        return self.core.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.S.shape[0], self.D.shape[0], self.C.shape[0], self.T.shape[0])

    def factors(self):
        return (self.S, self.D, self.C, self.T)

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.core.copy(), *(f.copy() for f in self.factors()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.core, *self.factors()))

    def __eq__(self, other):
        if not isinstance(other, TuckerModel):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip((self.core, *self.factors()), (other.core, *other.factors()))
        )


def init_model(dims, rank=3, seed=0, scale=0.1, core_scale=None) -> TuckerModel:
    """Random model with factor entries i.i.d. uniform on ``[0, scale]``.

    Core entries are uniform on ``[0, core_scale]`` (defaults to ``scale``).
    """
    if rank < 1:
        raise DataError(f"rank must be >= 1, got {rank}")
    n, n2, m, q = dims
    rng = np.random.default_rng(seed)
    core = rng.uniform(0.0, scale if core_scale is None else core_scale, (rank,) * 4)
    facs = [rng.uniform(0.0, scale, (rows, rank)) for rows in (n, n2, m, q)]
    return TuckerModel(core, *facs)


def matched_core_scale(mean_value, rank, scale) -> float:
    """Core bound making the expected initial cell equal ``mean_value``.

    With all entries uniform the expected cell is
    ``rank**4 * (core_scale / 2) * (scale / 2)**4``.
    """
    return 2.0 * abs(mean_value) / (rank**4 * (scale / 2.0) ** 4)


def _check_index(model, idx):
    idx = tuple(int(v) for v in idx)
    if len(idx) != 4 or any(not 0 <= v < d for v, d in zip(idx, model.dims)):
        raise DataError(f"index {idx} out of range for dims {model.dims}")
    return idx


def reconstruct_cell(model: TuckerModel, idx) -> float:
    i, j, k, l = _check_index(model, idx)
    return float(np.einsum("abcd,a,b,c,d->", model.core, model.S[i], model.D[j], model.C[k], model.T[l]))


def reconstruct_cells(model: TuckerModel, idx: np.ndarray) -> np.ndarray:
    """Vectorized :func:`reconstruct_cell` over an ``(n, 4)`` index array."""
    idx = np.ascontiguousarray(idx, dtype=np.int64).reshape(-1, 4)
    if len(idx) and ((idx < 0) | (idx >= np.array(model.dims))).any():
        raise DataError(f"cell index out of range for dims {model.dims}")
    return _kernels.recon_cells(model.core, *model.factors(), idx)


def contracted_row_gradient(model: TuckerModel, idx, mode: int) -> np.ndarray:
    """Derivative of cell ``idx`` w.r.t. the factor row of ``mode`` (1..4)."""
    if mode not in (1, 2, 3, 4):
        raise DataError(f"mode must be 1..4, got {mode}")
    i, j, k, l = _check_index(model, idx)
    s, d, c, t = model.S[i], model.D[j], model.C[k], model.T[l]
    G = model.core
    if mode == 1:
        return np.einsum("abcd,b,c,d->a", G, d, c, t)
    if mode == 2:
        return np.einsum("abcd,a,c,d->b", G, s, c, t)
    if mode == 3:
        return np.einsum("abcd,a,b,d->c", G, s, d, t)
    return np.einsum("abcd,a,b,c->d", G, s, d, c)


def reconstruct_slice(model: TuckerModel, q: int, budget: int = DEFAULT_SLICE_BUDGET) -> np.ndarray:
    """Dense ``N x N x M`` reconstruction at time index ``q``."""
    n, n2, m, Q = model.dims
    if not 0 <= q < Q:
        raise DataError(f"time index {q} out of range [0, {Q})")
    if n * n2 * m > budget:
        raise DataError(
            f"slice of {n}x{n2}x{m} cells exceeds the budget of {budget}; query cells individually"
        )
    g = np.tensordot(model.core, model.T[q], axes=([3], [0]))  # R x R x R
    g = np.tensordot(g, model.C, axes=([2], [1]))  # R x R x M
    g = np.tensordot(model.S, g, axes=([1], [0]))  # N x R x M
    return np.einsum("irk,jr->ijk", g, model.D)


def save_checkpoint(model: TuckerModel, path) -> None:
    """Text checkpoint: ``N M Q R`` header, core (row-major), then S, D, C, T rows."""
    n, _, m, q = model.dims
    R = model.rank
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {m} {q} {R}\n")
        for row in model.core.reshape(-1, R):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for f in model.factors():
            for row in f:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path) -> TuckerModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    try:
        n, m, q, R = (int(v) for v in lines[0].split())
        body = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from None
    expected = R**3 + 2 * n + m + q
    if body.shape != (expected, R):
        raise DataError(f"{path}: expected {expected} rows of {R} values, got {body.shape}")
    core = body[: R**3].reshape((R,) * 4)
    rest = body[R**3:]
    S, D, C, T = np.split(rest, np.cumsum([n, n, m]))
    return TuckerModel(core, S, D, C, T)
