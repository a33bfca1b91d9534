"""Side-information matrices that regularize the CDT factors.

* ``X`` (N x N) source-destination affinity, a mid-rank score of how often
  a source reaches each of its neighbours.
* ``Y`` (N x M) node-meme affinity, the meme distribution of each node's
  inbound infections.
* ``Z`` (M x M) meme correlation, the Jaccard overlap of infected node sets,
  with degree matrix ``K`` and Laplacian ``L_Z = K - Z``.
* ``U`` (Q x Q) temporal shift with ones on the superdiagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import DiffusionLog
from .errors import DataError

__all__ = [
    "ReactionGraph",
    "ConstraintSet",
    "reaction_graph",
    "build_sda",
    "build_nma",
    "build_mc",
    "build_ts_matrix",
    "build_constraints",
    "read_matrix",
    "write_matrix",
]


@dataclass(frozen=True)
class ReactionGraph:
    """Reaction counts ``f[(i, j)]`` of node i towards node j; ``F_i`` = recorded j's."""

    n: int
    reactions: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        for (i, j), f in self.reactions.items():
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DataError(f"reaction ({i}, {j}) out of range for n={self.n}")
            if f < 1:
                raise DataError(f"reaction count for ({i}, {j}) must be >= 1, got {f}")

    def neighbors(self, i: int) -> dict[int, int]:
        return {j: f for (a, j), f in self.reactions.items() if a == i}


def reaction_graph(log: DiffusionLog) -> ReactionGraph:
    """Count infections per (source, dest) pair.

    The source is the row index so that the affinity matrix lines up with
    the (source, dest) modes of the CDT.
    """
    pairs, counts = np.unique(log.events[:, :2], axis=0, return_counts=True)
    return ReactionGraph(log.n, {(int(i), int(j)): int(c) for (i, j), c in zip(pairs, counts)})


def build_sda(g: ReactionGraph) -> np.ndarray:
    X = np.zeros((g.n, g.n))
    rows: dict[int, list[tuple[int, int]]] = {}
    for (i, j), f in g.reactions.items():
        rows.setdefault(i, []).append((j, f))
    for i, items in rows.items():
        cols = np.array([j for j, _ in items])
        f = np.array([c for _, c in items], dtype=np.float64)
        ordered = np.sort(f)
        less = np.searchsorted(ordered, f, side="left")
        equal = np.searchsorted(ordered, f, side="right") - less
        # v_j itself is among the ties, so every neighbour scores > 0
        X[i, cols] = (less + 0.5 * equal) / len(f)
    return X


def build_nma(log: DiffusionLog) -> np.ndarray:
    counts = np.zeros((log.n, log.m))
    np.add.at(counts, (log.events[:, 1], log.events[:, 2]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def build_mc(log: DiffusionLog) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jaccard matrix of per-meme destination sets, its degree matrix and Laplacian."""
    member = np.zeros((log.m, log.n), dtype=np.float64)
    member[log.events[:, 2], log.events[:, 1]] = 1.0
    inter = member @ member.T
    sizes = np.diag(inter)
    union = sizes[:, None] + sizes[None, :] - inter
    Z = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    K = np.diag(Z.sum(axis=1))
    return Z, K, K - Z


def build_ts_matrix(q: int) -> np.ndarray:
    if q < 1:
        raise DataError(f"time count must be >= 1, got {q}")
    return np.eye(q, k=1)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    LZ: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        for name in ("X", "Y", "Z", "K", "LZ", "U"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        n, m, q = self.n, self.m, self.q
        shapes = {"X": (n, n), "Y": (n, m), "Z": (m, m), "K": (m, m), "LZ": (m, m), "U": (q, q)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DataError(f"constraint {name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def q(self) -> int:
        return self.U.shape[0]

    @classmethod
    def zeros(cls, n, m, q) -> "ConstraintSet":
        z = np.zeros((m, m))
        return cls(np.zeros((n, n)), np.zeros((n, m)), z, z, z, build_ts_matrix(q))

    def for_window(self, width: int) -> "ConstraintSet":
        """Same X, Y, Z with the shift matrix of a ``width``-long window."""
        return ConstraintSet(self.X, self.Y, self.Z, self.K, self.LZ, build_ts_matrix(width))

    def __eq__(self, other):
        if not isinstance(other, ConstraintSet):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("X", "Y", "Z", "K", "LZ", "U"))


def build_constraints(aux: DiffusionLog, q: int | None = None) -> ConstraintSet:
    """All four constraints from an auxiliary log; ``q`` overrides the time length of ``U``."""
    Z, K, LZ = build_mc(aux)
    return ConstraintSet(
        X=build_sda(reaction_graph(aux)),
        Y=build_nma(aux),
        Z=Z,
        K=K,
        LZ=LZ,
        U=build_ts_matrix(aux.q if q is None else q),
    )


def write_matrix(a: np.ndarray, path) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a.tolist():
            fh.write(" ".join(map(repr, row)) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: missing dims header")
    try:
        rows, cols = (int(v) for v in lines[0].split())
        data = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(data) != rows or any(len(r) != cols for r in data):
        raise DataError(f"{path}: body does not match header {rows}x{cols}")
    return np.array(data, dtype=np.float64).reshape(rows, cols)
