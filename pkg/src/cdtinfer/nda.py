"""Constrained objective and the per-cell gradient-descent solver (NDA).

The objective is

    L = 1/2 eps + l_reg/2 gamma + l_sda/2 phi + l_nma/2 psi + l_mc/2 xi + l_ts/2 tau

with ``eps`` the squared error over observed cells, ``gamma`` the squared
norms of all parameters, ``phi = |X - S D^T|^2``, ``psi = |Y - D C^T|^2``,
``xi = tr(C^T L_Z C)`` and ``tau = |T - U T|^2`` (all Frobenius).

Each epoch visits every stored cell once and updates, in order, the
source row, destination row, meme row, time row and the core. Constraint
and regularization gradients are applied at every cell, so their pull
scales with how often a row is visited.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels
from .constraints import ConstraintSet
from .data import SparseTensor4
from .errors import DataError, DivergenceError
from .tucker import TuckerModel, init_model, matched_core_scale, reconstruct_cells

__all__ = [
    "HyperParams",
    "FitReport",
    "TERMS",
    "objective",
    "effective_weights",
    "cell_gradients",
    "reference_cell_update",
    "epoch_order",
    "sgd_epoch",
    "initial_model",
    "fit_nda",
    "write_loss_csv",
]

TERMS = ("eps", "gamma", "phi", "psi", "xi", "tau")

# reported lambda_1..lambda_5 values of the accuracy experiments
REPORTED_LAMBDAS = (1.0, 1.0, 0.3, 0.05, 0.05)


@dataclass(frozen=True)
class HyperParams:
    rank: int = 3
    eta: float = 0.001
    epsilon: float = 0.01
    max_epochs: int = 100
    lambda_sda: float = 1.0
    lambda_nma: float = 1.0
    lambda_mc: float = 0.3
    lambda_ts: float = 0.05
    lambda_reg: float = 0.05
    use_sda: bool = True
    use_nma: bool = True
    use_mc: bool = True
    use_ts: bool = True
    seed: int = 0
    order: str = "lexicographic"
    normalize_constraints: bool = False
    init_scale: float = 0.4
    init_core: str = "match"

    def __post_init__(self):
        if self.eta < 0:
            raise DataError(f"eta must be >= 0, got {self.eta}")
        if self.epsilon <= 0:
            raise DataError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_epochs < 1 or self.rank < 1:
            raise DataError("max_epochs and rank must be >= 1")
        for name in ("lambda_sda", "lambda_nma", "lambda_mc", "lambda_ts", "lambda_reg"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be nonnegative")
        if self.init_scale <= 0:
            raise DataError(f"init_scale must be > 0, got {self.init_scale}")
        if self.init_core not in ("match", "uniform"):
            raise DataError(f"init_core must be 'match' or 'uniform', got {self.init_core!r}")
        if self.order not in ("lexicographic", "shuffled"):
            raise DataError(f"order must be 'lexicographic' or 'shuffled', got {self.order!r}")

    @classmethod
    def with_reported_lambdas(cls, convention="algorithm", **kw) -> "HyperParams":
        """Map the five reported lambda values onto named weights.

        ``algorithm``: (sda, nma, mc, ts, reg), the order used by the update
        rules. ``objective``: (reg, sda, nma, mc, ts), the order of the loss.
        """
        l1, l2, l3, l4, l5 = REPORTED_LAMBDAS
        if convention == "algorithm":
            lam = dict(lambda_sda=l1, lambda_nma=l2, lambda_mc=l3, lambda_ts=l4, lambda_reg=l5)
        elif convention == "objective":
            lam = dict(lambda_reg=l1, lambda_sda=l2, lambda_nma=l3, lambda_mc=l4, lambda_ts=l5)
        else:
            raise DataError(f"unknown lambda convention {convention!r}")
        return cls(**{**lam, **kw})

    def replace(self, **kw) -> "HyperParams":
        return replace(self, **kw)

    def toggles(self) -> tuple[bool, bool, bool, bool]:
        return (self.use_sda, self.use_nma, self.use_mc, self.use_ts)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitReport:
    loss_trace: list = field(default_factory=list)
    terms_trace: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False
    wall_time: float = 0.0
    initial_loss: float = float("nan")
    initial_terms: dict = field(default_factory=dict)
    cells_processed: int = 0


def effective_weights(hp: HyperParams, nnz: int = 1, for_gradient: bool = False) -> np.ndarray:
    """(reg, sda, nma, mc, ts) with disabled constraints zeroed."""
    w = np.array([
        hp.lambda_reg,
        hp.lambda_sda * hp.use_sda,
        hp.lambda_nma * hp.use_nma,
        hp.lambda_mc * hp.use_mc,
        hp.lambda_ts * hp.use_ts,
    ], dtype=np.float64)
    if for_gradient and hp.normalize_constraints and nnz > 0:
        w[1:] /= nnz
    return w


def _check_dims(model: TuckerModel, cdt: SparseTensor4, cons: ConstraintSet):
    if model.dims != cdt.dims:
        raise DataError(f"model dims {model.dims} do not match tensor dims {cdt.dims}")
    n, _, m, q = cdt.dims
    if (cons.n, cons.m, cons.q) != (n, m, q):
        raise DataError(f"constraint dims (N={cons.n}, M={cons.m}, Q={cons.q}) do not match tensor {cdt.dims}")


def _sq_residual_rows(A, B, target, chunk=1024):
    """|target - A B^T|^2 without materializing more than ``chunk`` rows."""
    total = 0.0
    for start in range(0, A.shape[0], chunk):
        diff = target[start:start + chunk] - A[start:start + chunk] @ B.T
        total += float(np.sum(diff * diff))
    return total


def objective(model: TuckerModel, cdt: SparseTensor4, cons: ConstraintSet, hp: HyperParams):
    """Total loss and the raw (unweighted) value of each term."""
    _check_dims(model, cdt, cons)
    res = reconstruct_cells(model, cdt.idx) - cdt.vals
    S, D, C, T = model.factors()
    terms = {
        "eps": float(res @ res),
        "gamma": float(sum(np.sum(a * a) for a in (model.core, S, D, C, T))),
        "phi": _sq_residual_rows(S, D, cons.X),
        "psi": _sq_residual_rows(D, C, cons.Y),
        "xi": float(np.trace(C.T @ cons.LZ @ C)),
        "tau": float(np.sum((T - cons.U @ T) ** 2)),
    }
    w = effective_weights(hp)
    total = 0.5 * terms["eps"] + 0.5 * float(
        w[0] * terms["gamma"] + w[1] * terms["phi"] + w[2] * terms["psi"] + w[3] * terms["xi"] + w[4] * terms["tau"]
    )
    return total, terms


def cell_gradients(model: TuckerModel, idx, value: float, cons: ConstraintSet, w) -> dict:
    """Gradients of one cell's loss contribution w.r.t. the rows it touches.

    Every gradient is taken at the current state. ``w`` is the weight
    vector from :func:`effective_weights`. Returns a dict keyed by
    ``S, D, C, T, core``.
    """
    i, j, k, l = (int(v) for v in idx)
    G = model.core
    S, D, C, T = model.factors()
    err = float(np.einsum("abcd,a,b,c,d->", G, S[i], D[j], C[k], T[l])) - value
    IU = np.eye(T.shape[0]) - cons.U
    return {
        "S": w[0] * S[i] + w[1] * (S[i] @ D.T - cons.X[i]) @ D
        + err * np.einsum("abcd,b,c,d->a", G, D[j], C[k], T[l]),
        "D": w[0] * D[j] + w[1] * (S @ D[j] - cons.X[:, j]) @ S + w[2] * (D[j] @ C.T - cons.Y[j]) @ C
        + err * np.einsum("abcd,a,c,d->b", G, S[i], C[k], T[l]),
        "C": w[0] * C[k] + w[2] * (D @ C[k] - cons.Y[:, k]) @ D + w[3] * (cons.LZ @ C)[k]
        + err * np.einsum("abcd,a,b,d->c", G, S[i], D[j], T[l]),
        "T": w[0] * T[l] + w[4] * (IU.T @ IU @ T)[l]
        + err * np.einsum("abcd,a,b,c->d", G, S[i], D[j], C[k]),
        "core": w[0] * G + err * np.einsum("a,b,c,d->abcd", S[i], D[j], C[k], T[l]),
    }


def reference_cell_update(model: TuckerModel, idx, value: float, cons: ConstraintSet, eta: float, w) -> TuckerModel:
    """Plain-numpy version of one cell's five sequential updates (returns a new model).

    The residual is computed once, before any update; each later update
    sees the rows already changed within the same cell.
    """
    m = model.copy()
    i, j, k, l = (int(v) for v in idx)
    err = float(np.einsum("abcd,a,b,c,d->", m.core, m.S[i], m.D[j], m.C[k], m.T[l])) - value
    G, S, D, C, T = m.core, m.S, m.D, m.C, m.T
    IU = np.eye(T.shape[0]) - cons.U
    S[i] -= eta * (w[0] * S[i] + w[1] * (S[i] @ D.T - cons.X[i]) @ D
                   + err * np.einsum("abcd,b,c,d->a", G, D[j], C[k], T[l]))
    D[j] -= eta * (w[0] * D[j] + w[1] * (S @ D[j] - cons.X[:, j]) @ S + w[2] * (D[j] @ C.T - cons.Y[j]) @ C
                   + err * np.einsum("abcd,a,c,d->b", G, S[i], C[k], T[l]))
    C[k] -= eta * (w[0] * C[k] + w[2] * (D @ C[k] - cons.Y[:, k]) @ D + w[3] * (cons.LZ @ C)[k]
                   + err * np.einsum("abcd,a,b,d->c", G, S[i], D[j], T[l]))
    T[l] -= eta * (w[0] * T[l] + w[4] * (IU.T @ IU @ T)[l]
                   + err * np.einsum("abcd,a,b,c->d", G, S[i], D[j], C[k]))
    m.core -= eta * (w[0] * G + err * np.einsum("a,b,c,d->abcd", S[i], D[j], C[k], T[l]))
    return m


def epoch_order(nnz: int, hp: HyperParams, epoch: int = 0) -> np.ndarray:
    if hp.order == "lexicographic":
        return np.arange(nnz, dtype=np.int64)
    return np.random.default_rng((hp.seed, epoch)).permutation(nnz).astype(np.int64)


def sgd_epoch(model: TuckerModel, cdt: SparseTensor4, cons: ConstraintSet, hp: HyperParams,
              order=None, epoch: int = 0) -> TuckerModel:
    """Run one pass over the stored cells, updating ``model`` in place."""
    _check_dims(model, cdt, cons)
    if order is None:
        order = epoch_order(cdt.nnz, hp, epoch)
    order = np.ascontiguousarray(order, dtype=np.int64)
    w = effective_weights(hp, cdt.nnz, for_gradient=True)
    IU = np.eye(cons.q) - cons.U
    bad = _kernels.sgd_epoch_kernel(
        model.core, model.S, model.D, model.C, model.T,
        np.ascontiguousarray(cdt.idx), np.ascontiguousarray(cdt.vals), order,
        cons.X, cons.Y, cons.LZ, IU, float(hp.eta), w,
    )
    if bad >= 0:
        cell = tuple(int(v) for v in cdt.idx[order[bad]])
        raise DivergenceError(f"non-finite value at cell {cell} in epoch {epoch}", cell=cell, epoch=epoch)
    return model


def initial_model(cdt: SparseTensor4, hp: HyperParams) -> TuckerModel:
    """Seeded starting point.

    Factors are uniform on ``[0, init_scale]``. With ``init_core='match'``
    the core bound is chosen so initial cells match the mean stored value
    in expectation; a tiny start sits near the zero saddle where
    gradients vanish and the fit never leaves it.
    """
    core = None
    if hp.init_core == "match" and cdt.nnz:
        core = matched_core_scale(float(np.mean(cdt.vals)), hp.rank, hp.init_scale)
    return init_model(cdt.dims, hp.rank, hp.seed, hp.init_scale, core)


def fit_nda(cdt: SparseTensor4, cons: ConstraintSet, hp: HyperParams = HyperParams(),
            model: TuckerModel | None = None):
    """Fit a Tucker model to the stored cells until the loss change drops below ``epsilon``.

    Stopping at ``max_epochs`` is not an error: the report says
    ``converged=False``.
    """
    start = time.perf_counter()
    if model is None:
        model = initial_model(cdt, hp)
    report = FitReport()
    loss_a, terms = objective(model, cdt, cons, hp)
    report.initial_loss, report.initial_terms = loss_a, terms
    for epoch in range(1, hp.max_epochs + 1):
        sgd_epoch(model, cdt, cons, hp, epoch=epoch)
        report.cells_processed += cdt.nnz
        loss_b, terms = objective(model, cdt, cons, hp)
        if not np.isfinite(loss_b):
            raise DivergenceError(f"non-finite loss after epoch {epoch}", epoch=epoch)
        report.loss_trace.append(loss_b)
        report.terms_trace.append(terms)
        report.epochs_run = epoch
        if abs(loss_a - loss_b) < hp.epsilon:
            report.converged = True
            break
        loss_a = loss_b
    report.wall_time = time.perf_counter() - start
    return model, report


def write_loss_csv(report: FitReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        if not report.terms_trace:
            # aggregated window reports only carry totals
            out.writerow(["epoch", "total"])
            out.writerows([e, repr(v)] for e, v in enumerate(report.loss_trace, start=1))
            return
        out.writerow(["epoch", "total", *TERMS])
        for epoch, (total, terms) in enumerate(zip(report.loss_trace, report.terms_trace), start=1):
            out.writerow([epoch, repr(total), *(repr(terms[t]) for t in TERMS)])
