"""Time-window parallel decomposition (TWPDA).

The time axis is covered by overlapping windows ``[s, q]`` (1-based,
inclusive) whose widths adapt to data density: window ``i`` starts at
``t_i`` with the previous window's width and widens until its sub-tensor
holds at least ``beta`` stored cells, or until it reaches ``t_Q``, which
ends the plan. Each window gets its own NDA fit; slices shared by several
windows are blended with weights ``2**-width`` normalized to sum to one.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet
from .data import SparseTensor4, extract_subtensor
from .errors import DataError, DivergenceError
from .nda import FitReport, HyperParams, fit_nda
from .tucker import TuckerModel, reconstruct_cells, reconstruct_slice, DEFAULT_SLICE_BUDGET

__all__ = [
    "TimeWindow",
    "WindowPlan",
    "plan_windows",
    "default_beta",
    "fit_window",
    "merge_weights",
    "MergedEstimate",
    "merge_slices",
    "fit_twpda",
    "TWPDAReport",
    "write_plan_csv",
]


@dataclass(frozen=True)
class TimeWindow:
    s: int
    q: int

    def __post_init__(self):
        if not 1 <= self.s <= self.q:
            raise DataError(f"invalid window [{self.s},{self.q}]")

    @property
    def width(self) -> int:
        return self.q - self.s + 1

    @property
    def weight(self) -> float:
        return 2.0 ** -self.width

    def __contains__(self, k: int) -> bool:
        return self.s <= k <= self.q

    def __str__(self):
        return f"[{self.s},{self.q}]"


@dataclass(frozen=True)
class WindowPlan:
    windows: tuple[TimeWindow, ...]
    alpha1: int
    beta: float
    n_times: int

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def covering(self, k: int) -> list[int]:
        """Indices of windows containing time point ``k`` (1-based)."""
        return [w for w, win in enumerate(self.windows) if k in win]


def default_beta(cdt: SparseTensor4) -> float:
    return max(32.0, cdt.nnz / cdt.dims[3])


def plan_windows(cdt: SparseTensor4, alpha1: int = 2, beta: float | None = None) -> WindowPlan:
    Q = cdt.dims[3]
    if beta is None:
        beta = default_beta(cdt)
    if not 1 <= alpha1 <= Q:
        raise DataError(f"alpha1 must be in [1, {Q}], got {alpha1}")
    if beta < 0:
        raise DataError(f"beta must be >= 0, got {beta}")
    prefix = np.concatenate([[0], np.cumsum(cdt.slice_nnz())])
    windows = []
    i, alpha = 1, alpha1
    while True:
        width = alpha
        while True:
            # reaching t_Q is checked first: it clamps the width and ends the plan
            if width >= Q - i + 1:
                width = Q - i + 1
                break
            if prefix[i - 1 + width] - prefix[i - 1] >= beta:
                break
            width += 1
        windows.append(TimeWindow(i, i + width - 1))
        if i + width - 1 == Q:
            break
        i, alpha = i + 1, width
    return WindowPlan(tuple(windows), alpha1, float(beta), Q)


def fit_window(cdt: SparseTensor4, cons: ConstraintSet, hp: HyperParams, window: TimeWindow):
    """NDA on the window's sub-tensor with a window-sized shift matrix."""
    sub = extract_subtensor(cdt, (window.s, window.q))
    return fit_nda(sub, cons.for_window(window.width), hp)


def merge_weights(plan: WindowPlan) -> dict[int, list[tuple[int, float]]]:
    """For each time point k (1-based): (window index, normalized weight) in start order."""
    out = {}
    for k in range(1, plan.n_times + 1):
        cover = plan.covering(k)
        if not cover:
            raise DataError(f"time point {k} is not covered by any window")
        W = sum(plan.windows[w].weight for w in cover)
        out[k] = [(w, plan.windows[w].weight / W) for w in cover]
    return out


class MergedEstimate:
    """Blended per-slice estimate from windowed fits.

    Dense slices are built on demand one at a time; :meth:`cells` evaluates
    arbitrary cells without any dense reconstruction.
    """

    def __init__(self, plan: WindowPlan, models, dims):
        self.plan = plan
        self.models = list(models)
        self.dims = tuple(dims)
        self.weights = merge_weights(plan)

    def slice(self, k: int, budget: int = DEFAULT_SLICE_BUDGET) -> np.ndarray:
        """Dense ``N x N x M`` estimate at time point ``k`` (1-based)."""
        out = None
        for w, a in self.weights[k]:
            win = self.plan.windows[w]
            part = a * reconstruct_slice(self.models[w], k - win.s, budget)
            out = part if out is None else out + part
        return out

    def __iter__(self):
        for k in range(1, self.dims[3] + 1):
            yield k, self.slice(k)

    def cells(self, idx: np.ndarray) -> np.ndarray:
        """Estimates at 0-based ``(n, 4)`` cell indices."""
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 4)
        out = np.zeros(len(idx))
        for t in np.unique(idx[:, 3]):
            rows = np.nonzero(idx[:, 3] == t)[0]
            k = int(t) + 1
            acc = np.zeros(len(rows))
            for w, a in self.weights[k]:
                local = idx[rows].copy()
                local[:, 3] -= self.plan.windows[w].s - 1
                acc = acc + a * reconstruct_cells(self.models[w], local)
            out[rows] = acc
        return out

    def to_sparse(self, threshold: float = 0.0, budget: int = DEFAULT_SLICE_BUDGET) -> SparseTensor4:
        """Cells with ``|estimate| > threshold``, slice by slice."""
        idx, vals = [], []
        for k, dense in self:
            keep = np.argwhere(np.abs(dense) > threshold)
            if len(keep):
                idx.append(np.column_stack([keep, np.full(len(keep), k - 1)]))
                vals.append(dense[tuple(keep.T)])
        if not idx:
            return SparseTensor4.empty(self.dims)
        return SparseTensor4.from_entries(self.dims, np.concatenate(idx), np.concatenate(vals))


def merge_slices(fits, dims, plan: WindowPlan | None = None) -> MergedEstimate:
    """Blend ``(window, model)`` fits; completion order of ``fits`` does not matter."""
    fits = sorted(fits, key=lambda f: (f[0].s, f[0].q))
    if plan is None:
        plan = WindowPlan(tuple(w for w, _ in fits), alpha1=fits[0][0].width, beta=0.0, n_times=dims[3])
    return MergedEstimate(plan, [m for _, m in fits], dims)


@dataclass
class TWPDAReport:
    plan: WindowPlan
    window_reports: list
    window_nnz: list
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.window_reports)

    @property
    def cells_processed(self) -> int:
        return sum(r.cells_processed for r in self.window_reports)

    def aggregate(self) -> FitReport:
        agg = FitReport(
            epochs_run=max(r.epochs_run for r in self.window_reports),
            converged=self.converged,
            wall_time=self.wall_time,
            cells_processed=self.cells_processed,
        )
        for e in range(agg.epochs_run):
            # windows that stopped early hold their final loss
            agg.loss_trace.append(sum(r.loss_trace[min(e, r.epochs_run - 1)] for r in self.window_reports))
        return agg


def fit_twpda(cdt: SparseTensor4, cons: ConstraintSet, hp: HyperParams = HyperParams(),
              alpha1: int = 2, beta: float | None = None, parallelism: int = 1,
              plan: WindowPlan | None = None):
    """Plan windows, fit them concurrently, and blend the shared slices.

    Window ``i`` is fitted with seed ``hp.seed + i``, so results do not
    depend on ``parallelism``.
    """
    start = time.perf_counter()
    if plan is None:
        plan = plan_windows(cdt, alpha1, beta)
    tasks = [(w, win, hp.replace(seed=hp.seed + w)) for w, win in enumerate(plan.windows)]

    def run(task):
        w, win, whp = task
        try:
            return fit_window(cdt, cons, whp, win)
        except DivergenceError as exc:
            raise DivergenceError(f"window {w} {win}: {exc}", exc.cell, exc.epoch) from exc
        except DataError as exc:
            raise DataError(f"window {w} {win}: {exc}") from exc

    if parallelism <= 1:
        results = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run, tasks))
    models = [m for m, _ in results]
    nnz = [extract_subtensor(cdt, (w.s, w.q)).nnz for w in plan.windows]
    report = TWPDAReport(plan, [r for _, r in results], nnz, time.perf_counter() - start)
    return MergedEstimate(plan, models, cdt.dims), report


def write_plan_csv(report: TWPDAReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["window", "s", "q", "width", "nnz", "epochs", "converged", "final_loss"])
        for w, (win, r, nnz) in enumerate(zip(report.plan.windows, report.window_reports, report.window_nnz)):
            final = r.loss_trace[-1] if r.loss_trace else float("nan")
            out.writerow([w, win.s, win.q, win.width, nnz, r.epochs_run, int(r.converged), repr(final)])
