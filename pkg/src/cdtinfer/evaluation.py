"""Holdout experiments: cell removal, RA/RMSE, the constraint ladder and timing runs.

RA counts held-out cells whose estimate is strictly positive (true values
are positive counts). RMSE is over held-out cells only. No thresholding is
applied to estimates before scoring.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet, build_constraints
from .data import SparseTensor4, log_from_tensor, synthetic_gaussian_cdt
from .errors import DataError
from .nda import HyperParams, fit_nda
from .tucker import reconstruct_cells
from .twpda import fit_twpda, plan_windows

__all__ = [
    "HoldoutSplit",
    "EvalReport",
    "LADDER",
    "make_holdout",
    "recovery_accuracy",
    "rmse",
    "estimate_test_cells",
    "run_ablation",
    "summarize",
    "write_reports_csv",
    "run_benchmark",
    "write_benchmark_csv",
]

# label -> (sda, nma, mc, ts); the last two differ only in the solver
LADDER = {
    "TD": (False, False, False, False),
    "TD+X": (True, False, False, False),
    "TD+X+Y": (True, True, False, False),
    "TD+X+Y+Z": (True, True, True, False),
    "CIM-NDA": (True, True, True, True),
    "CIM-TWPDA": (True, True, True, True),
}


@dataclass(frozen=True)
class HoldoutSplit:
    train: SparseTensor4
    test_idx: np.ndarray
    test_vals: np.ndarray
    removal_fraction: float
    seed: int

    @property
    def test(self):
        return [(tuple(int(v) for v in i), float(x)) for i, x in zip(self.test_idx, self.test_vals)]

    @property
    def n_test(self) -> int:
        return len(self.test_vals)


@dataclass(frozen=True)
class EvalReport:
    method: str
    removal_fraction: float
    seed: int
    ra: float
    rmse: float
    wall_time: float = 0.0
    epochs: int = 0
    converged: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.ra) and np.isfinite(self.rmse)):
            raise DataError(f"non-finite metrics for {self.method}: ra={self.ra}, rmse={self.rmse}")


def make_holdout(cdt: SparseTensor4, fraction: float, seed: int) -> HoldoutSplit:
    """Remove ``round(fraction * nnz)`` stored cells uniformly at random."""
    if not 0.0 < fraction < 1.0:
        raise DataError(f"removal fraction must be in (0, 1), got {fraction}")
    if cdt.nnz < 1:
        raise DataError("cannot hold out cells of an empty tensor")
    k = int(round(fraction * cdt.nnz))
    if k == 0 or k == cdt.nnz:
        raise DataError(f"fraction {fraction} of {cdt.nnz} cells leaves an empty {'test' if k == 0 else 'train'} set")
    rng = np.random.default_rng(seed)
    mask = np.zeros(cdt.nnz, dtype=bool)
    mask[rng.choice(cdt.nnz, size=k, replace=False)] = True
    train = SparseTensor4(cdt.dims, cdt.idx[~mask], cdt.vals[~mask])
    return HoldoutSplit(train, cdt.idx[mask].copy(), cdt.vals[mask].copy(), float(fraction), int(seed))


def _check_estimates(split: HoldoutSplit, estimates) -> np.ndarray:
    est = np.asarray(estimates, dtype=np.float64).ravel()
    if est.shape != (split.n_test,):
        raise DataError(f"need one estimate per test cell ({split.n_test}), got {est.size}")
    if not np.isfinite(est).all():
        raise DataError("estimates must be finite at every test cell")
    return est


def recovery_accuracy(split: HoldoutSplit, estimates) -> float:
    est = _check_estimates(split, estimates)
    return float(np.mean(split.test_vals * est > 0))


def rmse(split: HoldoutSplit, estimates) -> float:
    est = _check_estimates(split, estimates)
    return float(np.sqrt(np.mean((split.test_vals - est) ** 2)))


def estimate_test_cells(split, cons, hp, solver="nda", alpha1=2, beta=None, parallelism=1):
    """Fit on the train cells and evaluate the held-out ones; returns (estimates, fit info)."""
    if solver == "nda":
        model, rep = fit_nda(split.train, cons, hp)
        return reconstruct_cells(model, split.test_idx), rep
    if solver == "twpda":
        merged, rep = fit_twpda(split.train, cons, hp, alpha1, beta, parallelism)
        return merged.cells(split.test_idx), rep.aggregate()
    raise DataError(f"unknown solver {solver!r}")


def run_ablation(cdt: SparseTensor4, constraints: ConstraintSet | None, hp: HyperParams,
                 fractions, seeds, methods=tuple(LADDER), alpha1=2, beta=None,
                 workers=1) -> list[EvalReport]:
    """One report per (method, fraction, seed).

    ``constraints=None`` builds the side matrices from each train split, so
    held-out cells never inform them. The seed drives both the split and the
    model init.
    """
    for m in methods:
        if m not in LADDER:
            raise DataError(f"unknown method {m!r}; choose from {list(LADDER)}")
    grid = [(f, s) for f in fractions for s in seeds]

    def run_cell(fs):
        f, s = fs
        split = make_holdout(cdt, f, s)
        cons = constraints if constraints is not None else build_constraints(log_from_tensor(split.train))
        out = []
        for m in methods:
            sda, nma, mc, ts = LADDER[m]
            mhp = hp.replace(seed=s, use_sda=sda, use_nma=nma, use_mc=mc, use_ts=ts)
            t0 = time.perf_counter()
            est, rep = estimate_test_cells(split, cons, mhp, "twpda" if m == "CIM-TWPDA" else "nda", alpha1, beta)
            out.append(EvalReport(m, f, s, recovery_accuracy(split, est), rmse(split, est),
                                  time.perf_counter() - t0, rep.epochs_run, rep.converged))
        return out

    if workers <= 1:
        results = [run_cell(fs) for fs in grid]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, grid))
    reports = [r for cell in results for r in cell]
    order = {m: i for i, m in enumerate(methods)}
    return sorted(reports, key=lambda r: (order[r.method], r.removal_fraction, r.seed))


def summarize(reports, by_fraction=False) -> dict:
    """Seed-averaged (ra, rmse) per method, or per (method, fraction)."""
    groups = {}
    for r in reports:
        key = (r.method, r.removal_fraction) if by_fraction else r.method
        groups.setdefault(key, []).append((r.ra, r.rmse))
    return {k: tuple(np.mean(v, axis=0)) for k, v in groups.items()}


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["method", "fraction", "seed", "ra", "rmse", "wall_time", "epochs", "converged"])
        for r in reports:
            out.writerow([r.method, r.removal_fraction, r.seed, repr(r.ra), repr(r.rmse),
                          f"{r.wall_time:.6f}", r.epochs, int(r.converged)])


def run_benchmark(sizes, threads, hp: HyperParams, m=2, q=35, density=1e-3, epochs=5,
                  alpha1=2, beta=None, seed=0) -> list[dict]:
    """Wall time of NDA and TWPDA on synthetic ``(N, m, q)`` tensors.

    Every fit runs exactly ``epochs`` epochs. Cell values are signed normal
    draws: count-valued random-support tensors make the NMA step unstable
    at eta = 1e-3 once N reaches a few hundred. Speedup at ``P`` threads is
    ``(t_1 - t_P) / t_1`` against single-thread TWPDA, so it is 0 at one
    thread.
    """
    hp = hp.replace(max_epochs=epochs, epsilon=1e-300, seed=seed)
    rows = []
    for n in sizes:
        cdt = synthetic_gaussian_cdt(n, m, q, density, seed, raw=True)
        cons = build_constraints(log_from_tensor(cdt))
        plan = plan_windows(cdt, alpha1, beta)
        if not rows:
            fit_nda(cdt, cons, hp.replace(max_epochs=1))  # keep compile and cache load out of the timings
        _, rep = fit_nda(cdt, cons, hp)
        times = {}
        for p in sorted(set(threads) | {1}):
            _, trep = fit_twpda(cdt, cons, hp, parallelism=p, plan=plan)
            times[p] = trep.wall_time
        for p in threads:
            rows.append(dict(n=n, m=m, q=q, nnz=cdt.nnz, windows=len(plan), threads=p,
                             nda_time=rep.wall_time, twpda_time=times[p],
                             speedup=(times[1] - times[p]) / times[1]))
    return rows


def write_benchmark_csv(rows, path) -> None:
    cols = ["n", "m", "q", "nnz", "windows", "threads", "nda_time", "twpda_time", "speedup"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in rows:
            out.writerow([r[c] if not isinstance(r[c], float) else f"{r[c]:.6f}" for c in cols])
