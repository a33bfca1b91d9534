"""Command line: synth / build / fit / eval / bench.

Options come from built-in defaults, then an optional JSON ``--config``,
then explicit flags (flags win). The merged config is echoed in canonical
form (sorted keys) to ``<out>/config.json`` so a run can be replayed with
``--config``. Exit codes: 0 ok, 1 usage, 2 data error, 3 divergence,
4 stopped at max epochs without converging.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .constraints import ConstraintSet, build_constraints, read_matrix, write_matrix
from .data import (
    VALUE_MODES,
    assemble_cdt,
    generate_synthetic,
    read_event_log,
    read_tensor,
    write_event_log,
    write_tensor,
)
from .errors import DataError, DivergenceError
from .evaluation import (
    LADDER,
    recovery_accuracy,
    rmse,
    run_ablation,
    run_benchmark,
    summarize,
    write_benchmark_csv,
    write_reports_csv,
    HoldoutSplit,
)
from .nda import HyperParams, fit_nda, write_loss_csv
from .tucker import load_checkpoint, reconstruct_cells, save_checkpoint
from .twpda import fit_twpda, write_plan_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4

MATRICES = ("X", "Y", "Z", "K", "LZ", "U")

HP_KEYS = tuple(f.name for f in fields(HyperParams))

DEFAULTS = {
    "synth": dict(n=60, m=3, q=12, density=0.01, mode="planted-tucker", rank=3, period=0, seed=0,
                  out="log.txt"),
    "build": dict(log=None, aux=None, out="build", seed=0),
    "fit": dict(data="build", out="fit", solver="nda", alpha1=2, beta=None, parallelism=1,
                threshold=None, **HyperParams().as_dict()),
    "eval": dict(cdt=None, log=None, aux=None, checkpoint=None, out="eval.csv",
                 fractions=[0.2, 0.3, 0.4, 0.5], seeds=[0, 1, 2], methods=list(LADDER),
                 alpha1=2, beta=None, workers=1, **HyperParams().as_dict()),
    "bench": dict(sizes=[100, 200, 400], threads=[1, 2, 4], m=2, q=35, density=1e-3, epochs=5,
                  alpha1=2, beta=None, out="bench.csv", **HyperParams().as_dict()),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _strs(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def sample_log_path() -> Path:
    """Bundled sample event log (60 nodes, 3 memes, 12 time points)."""
    return Path(str(resources.files("cdtinfer") / "sample_data" / "sample_log.txt"))


def _resolve_log(p):
    return sample_log_path() if p == "sample" else Path(p)


@dataclass(frozen=True)
class RunConfig:
    """Merged options of one subcommand."""
    command: str
    options: dict

    @classmethod
    def merge(cls, command, file_options=None, flags=None) -> "RunConfig":
        opts = dict(DEFAULTS[command])
        for source in (file_options or {}, flags or {}):
            unknown = set(source) - set(opts)
            if unknown:
                raise UsageError(f"unknown option(s) for {command}: {sorted(unknown)}")
            opts.update(source)
        return cls(command, opts)

    @classmethod
    def from_json(cls, command, text) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        return cls.merge(command, data)

    def canonical(self) -> str:
        return json.dumps(self.options, sort_keys=True, indent=2) + "\n"

    def hyperparams(self) -> HyperParams:
        return HyperParams(**{k: self.options[k] for k in HP_KEYS})

    def __getitem__(self, key):
        return self.options[key]


def _add_hp_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--rank", type=int)
    g.add_argument("--eta", type=float)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--max-epochs", dest="max_epochs", type=int)
    for name in ("sda", "nma", "mc", "ts", "reg"):
        g.add_argument(f"--lambda-{name}", dest=f"lambda_{name}", type=float)
    for name in ("sda", "nma", "mc", "ts"):
        g.add_argument(f"--use-{name}", dest=f"use_{name}", type=_bool, metavar="BOOL")
    g.add_argument("--order", choices=("lexicographic", "shuffled"))
    g.add_argument("--normalize-constraints", dest="normalize_constraints", type=_bool, metavar="BOOL")
    g.add_argument("--init-scale", dest="init_scale", type=float)
    g.add_argument("--init-core", dest="init_core", choices=("match", "uniform"))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cdtinfer", description="Infer missing infections in a coexisting diffusions tensor.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file of options; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--print-config", action="store_true", help="print the merged config and exit")

    sp = sub.add_parser("synth", help="write a synthetic event log", argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--m", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--density", type=float)
    sp.add_argument("--mode", choices=VALUE_MODES)
    sp.add_argument("--rank", type=int)
    sp.add_argument("--period", type=int, help="nonzero: another observation period (auxiliary log)")
    sp.add_argument("--out")

    sp = sub.add_parser("build", help="assemble the tensor and constraint matrices",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--log", help="target event log ('sample' for the bundled one)")
    sp.add_argument("--aux", help="auxiliary log for the constraints (default: the target log)")
    sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("fit", help="fit NDA or TWPDA on built artifacts", argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--data", help="directory written by build")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--solver", choices=("nda", "twpda"))
    sp.add_argument("--alpha1", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--parallelism", type=int)
    sp.add_argument("--threshold", type=float, help="also write estimated cells with |value| > threshold")
    _add_hp_flags(sp)

    sp = sub.add_parser("eval", help="holdout ablation, or score a checkpoint against a tensor",
                        argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--cdt", help="tensor file (as written by build)")
    sp.add_argument("--log", help="event log instead of --cdt")
    sp.add_argument("--aux", help="auxiliary log for constraints (default: each train split)")
    sp.add_argument("--checkpoint", help="score this model on every stored cell of --cdt")
    sp.add_argument("--out", help="CSV path")
    sp.add_argument("--fractions", type=_floats, help="comma list of removal fractions")
    sp.add_argument("--seeds", type=_ints, help="comma list of seeds")
    sp.add_argument("--methods", type=_strs, help=f"comma list from {','.join(LADDER)}")
    sp.add_argument("--alpha1", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--workers", type=int)
    _add_hp_flags(sp)

    sp = sub.add_parser("bench", help="NDA/TWPDA timing on synthetic tensors", argument_default=argparse.SUPPRESS)
    common(sp)
    sp.add_argument("--sizes", type=_ints, help="comma list of N")
    sp.add_argument("--threads", type=_ints, help="comma list of thread counts")
    sp.add_argument("--m", type=int)
    sp.add_argument("--q", type=int)
    sp.add_argument("--density", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--alpha1", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--out")
    _add_hp_flags(sp)
    return p


def load_config(argv):
    """Parse ``argv``; returns (RunConfig, print_only)."""
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    path = ns.pop("config", None)
    print_only = ns.pop("print_config", False)
    file_opts = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        file_opts = RunConfig.from_json(command, text).options
    return RunConfig.merge(command, file_opts, ns), print_only


# --- commands -----------------------------------------------------------------

def _echo(cfg: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.canonical(), encoding="utf-8")


def save_constraints(cons: ConstraintSet, out_dir) -> None:
    for name in MATRICES:
        write_matrix(getattr(cons, name), Path(out_dir) / f"{name}.txt")


def load_constraints(in_dir) -> ConstraintSet:
    return ConstraintSet(**{name: read_matrix(Path(in_dir) / f"{name}.txt") for name in MATRICES})


def cmd_synth(cfg: RunConfig) -> int:
    o = cfg.options
    log = generate_synthetic(o["n"], o["m"], o["q"], o["density"], o["mode"], o["seed"], o["rank"], o["period"])
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_event_log(log, out)
    print(f"wrote {len(log)} events (N={log.n} M={log.m} Q={log.q}) to {out}")
    return EXIT_OK


def cmd_build(cfg: RunConfig) -> int:
    o = cfg.options
    if o["log"] is None:
        raise UsageError("build needs --log")
    log = read_event_log(_resolve_log(o["log"]))
    aux = log if o["aux"] is None else read_event_log(_resolve_log(o["aux"]))
    if (aux.n, aux.m) != (log.n, log.m):
        raise DataError(f"auxiliary log dims N={aux.n} M={aux.m} differ from target N={log.n} M={log.m}")
    out = Path(o["out"])
    _echo(cfg, out)
    cdt = assemble_cdt(log)
    if cdt.nnz == 0:
        print("warning: target log has no events; the tensor is empty", file=sys.stderr)
    if len(aux) == 0:
        print("warning: auxiliary log has no events; constraint matrices are zero", file=sys.stderr)
    write_tensor(cdt, out / "cdt.txt")
    save_constraints(build_constraints(aux, q=log.q), out)
    n, _, m, q = cdt.dims
    print(f"dims N={n} M={m} Q={q} ({n}x{n}x{m}x{q}), nnz={cdt.nnz}, events={len(log)}")
    return EXIT_OK


def _write_estimates(cells_fn, cdt, path, threshold):
    """Estimated cells above threshold, one time slice at a time."""
    n, _, m, q = cdt.dims
    grid = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(m), indexing="ij"), -1).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(d) for d in cdt.dims) + "\n")
        for t in range(q):
            idx = np.column_stack([grid, np.full(len(grid), t)])
            est = cells_fn(idx)
            for row, v in zip(idx[np.abs(est) > threshold], est[np.abs(est) > threshold]):
                fh.write(f"{row[0]} {row[1]} {row[2]} {row[3]} {float(v)!r}\n")


def cmd_fit(cfg: RunConfig) -> int:
    o = cfg.options
    data = Path(o["data"])
    cdt = read_tensor(data / "cdt.txt")
    cons = load_constraints(data)
    hp = cfg.hyperparams()
    out = Path(o["out"])
    _echo(cfg, out)
    if o["solver"] == "nda":
        model, rep = fit_nda(cdt, cons, hp)
        save_checkpoint(model, out / "model.ckpt")
        write_loss_csv(rep, out / "loss_trace.csv")
        cells_fn = lambda idx: reconstruct_cells(model, idx)  # noqa: E731
        converged, epochs = rep.converged, rep.epochs_run
    else:
        merged, rep = fit_twpda(cdt, cons, hp, o["alpha1"], o["beta"], o["parallelism"])
        for w, model in enumerate(merged.models):
            save_checkpoint(model, out / f"window_{w:03d}.ckpt")
        write_plan_csv(rep, out / "plan.csv")
        write_loss_csv(rep.aggregate(), out / "loss_trace.csv")
        cells_fn = merged.cells
        converged, epochs = rep.converged, rep.aggregate().epochs_run
    if o["threshold"] is not None:
        _write_estimates(cells_fn, cdt, out / "estimates.txt", o["threshold"])
    print(f"{o['solver']}: {epochs} epochs, converged={converged}, outputs in {out}")
    if not converged:
        print(f"warning: stopped at max_epochs={hp.max_epochs} before |delta loss| < {hp.epsilon}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    o = cfg.options
    if (o["cdt"] is None) == (o["log"] is None):
        raise UsageError("eval needs exactly one of --cdt or --log")
    cdt = read_tensor(o["cdt"]) if o["cdt"] is not None else assemble_cdt(read_event_log(_resolve_log(o["log"])))
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if o["checkpoint"] is not None:
        model = load_checkpoint(o["checkpoint"])
        if model.dims != cdt.dims:
            raise DataError(f"checkpoint dims {model.dims} differ from tensor dims {cdt.dims}")
        split = HoldoutSplit(cdt, cdt.idx, cdt.vals, 1.0, o["seed"])
        est = reconstruct_cells(model, cdt.idx)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("checkpoint,cells,ra,rmse\n")
            fh.write(f"{o['checkpoint']},{cdt.nnz},{recovery_accuracy(split, est)!r},{rmse(split, est)!r}\n")
        print(f"RA={recovery_accuracy(split, est):.4f} RMSE={rmse(split, est):.4f} over {cdt.nnz} cells")
        return EXIT_OK
    cons = None
    if o["aux"] is not None:
        aux = read_event_log(_resolve_log(o["aux"]))
        cons = build_constraints(aux, q=cdt.dims[3])
    reports = run_ablation(cdt, cons, cfg.hyperparams(), o["fractions"], o["seeds"], o["methods"],
                           o["alpha1"], o["beta"], o["workers"])
    write_reports_csv(reports, out)
    for method, (ra, err) in summarize(reports).items():
        print(f"{method:10s} RA={ra:.4f} RMSE={err:.4f}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    o = cfg.options
    rows = run_benchmark(o["sizes"], o["threads"], cfg.hyperparams(), o["m"], o["q"], o["density"],
                         o["epochs"], o["alpha1"], o["beta"], o["seed"])
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_benchmark_csv(rows, out)
    for r in rows:
        print(f"N={r['n']:5d} nnz={r['nnz']:7d} threads={r['threads']} "
              f"nda={r['nda_time']:.3f}s twpda={r['twpda_time']:.3f}s speedup={r['speedup']:+.2f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "build": cmd_build, "fit": cmd_fit, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg, print_only = load_config(argv)
        if print_only:
            sys.stdout.write(cfg.canonical())
            return EXIT_OK
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"cdtinfer: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"cdtinfer: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError) as exc:
        print(f"cdtinfer: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
