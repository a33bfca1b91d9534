"""Loss trace of NDA with and without side information on the planted instance.

Writes epoch,total,eps,... per variant and prints the epoch-10 loss ratio
and the final/initial residual ratio.

    python3 scripts/convergence.py --outdir convergence
"""
import argparse
from pathlib import Path

from cdtinfer.constraints import build_constraints
from cdtinfer.data import generate_synthetic, planted_truth
from cdtinfer.nda import HyperParams, fit_nda, write_loss_csv

VARIANTS = {
    "cim": dict(),
    "td": dict(use_sda=False, use_nma=False, use_mc=False, use_ts=False),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--m", type=int, default=3)
    ap.add_argument("--q", type=int, default=20)
    ap.add_argument("--density", type=float, default=0.005)
    ap.add_argument("--max-epochs", type=int, default=100)
    ap.add_argument("--outdir", default="convergence")
    args = ap.parse_args()

    _, cdt = planted_truth(args.n, args.m, args.q, args.density, seed=0)
    cons = build_constraints(generate_synthetic(args.n, args.m, args.q, args.density, seed=0, period=1))
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, flags in VARIANTS.items():
        _, rep = fit_nda(cdt, cons, HyperParams(max_epochs=args.max_epochs, **flags))
        write_loss_csv(rep, out / f"loss_{name}.csv")
        tr = rep.loss_trace
        ratio10 = tr[9] / tr[0] if len(tr) >= 10 else float("nan")
        eps = rep.terms_trace[-1]["eps"] / rep.initial_terms["eps"]
        print(f"{name}: {rep.epochs_run} epochs, converged={rep.converged}, "
              f"loss[10]/loss[1]={ratio10:.3f}, eps final/initial={eps:.3f}")


if __name__ == "__main__":
    main()
