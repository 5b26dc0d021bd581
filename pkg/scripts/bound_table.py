"""Print gap, bound and slack of the large-time inequality for a built-in problem.

    python scripts/bound_table.py --builtin semilinear --n-paths 5000
"""
import argparse

import numpy as np

from fklab import cli
from fklab.asymptotics import verify_convergence


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--builtin", default="semilinear")
    ap.add_argument("--n-paths", type=int, default=5000)
    ap.add_argument("--grid-points", type=int, default=11)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = cli.resolve_config({"builtin": args.builtin, "experiment": "verify-convergence"})
    problem = cli.build_problem(cfg["problem"])
    num = cli.Numerics(**{**cfg["numerics"], "n_paths": args.n_paths, "grid_points": args.grid_points})
    rep = verify_convergence(problem, num.t or [0.25, 0.5, 1.0, 2.0], num.grid(problem), num.mc(), args.seed)
    print(f"{'t':>6s} {'sup gap':>10s} {'sup rhs':>10s} {'min margin':>11s} {'budget':>9s}")
    for j, t in enumerate(rep.t_grid):
        margin = rep.rhs[j] + rep.slack[j] - rep.gap[j]
        print(f"{t:6.2f} {rep.gap[j].max():10.5f} {rep.rhs[j].max():10.5f} {margin.min():11.5f} {rep.budget[j]:9.5f}")
    print("all pass:", rep.ok)


if __name__ == "__main__":
    main()
