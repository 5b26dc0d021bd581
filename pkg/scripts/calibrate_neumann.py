"""Fix the flux convention of the FD oracle against the Monte Carlo local time.

Reflected Brownian motion on (0, 1), unit weight on both walls.  E_x l_t from
the path engine is compared with the FD solution of u_t = ½u'' under
c ∂_n u = 1 for c = ½ and c = 1; the matching c is the one the FD oracle uses.
"""
import argparse

import numpy as np

from fklab.domains import Interval
from fklab.measures import SurfaceMeasure, af_samples
from fklab.nonlinear import Coefficients, ProblemSpec
from fklab.process import ReflectedBrownian
from fklab.reference import FDGrid, NeumannFlux, fd_parabolic


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--x", type=float, default=0.5)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--n-paths", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    dom = Interval(0.0, 1.0)
    proc = ReflectedBrownian(dom)
    s = af_samples(proc, SurfaceMeasure(), args.x, args.t, args.n_paths, args.seed, key=(30,))
    mc, se = s.mean(), s.std(ddof=1) / np.sqrt(len(s))
    p = ProblemSpec(dom, proc, Coefficients(g=lambda x, y: np.ones_like(x)), SurfaceMeasure())
    print(f"MC   E_x l_t            {mc:.5f} ± {se:.5f}")
    for half in (True, False):
        u = fd_parabolic(p, args.t, FDGrid(200, boundary=NeumannFlux(half)))(np.array([args.x]))[0]
        label = "½ ∂_n u = g" if half else "∂_n u = g"
        print(f"FD   {label:18s} {u:.5f}  (|diff| {abs(u - mc):.4f})")


if __name__ == "__main__":
    main()
