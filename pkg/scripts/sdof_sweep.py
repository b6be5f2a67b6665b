"""Single-degree-of-freedom model: final displacement and settling time
against the interface mass, plus the time-step convergence ratios.

    python scripts/sdof_sweep.py --t-end 200
"""
import argparse

import numpy as np

from robinfsi.analysis import settling_time
from robinfsi.errors import NotSettledError
from robinfsi.sdof import SdofParams, analytic_reference, simulate_sdof


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--m-fs", default="0,10,100,1000")
    ap.add_argument("--dt", type=float, default=0.02)
    ap.add_argument("--t-end", type=float, default=20.0)
    args = ap.parse_args()

    print("m_fs,final_displacement,settling_time")
    for m in [float(x) for x in args.m_fs.split(",")]:
        s = simulate_sdof(SdofParams(m_fs=m), args.dt, args.t_end)
        try:
            ts = f"{settling_time(s):.4f}"
        except NotSettledError:
            ts = "not settled"
        print(f"{m:g},{s.y[-1]:.6f},{ts}")

    print("\ndt,max_error,ratio")
    p, prev = SdofParams(m_fs=0.0), None
    for dt in (0.04, 0.02, 0.01, 0.005):
        s = simulate_sdof(p, dt, 4.0)
        err = float(np.max(np.abs(s.y - analytic_reference(p, s.t))))
        print(f"{dt:g},{err:.4e},{'' if prev is None else f'{prev / err:.3f}'}")
        prev = err


if __name__ == "__main__":
    main()
