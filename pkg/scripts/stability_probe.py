"""Largest stable relaxation factor for both coupling treatments.

    python scripts/stability_probe.py --preset surrogate-probe --horizon 1.0
"""
import argparse
import time

from robinfsi.analysis import max_stable_beta
from robinfsi.scenarios import load_scenario, scenario_factory


def probe(preset, treatment, gamma, horizon, tol_beta=0.01, overrides=()):
    spec = load_scenario(preset, [*overrides, f"coupling.gamma_n1={gamma}", f"coupling.treatment={treatment}"])
    return max_stable_beta(scenario_factory(spec), spec.coupling_config(), treatment, horizon, tol_beta)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--preset", default="surrogate-probe")
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--gammas", default="10,100,1000")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    print("treatment,gamma_n1,beta_max,runs,seconds")
    for treatment in ("explicit", "implicit"):
        for gamma in [float(g) for g in args.gammas.split(",")]:
            t0 = time.perf_counter()
            res = probe(args.preset, treatment, gamma, args.horizon, overrides=args.set)
            print(f"{treatment},{gamma:g},{res.beta_max:.4f},{len(res.history)},{time.perf_counter() - t0:.1f}",
                  flush=True)


if __name__ == "__main__":
    main()
