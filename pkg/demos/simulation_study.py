"""Monte-Carlo comparison of the link-family and model-averaged BMDs.

Runs the ARMB study (absolute relative median bias of the BMD point
estimate) and, optionally, the BMDL coverage study on the built-in
scenarios.  Replicate counts default to a quick desk-scale run.

Run with ``python3 demos/simulation_study.py --scenarios 3 4 --replicates 100``.
"""

import argparse
import time

from bmdlink.simulation import builtin_scenarios, run_armb_study, run_coverage_study


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenarios", type=int, nargs="+", default=[3, 4])
    parser.add_argument("--n", type=int, nargs="+", default=[50])
    parser.add_argument("--bmr", type=float, nargs="+", default=[0.01, 0.1])
    parser.add_argument("--replicates", type=int, default=100)
    parser.add_argument("--coverage", action="store_true", help="also run the LR/ST coverage study")
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    print("scenarios (true risks at doses 0, 0.25, 0.5, 1):")
    for s in builtin_scenarios():
        if s.id in args.scenarios:
            print(f"  {s.id}: " + "  ".join(f"{r:.4f}" for r in s.risks)
                  + f"   true BMD {s.true_bmd(0.01):.4f} / {s.true_bmd(0.1):.4f}")

    print()
    print(f"{'scen':>4} {'n':>4} {'BMR':>5} {'ARMB FL':>8} {'ARMB MA':>8} {'rejected':>8} {'time':>6}")
    for sid in args.scenarios:
        for n in args.n:
            for bmr in args.bmr:
                t0 = time.perf_counter()
                rep = run_armb_study(sid, n, bmr, replicates=args.replicates, seed=args.seed)
                print(f"{sid:>4} {n:>4} {bmr:>5} {rep.armb_fl:>8.4f} {rep.armb_ma:>8.4f} "
                      f"{rep.screening_rejections:>8} {time.perf_counter() - t0:>5.0f}s")

    if args.coverage:
        print()
        print(f"{'scen':>4} {'n':>4} {'BMR':>5} {'LR':>6} {'ST':>6} {'refits':>6}")
        for sid in args.scenarios:
            for n in args.n:
                for bmr in args.bmr:
                    rep = run_coverage_study(sid, n, bmr, replicates=args.replicates, seed=args.seed,
                                             methods=("LR", "ST"))
                    print(f"{sid:>4} {n:>4} {bmr:>5} {rep.coverage['LR']:>6.3f} {rep.coverage['ST']:>6.3f} "
                          f"{rep.fit_failures:>6}")


if __name__ == "__main__":
    main()
