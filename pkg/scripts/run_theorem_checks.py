"""Run every theorem and lemma sweep and print a summary table.

    python scripts/run_theorem_checks.py --seed 0 --n-worlds 1000 --n-draws 10000
"""

import argparse
import json
import sys
import time

from evidence_utility.simulation import kl_identity_sweep, lemma_sweep, theorem1_sweep, theorem2_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-worlds", type=int, default=1000)
    ap.add_argument("--n-draws", type=int, default=10_000)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args()

    runs = [
        lambda: [theorem2_sweep(args.n_draws, args.seed)],
        lambda: [theorem1_sweep(args.n_worlds, args.seed)],
        lambda: list(lemma_sweep(args.n_worlds, args.seed).values()),
        lambda: [kl_identity_sweep(args.n_worlds, args.seed)],
    ]
    rows = []
    for run in runs:
        t = time.perf_counter()
        sweeps = run()
        dt = time.perf_counter() - t
        rows += [dict(s.to_dict(), seconds=round(dt, 3)) for s in sweeps]
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'sweep':32s} {'checks':>8s} {'violations':>10s} {'seconds':>8s}")
        for r in rows:
            print(f"{r['name']:32s} {r['n_checks']:8d} {r['violations']:10d} {r['seconds']:8.3f}")
    return 1 if any(r["violations"] for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
