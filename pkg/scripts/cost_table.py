"""Print per-family prefill and decode cost comparisons for a pool of N candidates.

    python scripts/cost_table.py --n 10
"""

import argparse

from evidence_utility.pipeline import FAMILIES, estimate_cost, family_profiles


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10, help="candidates per query")
    args = ap.parse_args()

    print(f"{'family':14s} {'ours GFLOPs':>12s} {'rerank GFLOPs':>14s} {'prefill ratio':>14s} {'decode ratio':>13s}")
    for fam in FAMILIES:
        p = family_profiles(fam)
        est = estimate_cost(args.n, p["surrogate"], p["main"], include_decode=False)
        dec = estimate_cost(args.n, p["surrogate"], p["main"], uq_profile=p["uq_surrogate"]).decode_ratio
        print(f"{fam:14s} {est.ours_gflops:12.0f} {est.standard_rerank_gflops:14.0f} {est.ratio:14.3f} {dec:13.1f}")


if __name__ == "__main__":
    main()
