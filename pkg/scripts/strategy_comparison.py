"""Compare ranking strategies on a seeded synthetic world.

    python scripts/strategy_comparison.py --seed 7 --n-queries 200 --k 1 3 5
"""

import argparse

from evidence_utility.simulation import STRATEGIES, SimConfig, generate_world, run_strategy_comparison, with_overrides


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--n-queries", type=int, default=200)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 3, 5])
    ap.add_argument("--noise-cdf", choices=["logistic", "gaussian"])
    ap.add_argument("--relevance-noise", type=float)
    args = ap.parse_args()

    cfg = with_overrides(SimConfig(), n_queries=args.n_queries, noise_cdf=args.noise_cdf,
                         relevance_noise=args.relevance_noise)
    outcomes = run_strategy_comparison(generate_world(cfg, args.seed), STRATEGIES, args.k, args.seed)
    head = "".join(f"  hit@{k:<3d}" for k in args.k) + "".join(f"  acc@{k:<3d}" for k in args.k)
    print(f"{'strategy':22s}{head}  top1 IG(Y)")
    for o in outcomes:
        cells = "".join(f"  {h:7.1f}" for h in o.gt_hit_rate_by_k) + "".join(f"  {a:7.3f}" for a in o.answer_accuracy_by_k)
        print(f"{o.strategy_name:22s}{cells}  {o.mean_top1_ig_y:.4f}")


if __name__ == "__main__":
    main()
