"""Compare the binary-tree, static-CDF and frequency-count coders on the
same 10-ary intra mode stream."""

import argparse

from dtk.entropy import bench_throughput, mean_tree_depth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--symbols", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"mean binary decisions per symbol: {mean_tree_depth():.4f}")
    for model in ("tree", "cdf15", "freq"):
        print(bench_throughput(model, args.symbols, args.seed).format())


if __name__ == "__main__":
    main()
