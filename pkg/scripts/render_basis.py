"""Render DC basis functions of random partitions with and without lapping."""

import argparse

import numpy as np

from dtk.codec import render_dc_basis
from dtk.imageio import write_pgm
from dtk.transforms import SB_SIZE, PartitionTree


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("prefix", help="output prefix; writes PREFIX-lapped.pgm and PREFIX-plain.pgm")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--sbs", type=int, default=4)
    ap.add_argument("--amplitude", type=float, default=1000.0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    trees = [[PartitionTree.random(SB_SIZE, rng) for _ in range(args.sbs)] for _ in range(args.sbs)]
    leaves = [(x, y) for r, row in enumerate(trees) for c, t in enumerate(row)
              for x, y, _ in t.leaves(c * SB_SIZE, r * SB_SIZE)]
    chosen = {leaf for leaf in leaves if rng.random() < 0.5}
    for lapping, tag in ((True, "lapped"), (False, "plain")):
        plane = render_dc_basis(trees, chosen, args.amplitude, lapping)
        write_pgm(f"{args.prefix}-{tag}.pgm", np.clip(np.round(plane) + 128, 0, 255).astype(int))
    print(f"{len(chosen)} of {len(leaves)} blocks set")


if __name__ == "__main__":
    main()
