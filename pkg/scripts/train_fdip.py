"""Train sparse frequency-domain intra predictors on a directory of PGM
images and compare the two sparsification strategies."""

import argparse
from pathlib import Path

from dtk import fdip
from dtk.imageio import read_image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("images", help="directory of .pgm files")
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--budget", type=int, default=4)
    ap.add_argument("--out", help="write the gain-impact predictors here")
    args = ap.parse_args()
    imgs = [read_image(p).frames[0][0] for p in sorted(Path(args.images).glob("*.pgm"))]
    corpus = fdip.build_corpus(imgs)
    print(f"{len(imgs)} images, {len(corpus)} blocks")
    print(f"VP8 modes:     {fdip.gains(corpus, fdip.initial_predictors())}")
    dense = fdip.train(corpus, args.iters)
    print(f"dense trained: P_g {dense.history[-1]['prediction_gain']:.4f} dB")
    dense_modes = corpus.modes.copy()
    for strategy in ("magnitude", "gain_impact"):
        corpus.modes = dense_modes.copy()  # both strategies start from the dense assignment
        res = fdip.sparsify(corpus, dense.Fs, args.budget, strategy)
        print(f"{strategy:12s}: P_g {fdip.prediction_gain(corpus, res.Fs):.4f} dB after {len(res.history)} rounds")
        if args.out and strategy == "gain_impact":
            Path(args.out).write_bytes(fdip.save_predictors(res.Fs, res.masks))


if __name__ == "__main__":
    main()
