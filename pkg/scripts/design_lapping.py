"""Grid-search the 4-point lapping filter shears for an AR(1) source.

    python scripts/design_lapping.py --rho 0.95 --shift 6 --span 64
"""

import argparse

from dtk.transforms import DEFAULT_LAPPING, design_lapping_filter


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rho", type=float, default=0.95)
    ap.add_argument("--shift", type=int, default=6)
    ap.add_argument("--span", type=int, default=64)
    args = ap.parse_args()
    filt, gain = design_lapping_filter(args.rho, args.shift, args.span)
    print(f"best steps {filt.steps}: coding gain {gain:.4f} dB")
    print(f"frozen default {DEFAULT_LAPPING.steps}")


if __name__ == "__main__":
    main()
