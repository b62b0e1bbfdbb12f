"""Rate-control simulation against the synthetic encoder: one-pass vs
two-pass across buffer sizes, plus the chunked first-pass check."""

import argparse

import numpy as np

from dtk.ratecontrol import (RcConfig, SyntheticEncoder, chunk_merge, first_pass, settling_time,
                             simulate_one_pass, simulate_two_pass, step_response, tau_for_settling)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=1000)
    ap.add_argument("--target-bits", type=float, default=20000.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    enc = SyntheticEncoder(seed=args.seed)
    for buf in (8, 24, 64):
        cfg = RcConfig(args.target_bits, buf)
        tau = tau_for_settling(buf / 2)
        overshoot = step_response(tau, 10 * buf).max() - 1
        one = simulate_one_pass(enc, cfg, args.frames)
        log = first_pass(enc, cfg.gop, 0, args.frames)
        two = simulate_two_pass(enc, cfg, log)
        chunks = [first_pass(enc, cfg.gop, s, min(50, args.frames - s)) for s in range(0, args.frames, 50)]
        same = simulate_two_pass(enc, cfg, chunk_merge(chunks)).qps == two.qps
        print(f"buffer={buf:3d} settle={settling_time(tau):3d} overshoot={100 * overshoot:.2f}% "
              f"one-pass={100 * one.rate_error:+.3f}% two-pass={100 * two.rate_error:+.3f}% "
              f"qp-std one/two={np.std(one.qps):.2f}/{np.std(two.qps):.2f} chunked-identical={same}")


if __name__ == "__main__":
    main()
