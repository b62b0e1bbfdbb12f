"""Bits and PSNR over a qp sweep for one image, per tool configuration."""

import argparse

from dtk.codec import EncoderConfig, encode_frame, psnr_planes
from dtk.imageio import read_image

CONFIGS = {
    "all": {},
    "no-lapping": {"lapping": False},
    "no-haar-dc": {"haar_dc": False},
    "no-ac-copy": {"ac_copy": False},
    "no-dering": {"dering": "off"},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("image")
    ap.add_argument("--qps", default="10,20,30,40,50")
    args = ap.parse_args()
    video = read_image(args.image)
    planes = video.frames[0]
    for name, tools in CONFIGS.items():
        for qp in map(int, args.qps.split(",")):
            r = encode_frame(planes, EncoderConfig(qp=qp, **tools), video.bit_depth)
            print(f"{name:12s} qp={qp:3d} bits={r.bits:8d} psnr={psnr_planes(planes, r.recon, video.bit_depth):7.3f}")


if __name__ == "__main__":
    main()
