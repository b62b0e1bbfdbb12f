"""Command-line interface: ``dtk <subcommand> ...``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import codec, entropy, fdip, ratecontrol
from .imageio import ImageFormatError, Video, format_pgm, read_image, write_image
from .transforms import SB_SIZE, PartitionTree

EXIT_OK, EXIT_USAGE, EXIT_DECODE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3, 4

EPILOG = """exit codes:
  0  success
  1  usage error (bad flags, conflicting options, bad config file)
  2  bitstream decode error (malformed, version mismatch, truncated)
  3  I/O error (missing or unreadable files, malformed input images or logs)
  4  internal invariant violation

Every flag may also be given in a --config file of key=value lines
(keys are flag names without the leading dashes); command-line flags win.
DTK_THREADS caps the number of worker processes used for batch work."""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def worker_count() -> int:
    env = os.environ.get("DTK_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise UsageError(f"DTK_THREADS must be an integer, got {env!r}") from None
    return n


def _pmap(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Config files


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def load_config(path: str, parser: argparse.ArgumentParser) -> dict:
    """key=value lines mapped onto the defaults of ``parser``."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror}") from e
    actions = {a.dest: a for a in parser._actions if a.option_strings}
    out = {}
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        act = actions.get(dest)
        if act is None or dest in ("config", "help"):
            raise UsageError(f"{path}:{num}: unknown option {key!r}")
        if isinstance(act, argparse.BooleanOptionalAction) or act.nargs == 0:
            out[dest] = _parse_bool(val)
        else:
            try:
                v = act.type(val) if act.type else val
            except (TypeError, ValueError):
                raise UsageError(f"{path}:{num}: bad value {val!r} for {key}") from None
            if act.choices is not None and v not in act.choices:
                raise UsageError(f"{path}:{num}: {key} must be one of {', '.join(map(str, act.choices))}")
            out[dest] = v
    return out


# ---------------------------------------------------------------------------
# Subcommands


def _encode_one(job):
    planes, cfg, depth = job
    return codec.encode_frame(planes, cfg, depth).data


def cmd_encode(args) -> int:
    if args.qp is not None and args.target_bitrate is not None:
        raise UsageError("--qp and --target-bitrate are mutually exclusive")
    if args.pass_ is not None and args.log is None:
        raise UsageError("--pass needs --log")
    if args.pass_ == 2 and args.target_bitrate is None:
        raise UsageError("--pass 2 needs --target-bitrate")
    video = read_image(args.input)
    frames = video.frames[:args.frames] if args.frames else video.frames
    qp = args.qp if args.qp is not None or args.target_bitrate is not None else 30
    if args.pass_ == 1 and args.target_bitrate is not None:
        qp = codec.FIRST_PASS_QP
    cfg = codec.EncoderConfig(
        qp=qp if args.pass_ == 1 or args.target_bitrate is None else None,
        target_bitrate=None if args.pass_ == 1 else args.target_bitrate,
        fps=args.fps or video.fps_value, lapping=args.lapping, ac_copy=args.ac_copy, cfl=args.cfl,
        haar_dc=args.haar_dc, dering=args.dering, buffer_frames=args.buffer_frames)
    if args.pass_ is None and cfg.target_bitrate is None:
        data = b"".join(_pmap(_encode_one, [(f, cfg, video.bit_depth) for f in frames]))
    else:
        log = None
        if args.pass_ == 2:
            log = ratecontrol.TwoPassLog.from_bytes(Path(args.log).read_bytes())
        res = codec.encode_sequence(frames, cfg, video.bit_depth, pass_=args.pass_, log=log)
        data = res.data
        if args.pass_ == 1:
            Path(args.log).write_bytes(res.log.to_bytes())
        for frame, flag in res.flags:
            print(f"rate control: frame {frame}: {flag}", file=sys.stderr)
    Path(args.output).write_bytes(data)
    print(f"{len(frames)} frame(s), {len(data)} bytes")
    return EXIT_OK


def cmd_decode(args) -> int:
    data = Path(args.input).read_bytes()
    decoded = codec.decode_stream(data)
    head = decoded[0][1]
    video = Video([planes for planes, _ in decoded], head.bit_depth, (int(round(args.fps)), 1))
    write_image(args.output, video)
    print(f"{len(decoded)} frame(s), {head.width}x{head.height}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    a, b = read_image(args.reference), read_image(args.distorted)
    if len(a.frames) != len(b.frames) or a.bit_depth != b.bit_depth:
        raise UsageError("inputs differ in frame count or bit depth")
    for i, (fa, fb) in enumerate(zip(a.frames, b.frames)):
        if len(fa) != len(fb) or any(x.shape != y.shape for x, y in zip(fa, fb)):
            raise UsageError(f"frame {i}: plane dimensions differ")
        names = ("Y", "Cb", "Cr")
        parts = " ".join(f"{names[k]}={codec.psnr(x, y, a.bit_depth):.3f}" for k, (x, y) in enumerate(zip(fa, fb)))
        total = codec.psnr_planes(fa, fb, a.bit_depth)
        print(f"frame {i}: PSNR {total:.3f} dB ({parts})")
    return EXIT_OK


def _load_luma(path):
    return read_image(path).frames[0][0]


def cmd_train_fdip(args) -> int:
    d = Path(args.images)
    if not d.is_dir():
        raise OSError(f"{d}: not a directory")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".y4m"))
    if not paths:
        raise OSError(f"{d}: no .pgm or .y4m images")
    images = _pmap(_load_luma, paths)
    corpus = fdip.build_corpus(images)
    if len(corpus) == 0:
        raise UsageError("images too small to yield training blocks")
    base = fdip.prediction_gain(corpus, fdip.initial_predictors())
    dense = fdip.train(corpus, iters=args.iters)
    res = fdip.sparsify(corpus, dense.Fs, budget=args.budget, strategy=args.strategy)
    Path(args.out).write_bytes(fdip.save_predictors(res.Fs, res.masks))
    print(f"blocks={len(corpus)} initial_Pg={base:.4f}dB "
          f"dense_Pg={dense.history[-1]['prediction_gain'] if dense.history else base:.4f}dB "
          f"sparse_Pg={fdip.prediction_gain(corpus, res.Fs):.4f}dB "
          f"max_nnz_per_row={int(res.masks.sum(axis=2).max())}")
    return EXIT_OK


def cmd_bench_ec(args) -> int:
    if args.symbols < 0:
        raise UsageError("--symbols must be non-negative")
    print(entropy.bench_throughput(args.model, args.symbols, args.seed).format())
    return EXIT_OK


def cmd_rc_sim(args) -> int:
    enc = ratecontrol.SyntheticEncoder(seed=args.seed, drift=args.drift, noise=args.noise)
    cfg = ratecontrol.RcConfig(args.target_bits, args.buffer_frames)
    passes = (1, 2) if args.pass_ is None else (args.pass_,)
    if 1 in passes:
        r = ratecontrol.simulate_one_pass(enc, cfg, args.frames)
        print(f"one-pass: frames={args.frames} rate_error={100 * r.rate_error:+.3f}% "
              f"mean_qp={np.mean(r.qps):.2f} flags={len(r.flags)}")
    if 2 in passes:
        if args.chunks < 1:
            raise UsageError("--chunks must be at least 1")
        bounds = np.linspace(0, args.frames, args.chunks + 1).astype(int)
        logs = [ratecontrol.first_pass(enc, cfg.gop, int(a), int(b - a)) for a, b in zip(bounds, bounds[1:])]
        log = ratecontrol.chunk_merge(logs)
        if args.log:
            Path(args.log).write_bytes(log.to_bytes())
        r = ratecontrol.simulate_two_pass(enc, cfg, log)
        print(f"two-pass: frames={args.frames} chunks={args.chunks} rate_error={100 * r.rate_error:+.3f}% "
              f"mean_qp={np.mean(r.qps):.2f} flags={len(r.flags)}")
    return EXIT_OK


def cmd_basis(args) -> int:
    rng = np.random.default_rng(args.seed)
    trees = [[PartitionTree.random(SB_SIZE, rng) for _ in range(args.sbs)] for _ in range(args.sbs)]
    leaves = [leaf for r, row in enumerate(trees) for c, t in enumerate(row)
              for leaf in t.leaves(c * SB_SIZE, r * SB_SIZE)]
    chosen = {(x, y) for x, y, _ in leaves if rng.random() < args.fraction}
    plane = codec.render_dc_basis(trees, chosen, args.amplitude, lapping=args.lapping)
    img = np.clip(np.round(plane) + 128, 0, 255).astype(np.int64)
    Path(args.output).write_bytes(format_pgm(img, 8))
    print(f"{len(chosen)} of {len(leaves)} blocks set; range [{plane.min():.1f}, {plane.max():.1f}]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dtk", description="Daala-style intra codec toolkit.", epilog=EPILOG,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=EPILOG,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", metavar="FILE", help="key=value file of defaults for this command")
        return sp

    e = add("encode", cmd_encode, "Encode a PGM or Y4M (4:2:0) file.")
    e.add_argument("input")
    e.add_argument("output")
    e.add_argument("--qp", type=int, help="fixed quantization parameter (default 30)")
    e.add_argument("--target-bitrate", type=float, metavar="BPS", help="rate-controlled mode, bits per second")
    e.add_argument("--buffer-frames", type=int, default=24, help="reservoir size in frames")
    e.add_argument("--pass", dest="pass_", type=int, choices=(1, 2), help="two-pass mode: 1 writes --log, 2 reads it")
    e.add_argument("--log", metavar="FILE", help="first-pass log file")
    e.add_argument("--fps", type=float, help="frame rate (default from the Y4M header, else 30)")
    e.add_argument("--frames", type=int, help="encode only the first N frames")
    e.add_argument("--dering", choices=codec.DERING_MODES, default="dd", help="in-loop filter order")
    for name in ("lapping", "ac-copy", "cfl", "haar-dc"):
        e.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=True,
                       help=f"enable {name.replace('-', ' ')}")

    d = add("decode", cmd_decode, "Decode a .dtk stream to PGM or Y4M.")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--fps", type=float, default=30.0, help="frame rate written to Y4M output")

    m = add("metrics", cmd_metrics, "Print PSNR between two images.")
    m.add_argument("reference")
    m.add_argument("distorted")

    t = add("train-fdip", cmd_train_fdip, "Train sparse frequency-domain intra predictors.")
    t.add_argument("--images", required=True, metavar="DIR")
    t.add_argument("--iters", type=int, default=30)
    t.add_argument("--budget", type=int, default=4, help="nonzero multiplies per output coefficient")
    t.add_argument("--strategy", choices=("magnitude", "gain_impact"), default="gain_impact")
    t.add_argument("--out", required=True, metavar="FILE")

    b = add("bench-ec", cmd_bench_ec, "Benchmark the entropy coder on a 10-ary mode stream.")
    b.add_argument("--model", choices=("tree", "cdf15", "freq"), default="cdf15")
    b.add_argument("--symbols", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=0)

    r = add("rc-sim", cmd_rc_sim, "Simulate rate control against a synthetic encoder.")
    r.add_argument("--frames", type=int, default=1000)
    r.add_argument("--target-bits", type=float, default=20000.0, help="bits per frame")
    r.add_argument("--buffer-frames", type=int, default=24)
    r.add_argument("--pass", dest="pass_", type=int, choices=(1, 2))
    r.add_argument("--chunks", type=int, default=1, help="split the first pass into this many chunks")
    r.add_argument("--log", metavar="FILE", help="write the merged first-pass log")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--drift", type=float, default=0.3)
    r.add_argument("--noise", type=float, default=0.1)

    s = add("basis", cmd_basis, "Render DC basis functions for random partitions.")
    s.add_argument("output")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--amplitude", type=float, default=1000.0, help="DC value in pixel units")
    s.add_argument("--sbs", type=int, default=2, help="superblocks per side")
    s.add_argument("--fraction", type=float, default=0.5, help="share of blocks whose DC is set")
    s.add_argument("--lapping", action=argparse.BooleanOptionalAction, default=True)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        if args.config:
            sp = parser._subparsers._group_actions[0].choices[args.command]
            sp.set_defaults(**load_config(args.config, sp))
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"dtk: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except codec.DecodeError as e:
        print(f"dtk: decode error in {e.stage}: {e}", file=sys.stderr)
        return EXIT_DECODE
    except (OSError, ImageFormatError, ratecontrol.LogError) as e:
        print(f"dtk: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, entropy.StreamError) as e:
        # remaining value errors come from argument combinations the modules reject
        print(f"dtk: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        print(f"dtk: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run())
