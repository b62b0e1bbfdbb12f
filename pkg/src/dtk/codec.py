"""Intra encoder and decoder.

Pipeline per frame: pad to whole superblocks, pre-filter the superblock grid
edges, then for each superblock pick a partition by RD search, pre-filter
its interior edges, transform, and code luma followed by both chroma planes.
Reconstruction (shared by both sides) runs the inverse transforms and the
post-filter, crops, and finally applies the in-loop deringing filters whose
per-superblock decisions trail the coefficient data in the same payload.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dering import InloopParams, Order, apply_inloop, code_decisions
from .entropy import ContextSet, RateCounter, Reader, StreamError, Writer
from .predict import (DcTree, ac_copy_predict, cfl_luma_source, cfl_shape_predict, haar_dc_expand,
                      haar_dc_merge, predict_sb_dc)
from .pvq import BandLayout, code_band, pvq_decode_band, pvq_encode_band, quantize_band
from .ratecontrol import (DEFAULT_ALPHA, FrameRecord, GopPattern, RcConfig, RcModel, TwoPassController, TwoPassLog,
                          quantizer, scale_from_frame)
from .transforms import (MIN_BLOCK, SB_SIZE, PartitionTree, apply_lapping, fdct, idct, lap_exterior,
                         lap_split_level, lap_tree, round_half_away)

MAGIC = b"DTK1"
VERSION = 1
FRAC_BITS = 4
PSNR_CAP = 99.0
RC_QP = 0xFF
_HEAD = struct.Struct("<4sBIIBBBB")


class DecodeError(Exception):
    """Base class for bitstream errors."""

    stage = "decode"


class MalformedStreamError(DecodeError):
    stage = "payload"


class VersionError(DecodeError):
    stage = "header"


class TruncatedPayloadError(DecodeError):
    def __init__(self, msg: str, stage: str = "payload"):
        super().__init__(msg)
        self.stage = stage


# ---------------------------------------------------------------------------
# Configuration and header


DERING_MODES = ("off", "dd", "clpf", "clpf-dd", "dd-clpf")


@dataclass
class EncoderConfig:
    qp: int | None = 30
    target_bitrate: float | None = None  # bits per second, rate-controlled mode
    fps: float = 30.0
    sb: int = SB_SIZE
    lapping: bool = True
    ac_copy: bool = True
    cfl: bool = True
    haar_dc: bool = True
    dering: str = "dd"
    buffer_frames: int = 24
    gop: GopPattern = field(default_factory=GopPattern)
    lam_scale: float = 0.1

    def __post_init__(self):
        if (self.qp is None) == (self.target_bitrate is None):
            raise ValueError("set exactly one of qp and target_bitrate")
        if self.qp is not None and not 0 <= self.qp < RC_QP:
            raise ValueError(f"qp must be in 0..{RC_QP - 1}")
        if self.dering not in DERING_MODES:
            raise ValueError(f"unknown dering mode {self.dering!r}")
        if self.sb != SB_SIZE:
            raise ValueError("only 32x32 superblocks are supported")



@dataclass(frozen=True)
class Tools:
    lapping: bool = True
    ac_copy: bool = True
    cfl: bool = True
    haar_dc: bool = True
    dering: str = "dd"

    @classmethod
    def from_flags(cls, flags: int) -> "Tools":
        idx = flags >> 4
        if idx >= len(DERING_MODES) or flags & 0x80:
            raise MalformedStreamError(f"invalid tool flags 0x{flags:02x}")
        return cls(bool(flags & 1), bool(flags & 2), bool(flags & 4), bool(flags & 8), DERING_MODES[idx])

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> "Tools":
        return cls(cfg.lapping, cfg.ac_copy, cfg.cfl, cfg.haar_dc, cfg.dering)

    @property
    def flags(self) -> int:
        return (int(self.lapping) | int(self.ac_copy) << 1 | int(self.cfl) << 2
                | int(self.haar_dc) << 3 | DERING_MODES.index(self.dering) << 4)


@dataclass(frozen=True)
class BitstreamHeader:
    width: int
    height: int
    bit_depth: int
    chroma: int  # 0 monochrome, 1 4:2:0
    flags: int
    qp: int  # quantization parameter actually used
    rc_target: int | None = None  # bits per frame when rate-controlled

    def pack(self, payload_len: int) -> bytes:
        head = _HEAD.pack(MAGIC, VERSION, self.width, self.height, self.bit_depth, self.chroma,
                          self.flags, RC_QP if self.rc_target is not None else self.qp)
        if self.rc_target is not None:
            head += struct.pack("<BI", self.qp, self.rc_target)
        return head + struct.pack("<I", payload_len)

    @classmethod
    def unpack(cls, data: bytes, pos: int = 0) -> tuple["BitstreamHeader", int, int]:
        """Returns (header, payload offset, payload length)."""
        if len(data) - pos < 5:
            raise TruncatedPayloadError("stream ends inside the header", "header")
        if data[pos:pos + 4] != MAGIC:
            raise MalformedStreamError("bad magic; not a DTK1 stream")
        if data[pos + 4] != VERSION:
            raise VersionError(f"unsupported bitstream version {data[pos + 4]}")
        if len(data) - pos < _HEAD.size:
            raise TruncatedPayloadError("stream ends inside the header", "header")
        _, _, w, h, bd, chroma, flags, qp = _HEAD.unpack_from(data, pos)
        pos += _HEAD.size
        rc_target = None
        if qp == RC_QP:
            if len(data) - pos < 5:
                raise TruncatedPayloadError("stream ends inside the rate-control data", "header")
            qp, rc_target = struct.unpack_from("<BI", data, pos)
            pos += 5
        if len(data) - pos < 4:
            raise TruncatedPayloadError("stream ends before the payload length", "header")
        (plen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if not (16 <= w <= 1 << 16 and 16 <= h <= 1 << 16):
            raise MalformedStreamError(f"implausible frame size {w}x{h}")
        if bd not in (8, 10):
            raise MalformedStreamError(f"unsupported bit depth {bd}")
        if chroma not in (0, 1):
            raise MalformedStreamError(f"unknown chroma format {chroma}")
        Tools.from_flags(flags)
        if len(data) - pos < plen:
            raise TruncatedPayloadError(f"payload truncated: {len(data) - pos} of {plen} bytes")
        return cls(w, h, bd, chroma, flags, qp, rc_target), pos, plen


# ---------------------------------------------------------------------------
# Sample domains and quantizers


def to_internal(pixels: np.ndarray, bit_depth: int) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.int64) - (1 << (bit_depth - 1))) << FRAC_BITS


def to_pixels(samples: np.ndarray, bit_depth: int) -> np.ndarray:
    v = ((np.asarray(samples, dtype=np.int64) + (1 << (FRAC_BITS - 1))) >> FRAC_BITS) + (1 << (bit_depth - 1))
    return np.clip(v, 0, (1 << bit_depth) - 1)


def pixel_quantizer(qp: float, bit_depth: int = 8) -> float:
    return 0.25 * 2.0 ** (qp / 6.0) * 2.0 ** (bit_depth - 8)


def coeff_quantizer(qp: float, bit_depth: int = 8) -> float:
    """Quantizer step in internal coefficient units (orthonormal transforms)."""
    return pixel_quantizer(qp, bit_depth) * (1 << FRAC_BITS)


def rd_lambda(q: float, scale: float = 0.1) -> float:
    return scale * q * q


def pad_plane(plane: np.ndarray, mult: int) -> np.ndarray:
    h, w = plane.shape
    return np.pad(plane, ((0, -h % mult), (0, -w % mult)), mode="edge")


def chroma_shape(width: int, height: int) -> tuple[int, int]:
    return (height + 1) // 2, (width + 1) // 2


def psnr(a: np.ndarray, b: np.ndarray, bit_depth: int = 8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    peak = (1 << bit_depth) - 1
    return min(PSNR_CAP, 10 * math.log10(peak * peak / mse))


def psnr_planes(a: Sequence[np.ndarray], b: Sequence[np.ndarray], bit_depth: int = 8) -> float:
    """PSNR over all samples of all planes together."""
    if len(a) != len(b):
        raise ValueError("plane count mismatch")
    num = sum(float(np.sum((np.asarray(x, float) - np.asarray(y, float)) ** 2)) for x, y in zip(a, b))
    cnt = sum(np.asarray(x).size for x in a)
    if num == 0:
        return PSNR_CAP
    peak = (1 << bit_depth) - 1
    return min(PSNR_CAP, 10 * math.log10(peak * peak * cnt / num))


# ---------------------------------------------------------------------------
# RD partition search


RDO_DC_KEY = ("rdo", "dc")


def _split_key(plane: int, size: int):
    return ("split", plane, size)


def leaf_cost(block: np.ndarray, q: float, lam: float, ctx: ContextSet, plane: int = 0) -> float:
    """D + lambda R of coding ``block`` as one transform, without prediction.

    Rates come from the current (frozen) contexts, so the costs of disjoint
    leaves add up independently of coding order.
    """
    c = fdct(block)
    size = c.shape[0]
    rc = RateCounter(ctx)
    dc = int(c[0, 0])
    qd = int(round_half_away(dc / q))
    rc.sint(RDO_DC_KEY, qd)
    dist = float(dc - round_half_away(qd * q)) ** 2
    flat = c.reshape(-1)
    for b, idx in enumerate(BandLayout(size).bands()):
        r = quantize_band(flat[idx], None, q, False)
        dist += r.sse
        code_band(rc, (plane, size, b), r.params, r.pulses, idx.size, False)
    return dist + lam * rc.total


def _flag_cost(ctx: ContextSet, key, bit: int) -> float:
    rc = RateCounter(ctx)
    rc.flag(key, bit)
    return rc.total


def rdo_partition(block: np.ndarray, q: float, lam: float, ctx: ContextSet | None = None,
                  lapping: bool = True, plane: int = 0,
                  min_size: int = MIN_BLOCK) -> tuple[PartitionTree, float]:
    """Cheapest quadtree for a block whose outer edges are already pre-filtered.

    At every node the cost of coding the node whole is compared with the cost
    of pre-filtering its central cross and coding the four quadrants
    (recursively); both are measured before any post-filtering.
    """
    ctx = ctx if ctx is not None else ContextSet()
    block = np.asarray(block, dtype=np.int64)

    def search(b: np.ndarray) -> tuple[PartitionTree, float]:
        size = b.shape[0]
        cost = leaf_cost(b, q, lam, ctx, plane)
        if size <= min_size:
            return PartitionTree(size), cost
        key = _split_key(plane, size)
        whole = cost + lam * _flag_cost(ctx, key, 0)
        inner = lap_split_level(b, "pre") if lapping else b
        h = size // 2
        kids, split = [], lam * _flag_cost(ctx, key, 1)
        for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
            t, c = search(inner[dy * h:(dy + 1) * h, dx * h:(dx + 1) * h])
            kids.append(t)
            split += c
        if split < whole:
            return PartitionTree(size, tuple(kids)), split
        return PartitionTree(size), whole

    return search(block)


def tree_cost(block: np.ndarray, tree: PartitionTree, q: float, lam: float,
              ctx: ContextSet | None = None, lapping: bool = True, plane: int = 0,
              min_size: int = MIN_BLOCK) -> float:
    """RD cost of one given partition (the exhaustive-search reference)."""
    ctx = ctx if ctx is not None else ContextSet()
    b = np.array(block, dtype=np.int64, copy=True)
    if lapping:
        lap_tree(b, tree, 0, 0, "pre")
    total = 0.0

    def flags(node: PartitionTree):
        nonlocal total
        if node.size <= min_size:
            return
        total += lam * _flag_cost(ctx, _split_key(plane, node.size), int(not node.is_leaf))
        if not node.is_leaf:
            for ch in node.children:
                flags(ch)

    flags(tree)
    for x, y, s in tree.leaves():
        total += leaf_cost(b[y:y + s, x:x + s], q, lam, ctx, plane)
    return total


# ---------------------------------------------------------------------------
# Superblock coding shared by encoder and decoder


def code_tree(io, plane: int, tree: PartitionTree | None, size: int,
              min_size: int = MIN_BLOCK) -> PartitionTree:
    if size <= min_size:
        return PartitionTree(size)
    split = io.flag(_split_key(plane, size), None if tree is None else int(not tree.is_leaf))
    if not split:
        return PartitionTree(size)
    kids = [code_tree(io, plane, None if tree is None else tree.children[i], size // 2, min_size)
            for i in range(4)]
    return PartitionTree(size, tuple(kids))


def _node_sizes(tree: PartitionTree) -> list[int]:
    out = []

    def walk(n):
        if n.children is not None:
            out.append(n.size)
            for ch in n.children:
                walk(ch)

    walk(tree)
    return out


class PlaneState:
    """Reconstructed coefficient data of one plane, for prediction."""

    def __init__(self, index: int, width: int, height: int, sb: int, q: float, lam: float):
        self.index = index
        self.sb = sb
        self.q = q
        self.lam = lam
        self.coeffs: dict[tuple[int, int], tuple[int, np.ndarray]] = {}
        self.owner = np.full((height // 4, width // 4, 3), -1, dtype=np.int64)  # (x, y, size)
        self.roots: dict[tuple[int, int], int] = {}
        self.trees: dict[tuple[int, int], PartitionTree] = {}

    def neighbour(self, x: int, y: int) -> tuple[int, np.ndarray] | None:
        """Leaf covering sample (x, y), as (size, coeffs), keyed by its origin."""
        if x < 0 or y < 0:
            return None
        ox, oy, s = self.owner[y // 4, x // 4]
        if s < 0:
            return None
        return int(s), self.coeffs[(int(ox), int(oy))][1], int(ox), int(oy)

    def store(self, x: int, y: int, size: int, rec: np.ndarray) -> None:
        self.coeffs[(x, y)] = (size, rec)
        self.owner[y // 4:(y + size) // 4, x // 4:(x + size) // 4] = (x, y, size)

    def ac_neighbours(self, x: int, y: int, size: int):
        above = self.neighbour(x, y - 1)
        left = self.neighbour(x - 1, y)
        above = (above[0], above[1]) if above is not None and above[2] == x else None
        left = (left[0], left[1]) if left is not None and left[3] == y else None
        return left, above


def _code_dc(io, st: PlaneState, tools: Tools, tree: PartitionTree, sbr: int, sbc: int,
             dcs: list[int] | None) -> list[int]:
    """Code the leaf DCs of a superblock; returns their reconstructions."""
    p = st.index
    q = st.q
    enc = dcs is not None
    if not tools.haar_dc:
        out = []
        for k, (_, _, size) in enumerate(tree.leaves()):
            v = io.sint(("dcleaf", p, size), int(round_half_away(dcs[k] / q)) if enc else None)
            out.append(int(round_half_away(v * q)))
        return out
    merged = haar_dc_merge(tree, dcs) if enc else None
    pred = predict_sb_dc(st.roots.get((sbr, sbc - 1)), st.roots.get((sbr - 1, sbc)),
                         st.roots.get((sbr - 1, sbc - 1)))
    qr = io.sint(("dcroot", p), int(round_half_away((merged.root - pred) / q)) if enc else None)
    root = pred + int(round_half_away(qr * q))
    details = []
    for k, size in enumerate(_node_sizes(tree)):
        vals = []
        for j in range(3):
            qv = io.sint(("dcdetail", p, size, j),
                         int(round_half_away(merged.details[k][j] / q)) if enc else None)
            vals.append(int(round_half_away(qv * q)))
        details.append(tuple(vals))
    st.roots[(sbr, sbc)] = root
    return haar_dc_expand(tree, DcTree(root, details))


def _predictor(st: PlaneState, tools: Tools, x: int, y: int, size: int,
               luma: PlaneState | None) -> np.ndarray | None:
    if luma is not None and tools.cfl:
        src = cfl_luma_source(luma.coeffs, 2 * x, 2 * y, 2 * size)
        return None if src is None else cfl_shape_predict(src, size)
    if tools.ac_copy:
        left, above = st.ac_neighbours(x, y, size)
        pr = ac_copy_predict(size, left, above)
        return None if pr is None else pr.coeffs
    return None


def code_sb_plane(io, st: PlaneState, tools: Tools, tree: PartitionTree, sbr: int, sbc: int,
                  src: dict | None = None, luma: PlaneState | None = None,
                  rate_io=None) -> None:
    """Code (src given) or decode the coefficients of one superblock of a plane."""
    x0, y0 = sbc * st.sb, sbr * st.sb
    leaves = list(tree.leaves(x0, y0))
    enc = src is not None
    dc_hat = _code_dc(io, st, tools, tree, sbr, sbc, [int(src[(x, y)][0, 0]) for x, y, _ in leaves] if enc else None)
    st.trees[(sbr, sbc)] = tree
    for (x, y, size), dc in zip(leaves, dc_hat):
        pred = _predictor(st, tools, x, y, size, luma)
        rec = np.zeros(size * size, dtype=np.int64)
        rec[0] = dc
        flat_src = src[(x, y)].reshape(-1) if enc else None
        pflat = None if pred is None else pred.reshape(-1)
        for b, idx in enumerate(BandLayout(size).bands()):
            pb = None if pflat is None else pflat[idx]
            if pb is not None and not np.any(pb):
                pb = None
            key = (st.index, size, b)
            if enc:
                vals = pvq_encode_band(io, key, flat_src[idx], pb, st.q, st.lam, rate_io).recon
            else:
                vals = pvq_decode_band(io, key, idx.size, pb, st.q)
            rec[idx] = round_half_away(vals)
        st.store(x, y, size, rec.reshape(size, size))


def reconstruct_plane(st: PlaneState, shape: tuple[int, int], lapping: bool) -> np.ndarray:
    """Inverse transforms and post-filter of a fully coded (padded) plane."""
    out = np.zeros(shape, dtype=np.int64)
    for (x, y), (size, rec) in st.coeffs.items():
        out[y:y + size, x:x + size] = idct(rec)
    if lapping:
        rows, cols = shape[0] // st.sb, shape[1] // st.sb
        trees = [[st.trees[(r, c)] for c in range(cols)] for r in range(rows)]
        out = apply_lapping(out, trees, "post", st.sb)
    return out


# ---------------------------------------------------------------------------
# Frames


@dataclass
class Frame:
    planes: list[np.ndarray]
    bit_depth: int = 8

    @property
    def width(self) -> int:
        return self.planes[0].shape[1]

    @property
    def height(self) -> int:
        return self.planes[0].shape[0]

    @property
    def chroma(self) -> int:
        return 1 if len(self.planes) == 3 else 0


@dataclass
class EncodeResult:
    data: bytes
    recon: list[np.ndarray]
    qp: int
    trees: list[list[PartitionTree]]
    bits: int


def _plane_geometry(frame_w: int, frame_h: int, chroma: int):
    """(index, height, width, sb, subsampling) for every plane."""
    out = [(0, frame_h, frame_w, SB_SIZE, 0)]
    if chroma:
        ch, cw = chroma_shape(frame_w, frame_h)
        out += [(1, ch, cw, SB_SIZE // 2, 1), (2, ch, cw, SB_SIZE // 2, 1)]
    return out


def _check_frame(planes: Sequence[np.ndarray], bit_depth: int) -> None:
    if len(planes) not in (1, 3):
        raise ValueError("expected one (mono) or three (4:2:0) planes")
    h, w = planes[0].shape
    if h < 16 or w < 16:
        raise ValueError("frame dimensions must be at least 16x16")
    if bit_depth not in (8, 10):
        raise ValueError("bit depth must be 8 or 10")
    if len(planes) == 3:
        for p in planes[1:]:
            if p.shape != chroma_shape(w, h):
                raise ValueError(f"chroma plane {p.shape} does not match 4:2:0 of {w}x{h}")
    for p in planes:
        if p.min() < 0 or p.max() >= 1 << bit_depth:
            raise ValueError("sample outside the bit-depth range")


def _run_frame(io, tools: Tools, qp: int, width: int, height: int, chroma: int, bit_depth: int,
               source: Sequence[np.ndarray] | None):
    """The coding loop shared by encoder (source given) and decoder."""
    enc = source is not None
    q = coeff_quantizer(qp, bit_depth)
    lam = rd_lambda(q)
    geo = _plane_geometry(width, height, chroma)
    padded_shape = {}
    states: list[PlaneState] = []
    work: list[np.ndarray | None] = []
    for idx, h, w, sb, _ in geo:
        ph, pw = -(-h // sb) * sb, -(-w // sb) * sb
        padded_shape[idx] = (ph, pw)
        states.append(PlaneState(idx, pw, ph, sb, q, lam))
        if enc:
            x = to_internal(pad_plane(np.asarray(source[idx]), sb), bit_depth)
            if tools.lapping:
                lap_exterior(x, sb, "pre")
            work.append(x)
        else:
            work.append(None)
    rows = padded_shape[0][0] // SB_SIZE
    cols = padded_shape[0][1] // SB_SIZE
    rate_io = (lambda: RateCounter(io.ctx)) if enc else None
    trees = [[None] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            x0, y0 = c * SB_SIZE, r * SB_SIZE
            tree = None
            if enc:
                tree, _ = rdo_partition(work[0][y0:y0 + SB_SIZE, x0:x0 + SB_SIZE], q, lam, io.ctx, tools.lapping)
            tree = code_tree(io, 0, tree, SB_SIZE)
            trees[r][c] = tree
            for idx, _, _, sb, sub in geo:
                t = tree if sub == 0 else tree.scaled(sub, MIN_BLOCK)
                src = None
                if enc:
                    px, py = c * sb, r * sb
                    if tools.lapping:
                        lap_tree(work[idx], t, px, py, "pre")
                    src = {(x, y): fdct(work[idx][y:y + s, x:x + s]) for x, y, s in t.leaves(px, py)}
                code_sb_plane(io, states[idx], tools, t, r, c, src,
                              states[0] if idx > 0 else None, rate_io)
    recon = []
    for idx, h, w, sb, _ in geo:
        full = reconstruct_plane(states[idx], padded_shape[idx], tools.lapping)
        recon.append(to_pixels(full[:h, :w], bit_depth))
    # in-loop filters: decisions follow all coefficient data
    order = Order(tools.dering)
    if order.filters:
        for idx, h, w, sb, _ in geo:
            params = InloopParams(sb=sb, bit_depth=bit_depth)
            count = (-(-h // sb)) * (-(-w // sb))
            if enc:
                out, dec = apply_inloop(recon[idx], order, source=np.asarray(source[idx], dtype=np.int64),
                                        params=params)
                for kind in order.filters:
                    code_decisions(io, kind, idx, dec[kind], count)
            else:
                dec = {kind: code_decisions(io, kind, idx, None, count) for kind in order.filters}
                out, _ = apply_inloop(recon[idx], order, decisions=dec, params=params)
            recon[idx] = out
    return recon, trees


def encode_frame(planes: Sequence[np.ndarray], config: EncoderConfig, bit_depth: int = 8,
                 qp: int | None = None, rc_target: int | None = None) -> EncodeResult:
    """Encode one frame.  ``qp`` overrides the config (used by rate control)."""
    planes = [np.asarray(p, dtype=np.int64) for p in planes]
    _check_frame(planes, bit_depth)
    qp = config.qp if qp is None else qp
    if qp is None or not 0 <= qp < RC_QP:
        raise ValueError("a quantization parameter in 0..254 is required")
    tools = Tools.from_config(config)
    h, w = planes[0].shape
    chroma = 1 if len(planes) == 3 else 0
    wr = Writer()
    recon, trees = _run_frame(wr, tools, qp, w, h, chroma, bit_depth, planes)
    payload = wr.finish()
    head = BitstreamHeader(w, h, bit_depth, chroma, tools.flags, qp, rc_target)
    data = head.pack(len(payload)) + payload
    return EncodeResult(data, recon, qp, trees, 8 * len(data))


def decode_frame(data: bytes, pos: int = 0) -> tuple[list[np.ndarray], BitstreamHeader, int]:
    """Decode one frame packet starting at ``pos``; returns (planes, header, next pos)."""
    head, start, plen = BitstreamHeader.unpack(data, pos)
    payload = bytes(data[start:start + plen])
    tools = Tools.from_flags(head.flags)
    rd = Reader(payload)
    try:
        recon, _ = _run_frame(rd, tools, head.qp, head.width, head.height, head.chroma, head.bit_depth, None)
    except (StreamError, ValueError, IndexError, KeyError) as e:
        raise MalformedStreamError(f"corrupt payload: {e}") from e
    return recon, head, start + plen


def decode_stream(data: bytes) -> list[tuple[list[np.ndarray], BitstreamHeader]]:
    out = []
    pos = 0
    if not data:
        raise TruncatedPayloadError("empty stream", "header")
    while pos < len(data):
        planes, head, pos = decode_frame(data, pos)
        out.append((planes, head))
    return out


# ---------------------------------------------------------------------------
# Sequences and rate control

FIRST_PASS_QP = 60


@dataclass
class SequenceResult:
    data: bytes
    frames: list[EncodeResult]
    log: TwoPassLog | None = None
    flags: list = field(default_factory=list)

    @property
    def bits(self) -> int:
        return 8 * len(self.data)


def encode_sequence(frames: Sequence[Sequence[np.ndarray]], config: EncoderConfig, bit_depth: int = 8,
                    pass_: int | None = None, log: TwoPassLog | None = None,
                    first_pass_qp: int = FIRST_PASS_QP) -> SequenceResult:
    """Encode frames as independent intra packets, concatenated.

    With a target bitrate the quantizer of each frame comes from the
    one-pass reservoir model, or from the first-pass ``log`` when
    ``pass_ == 2``.  ``pass_ == 1`` encodes at a fixed qp and returns the
    log of measured frame scales.
    """
    if pass_ not in (None, 1, 2):
        raise ValueError("pass must be 1 or 2")
    gop = config.gop
    results: list[EncodeResult] = []
    if pass_ == 1 or config.target_bitrate is None:
        qp = config.qp if config.qp is not None else first_pass_qp
        recs = []
        for i, planes in enumerate(frames):
            r = encode_frame(planes, config, bit_depth, qp=qp)
            results.append(r)
            t = gop.frame_type(i)
            q = quantizer(qp)
            recs.append(FrameRecord(t, scale_from_frame(r.bits, q, DEFAULT_ALPHA[t]), q, r.bits))
        out_log = TwoPassLog(0, recs) if pass_ == 1 else None
        return SequenceResult(b"".join(r.data for r in results), results, out_log)
    bpf = config.target_bitrate / config.fps
    rc_cfg = RcConfig(bpf, config.buffer_frames, gop=gop)
    if pass_ == 2:
        if log is None:
            raise ValueError("second pass needs a first-pass log")
        if len(log.records) != len(frames) or log.start != 0:
            raise ValueError(f"log covers {len(log.records)} frames, input has {len(frames)}")
        ctrl = TwoPassController(rc_cfg, log)
        model = ctrl.model
    else:
        ctrl = model = RcModel(rc_cfg, n_frames=len(frames))
    for i, planes in enumerate(frames):
        t = gop.frame_type(i)
        qp = model.frame_qp(ctrl.choose_qp().qp, t)
        r = encode_frame(planes, config, bit_depth, qp=qp, rc_target=int(round(bpf)))
        ctrl.post_frame(t, r.bits, quantizer(qp))
        results.append(r)
    return SequenceResult(b"".join(r.data for r in results), results, None, list(model.flags))


# ---------------------------------------------------------------------------
# Basis functions


def render_dc_basis(trees: Sequence[Sequence[PartitionTree]], blocks: set | Sequence,
                    amplitude: float, lapping: bool = True) -> np.ndarray:
    """Reconstruct a plane whose only nonzero coefficients are chosen leaf DCs.

    ``blocks`` holds leaf origins (x, y) in plane coordinates.  The result is
    the signed reconstruction in pixel units (no mid-level offset).
    """
    rows, cols = len(trees), len(trees[0])
    shape = (rows * SB_SIZE, cols * SB_SIZE)
    st = PlaneState(0, shape[1], shape[0], SB_SIZE, 1.0, 1.0)
    chosen = set(map(tuple, blocks))
    dc = int(round_half_away(amplitude * (1 << FRAC_BITS)))
    for r in range(rows):
        for c in range(cols):
            st.trees[(r, c)] = trees[r][c]
            for x, y, s in trees[r][c].leaves(c * SB_SIZE, r * SB_SIZE):
                rec = np.zeros((s, s), dtype=np.int64)
                if (x, y) in chosen:
                    rec[0, 0] = dc
                st.store(x, y, s, rec)
    out = reconstruct_plane(st, shape, lapping)
    return out.astype(np.float64) / (1 << FRAC_BITS)
