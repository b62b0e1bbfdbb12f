"""In-loop deringing: a directional conditional-replacement filter (DD) and a
constrained low-pass filter (CLPF), each decided per 32x32 superblock.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .entropy import StreamError

BLOCK = 8
N_DIRECTIONS = 8
STRENGTHS = (0, 1, 2, 4)


class Order(enum.Enum):
    OFF = "off"
    DD = "dd"
    CLPF = "clpf"
    CLPF_THEN_DD = "clpf-dd"
    DD_THEN_CLPF = "dd-clpf"

    @property
    def filters(self) -> tuple[str, ...]:
        return {"off": (), "dd": ("dd",), "clpf": ("clpf",),
                "clpf-dd": ("clpf", "dd"), "dd-clpf": ("dd", "clpf")}[self.value]


# ---------------------------------------------------------------------------
# Direction search


def _line_keys() -> np.ndarray:
    """For each direction, the line index of every pixel of an 8x8 block.

    Direction d is a line at d * 22.5 degrees from horizontal; pixels with
    the same key lie on the same discrete line.
    """
    i, j = np.mgrid[0:BLOCK, 0:BLOCK]  # i row (down), j column
    keys = [
        i,                      # 0: horizontal
        i + j // 2,             # 22.5
        i + j,                  # 45
        i // 2 + j,             # 67.5
        j,                      # 90: vertical
        j - i // 2,             # 112.5
        j - i,                  # 135
        i - j // 2,             # 157.5
    ]
    out = np.stack([k - k.min() for k in keys])
    out.setflags(write=False)
    return out


LINE_KEYS = _line_keys()
# 840 is the lcm of 1..8: per-line weights 840/n are integers
_LCM = 840


def direction_costs(block) -> np.ndarray:
    """sum over lines of S^2 * 840 / n for each direction (integer, exact).

    Maximising this is the same as minimising the squared deviation of the
    pixels from their line means.
    """
    b = np.asarray(block, dtype=np.int64)
    if b.shape != (BLOCK, BLOCK):
        raise ValueError("direction search works on 8x8 blocks")
    costs = np.zeros(N_DIRECTIONS, dtype=np.int64)
    flat = b.reshape(-1)
    for d in range(N_DIRECTIONS):
        keys = LINE_KEYS[d].reshape(-1)
        counts = np.bincount(keys)
        sums = np.zeros(counts.size, dtype=np.int64)
        np.add.at(sums, keys, flat)
        costs[d] = int(np.sum(sums * sums * (_LCM // counts)))
    return costs


def find_direction(block) -> int:
    """Index of the best line direction; ties go to the lowest index."""
    return int(np.argmax(direction_costs(block)))


# ---------------------------------------------------------------------------
# Filters

# (row, col) offsets of the taps at distance 1 and 2 along each direction
DIRECTION_TAPS = (
    ((0, 1), (0, 2)),
    ((0, 1), (-1, 2)),
    ((-1, 1), (-2, 2)),
    ((-1, 0), (-2, 1)),
    ((-1, 0), (-2, 0)),
    ((-1, 0), (-2, -1)),
    ((-1, -1), (-2, -2)),
    ((0, -1), (-1, -2)),
)
PRIMARY_WEIGHTS = (4, 2)  # per side, so 4,4,2,2 over both sides
SECONDARY_WEIGHT = 1


def constrain(diff, threshold):
    return np.clip(diff, -threshold, threshold)


def _shifted(padded: np.ndarray, pad: int, dr: int, dc: int, h: int, w: int) -> np.ndarray:
    return padded[pad + dr:pad + dr + h, pad + dc:pad + dc + w]


def _round_div16(total: np.ndarray) -> np.ndarray:
    # symmetric rounding so the filter treats + and - ringing alike
    return np.where(total >= 0, (total + 8) >> 4, -((-total + 8) >> 4))


def dd_filter_region(region: np.ndarray, directions: np.ndarray, strength: int,
                     valid: np.ndarray | None = None) -> np.ndarray:
    """Directional filter of a region whose 8x8 blocks have known directions.

    Taps outside ``valid`` (or outside the region) contribute nothing.
    """
    x = np.asarray(region, dtype=np.int64)
    h, w = x.shape
    if strength <= 0:
        return x.copy()
    pad = 2
    px = np.pad(x, pad)
    pv = np.pad(np.ones_like(x, dtype=bool) if valid is None else valid, pad)
    dir_map = np.kron(directions, np.ones((BLOCK, BLOCK), dtype=np.int64))[:h, :w]
    total = np.zeros_like(x)
    t_pri, t_sec = 2 * strength, strength
    for d in range(N_DIRECTIONS):
        sel = dir_map == d
        if not sel.any():
            continue
        acc = np.zeros_like(x)
        for (dr, dc), wt in zip(DIRECTION_TAPS[d], PRIMARY_WEIGHTS):
            for sgn in (1, -1):
                nb = _shifted(px, pad, sgn * dr, sgn * dc, h, w)
                ok = _shifted(pv, pad, sgn * dr, sgn * dc, h, w)
                acc += wt * np.where(ok, constrain(nb - x, t_pri), 0)
        dr, dc = DIRECTION_TAPS[(d + 4) % N_DIRECTIONS][1]
        for sgn in (1, -1):
            nb = _shifted(px, pad, sgn * dr, sgn * dc, h, w)
            ok = _shifted(pv, pad, sgn * dr, sgn * dc, h, w)
            acc += SECONDARY_WEIGHT * np.where(ok, constrain(nb - x, t_sec), 0)
        total = np.where(sel, acc, total)
    return x + _round_div16(total)


def dering_block(block, direction: int, strength: int) -> np.ndarray:
    """Directional filter of a single block along one direction."""
    b = np.asarray(block, dtype=np.int64)
    dirs = np.full((-(-b.shape[0] // BLOCK), -(-b.shape[1] // BLOCK)), direction)
    return dd_filter_region(b, dirs, strength)


def dd_max_deviation(strength: int) -> int:
    """Bound on |out - in| for the directional filter."""
    return (2 * sum(PRIMARY_WEIGHTS) * 2 * strength + 2 * SECONDARY_WEIGHT * strength + 8) >> 4


def clpf_region(region: np.ndarray, strength: int, valid: np.ndarray | None = None) -> np.ndarray:
    """Move each pixel toward its 4 neighbours, each difference clipped to +-strength."""
    x = np.asarray(region, dtype=np.int64)
    if strength <= 0:
        return x.copy()
    h, w = x.shape
    px = np.pad(x, 1)
    pv = np.pad(np.ones_like(x, dtype=bool) if valid is None else valid, 1)
    total = np.zeros_like(x)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = _shifted(px, 1, dr, dc, h, w)
        ok = _shifted(pv, 1, dr, dc, h, w)
        total += np.where(ok, constrain(nb - x, strength), 0)
    return x + np.where(total >= 0, (total + 2) >> 2, -((-total + 2) >> 2))


def clpf_block(block, strength: int) -> np.ndarray:
    if strength not in (1, 2, 4):
        raise ValueError("CLPF strength must be 1, 2 or 4")
    return clpf_region(block, strength)


# ---------------------------------------------------------------------------
# Frame-level application


@dataclass
class FilterDecision:
    strength_index: int = 0

    @property
    def enabled(self) -> bool:
        return self.strength_index > 0


@dataclass
class InloopParams:
    sb: int = 32
    bit_depth: int = 8
    strengths: tuple[int, ...] = STRENGTHS

    def strength(self, index: int) -> int:
        return self.strengths[index] << max(0, self.bit_depth - 8)


def frame_directions(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    out = np.zeros((-(-h // BLOCK), -(-w // BLOCK)), dtype=np.int64)
    padded = np.pad(frame, ((0, out.shape[0] * BLOCK - h), (0, out.shape[1] * BLOCK - w)), mode="edge")
    for r in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[r, c] = find_direction(padded[r * BLOCK:(r + 1) * BLOCK, c * BLOCK:(c + 1) * BLOCK])
    return out


def filter_frame(kind: str, frame: np.ndarray, strength: int,
                 dirs: np.ndarray | None = None, valid: np.ndarray | None = None) -> np.ndarray:
    if kind == "clpf":
        return clpf_region(frame, strength, valid)
    if dirs is None:
        dirs = frame_directions(frame)
    return dd_filter_region(frame, dirs, strength, valid)


def _run_filter(kind: str, frame: np.ndarray, source: np.ndarray | None,
                decisions: list | None, params: InloopParams, max_value: int):
    """Apply one filter per superblock; choose strengths if ``source`` is given.

    Every superblock reads the unfiltered input, so each candidate strength
    is computed once over the whole frame.
    """
    h, w = frame.shape
    sb = params.sb
    dirs = frame_directions(frame) if kind == "dd" else None
    cache: dict[int, np.ndarray] = {0: frame}

    def candidate(idx: int) -> np.ndarray:
        if idx not in cache:
            cache[idx] = np.clip(filter_frame(kind, frame, params.strength(idx), dirs), 0, max_value)
        return cache[idx]

    out = frame.copy()
    chosen = []
    k = 0
    for r0 in range(0, h, sb):
        for c0 in range(0, w, sb):
            win = (slice(r0, r0 + sb), slice(c0, c0 + sb))
            if decisions is None:
                src = source[win]
                best, best_err = 0, None
                for idx in range(len(params.strengths)):
                    diff = candidate(idx)[win] - src
                    err = int(np.sum(diff * diff))
                    if best_err is None or err < best_err:
                        best, best_err = idx, err
                dec = FilterDecision(best)
            else:
                if k >= len(decisions):
                    raise StreamError("missing in-loop filter decisions")
                dec = decisions[k]
                k += 1
            chosen.append(dec)
            out[win] = candidate(dec.strength_index)[win]
    return out, chosen


def apply_inloop(frame: np.ndarray, order: Order | str, source: np.ndarray | None = None,
                 decisions: dict[str, list[FilterDecision]] | None = None,
                 params: InloopParams | None = None):
    """Run the configured filters in order.

    Encoder: pass ``source`` and each filter picks per-superblock strengths
    minimising squared error against it.  Decoder: pass ``decisions``.
    Returns the filtered frame and the decisions per filter.
    """
    order = Order(order)
    params = params or InloopParams()
    out = np.asarray(frame, dtype=np.int64).copy()
    max_value = (1 << params.bit_depth) - 1
    all_dec: dict[str, list[FilterDecision]] = {}
    for kind in order.filters:
        out, dec = _run_filter(kind, out, source, None if decisions is None else decisions[kind],
                               params, max_value)
        all_dec[kind] = dec
    return out, all_dec


def code_decisions(io, kind: str, plane: int, decisions: list[FilterDecision] | None,
                   count: int) -> list[FilterDecision]:
    """Write or read a list of per-superblock decisions."""
    out = []
    for i in range(count):
        want = None if decisions is None else decisions[i].strength_index
        on = io.flag(("dering", kind, plane, "on"), None if want is None else int(want > 0))
        idx = 0
        if on:
            idx = 1 + io.sym(("dering", kind, plane, "s"), None if want is None else want - 1,
                             len(STRENGTHS) - 1)
        out.append(FilterDecision(idx))
    return out

