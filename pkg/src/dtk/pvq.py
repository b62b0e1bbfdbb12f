"""Gain-shape vector quantization of coefficient bands.

A band x is coded as a gain (its L2 norm, uniformly quantized) and a unit
shape.  Without a predictor the shape is the nearest pulse vector of L1 norm
k on the pyramid.  With a predictor r, a Householder reflection moves r onto
a coordinate axis; the angle theta between x and r is quantized, and only the
components orthogonal to that axis are coded as pulses.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .entropy import ESCAPE, StreamError

HALF_PI = math.pi / 2


# ---------------------------------------------------------------------------
# Band layout


@functools.lru_cache(maxsize=None)
def zigzag(n: int) -> np.ndarray:
    """Flat raster indices of an n x n block in zig-zag scan order."""
    order = sorted(((i + j, i if (i + j) % 2 else j, i, j) for i in range(n) for j in range(n)))
    out = np.array([i * n + j for _, _, i, j in order], dtype=np.intp)
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=None)
def band_ranges(n: int) -> tuple[tuple[int, int], ...]:
    """Zig-zag index ranges [start, stop) covering the AC coefficients."""
    if n == 4:
        return ((1, 16),)
    if n == 8:
        return ((1, 16), (16, 32), (32, 64))
    if n in (16, 32):
        lo = (n // 2) ** 2
        step = (n * n - lo) // 3
        return band_ranges(n // 2) + tuple((lo + i * step, lo + (i + 1) * step) for i in range(3))
    raise ValueError(f"no band layout for size {n}")


@dataclass(frozen=True)
class BandLayout:
    size: int

    @property
    def ranges(self) -> tuple[tuple[int, int], ...]:
        return band_ranges(self.size)

    def bands(self) -> list[np.ndarray]:
        """Raster indices of each band."""
        zz = zigzag(self.size)
        return [zz[a:b] for a, b in self.ranges]

    def split(self, block: np.ndarray) -> list[np.ndarray]:
        flat = np.asarray(block).reshape(-1)
        return [flat[idx] for idx in self.bands()]

    def merge(self, dc, bands) -> np.ndarray:
        out = np.zeros(self.size * self.size, dtype=np.result_type(*bands, np.asarray(dc)))
        out[0] = dc
        for idx, vals in zip(self.bands(), bands):
            out[idx] = vals
        return out.reshape(self.size, self.size)


# ---------------------------------------------------------------------------
# Pyramid codebook


@functools.lru_cache(maxsize=None)
def pvq_count(n: int, k: int) -> int:
    """Number of integer vectors of dimension n with L1 norm k."""
    if n < 0 or k < 0:
        raise ValueError("n and k must be non-negative")
    if k == 0:
        return 1
    if n == 0:
        return 0
    # iterate over n to keep the recursion shallow for large k
    prev = [1] + [0] * k  # V(0, .)
    for _ in range(n):
        cur = [1] * (k + 1)
        for j in range(1, k + 1):
            cur[j] = prev[j] + cur[j - 1] + prev[j - 1]
        prev = cur
    return prev[k]


def pvq_quantize_shape(x, k: int) -> np.ndarray:
    """Pulse vector of L1 norm k whose direction best matches x.

    Starts from a floor projection onto the pyramid and adds the remaining
    pulses greedily. That start point then bounds a sweep that finds the
    global optimum.
    """
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    l1 = ax.sum()
    if not np.isfinite(l1) or l1 <= 0:
        raise ValueError("cannot quantize the shape of a zero vector")
    if k < 0:
        raise ValueError("k must be non-negative")
    n = ax.size
    y = np.zeros(n, dtype=np.int64)
    if k == 0:
        return y
    if k > 1:
        y = np.floor(ax * ((k - 1) / l1)).astype(np.int64)
    xy = float(ax @ y)
    yy = float(y @ y)
    for _ in range(k - int(y.sum())):
        # maximise (xy + ax_i)^2 / (yy + 2 y_i + 1) over i
        num = (xy + ax) ** 2
        den = yy + 2 * y + 1
        i = int(np.argmax(num / den))
        xy += ax[i]
        yy += 2 * y[i] + 1
        y[i] += 1
    y = _sweep_family(ax, y, k)
    return np.where(x < 0, -y, y)


def _family_member(a: np.ndarray, lam: float, k: int) -> np.ndarray:
    """Maximiser of a.y - lam*|y|^2 over non-negative integer y with sum k.

    The objective is separable and concave, so y takes the k largest
    marginal gains a_i - lam*(2j - 1) over all pulses j on every axis i.
    """
    # flooring the continuous solution leaves fewer than n pulses to place
    t = _water_level(a, lam, k)
    y = np.maximum(0, np.floor((a - t) / (2 * lam) + 0.5)).astype(np.int64)
    while y.sum() > k:  # float round-off on a breakpoint
        y[int(np.argmin(np.where(y > 0, a - lam * (2 * y - 1), np.inf)))] -= 1
    d = k - int(y.sum())
    while d > 0:
        gain = a - lam * (2 * y + 1)
        top = np.argpartition(-gain, d - 1)[:d] if d < a.size else np.arange(a.size)
        # a batch is safe when no second pulse on any axis could outrank it
        if d <= a.size and gain[top].min() >= gain.max() - 2 * lam:
            y[top] += 1
            break
        y[int(np.argmax(gain))] += 1
        d -= 1
    return y


def _water_level(a: np.ndarray, lam: float, m: float) -> float:
    """Threshold t with sum(max(0, (a - t) / (2 lam) + 1/2)) == m."""
    srt = -np.sort(-a)
    bp = srt + lam  # axis j joins once t drops below its breakpoint
    head = np.concatenate(([0.0], np.cumsum(srt)))
    j = np.arange(srt.size)
    # relaxed count at each breakpoint, from the axes strictly above it
    at_bp = (head[:-1] - j * bp) / (2 * lam) + j / 2
    act = int(np.count_nonzero(at_bp < m))  # non-decreasing, so a prefix
    t = (head[act] + act * lam - 2 * lam * m) / act
    upper = bp[act - 1]
    lower = bp[act] if act < srt.size else -np.inf
    return float(min(upper, max(lower, t)))


def _sweep_family(a: np.ndarray, y0: np.ndarray, k: int) -> np.ndarray:
    """Best correlation over the family of _family_member, given a start y0.

    The optimum y* maximises a.y - lam*|y|^2 at lam = a.y*/(2|y*|^2), so it
    belongs to the family. Each step of the walk moves one pulse, changing
    lam monotonically. Optimality at lam gives N' <= N + lam*(D' - D) for
    every later member, which stops the walk once no member can win; the
    angle of y0 bounds |y*| and so the range of D.
    """
    n = a.size
    if k < 2 or n < 2:
        return y0
    a = a / math.sqrt(float(a @ a))
    best_y, best = y0, float(a @ y0) / math.sqrt(float(y0 @ y0))
    # |u|_1 = 1.u / 1 over the cap of unit u within the angle of y0 around a
    theta0 = math.acos(min(1.0, best))
    phi = math.acos(min(1.0, float(a.sum()) / math.sqrt(n)))
    l1_lo = max(1.0, math.sqrt(n) * math.cos(min(math.pi, phi + theta0)))
    l1_hi = math.sqrt(n) * math.cos(max(0.0, phi - theta0))
    d_range = ((k / l1_hi) ** 2 * (1 - 1e-9), (k / l1_lo) ** 2 * (1 + 1e-9))
    lam0 = float(a @ y0) / (2 * float(y0 @ y0))
    start = _family_member(a, lam0, k)
    for up in (True, False):
        y, lam = start.copy(), lam0
        xy, yy = float(a @ y), float(y @ y)
        while True:
            if xy / math.sqrt(yy) > best * (1 + 1e-12):
                best_y, best = y.copy(), xy / math.sqrt(yy)
            d_end = d_range[0] if up else d_range[1]
            if (up and yy <= d_end) or (not up and yy >= d_end):
                break
            bound = (xy + lam * (d_end - yy)) / math.sqrt(d_end)
            if bound <= best * (1 + 1e-12) and xy / math.sqrt(yy) <= best * (1 + 1e-12):
                break
            # within a pulse count only the extreme amplitudes can cross first
            order = np.lexsort((a, y))
            ys = y[order]
            cut = np.flatnonzero(ys[1:] != ys[:-1]) + 1
            lo_idx = order[np.concatenate(([0], cut))]
            hi_idx = order[np.concatenate((cut - 1, [n - 1]))]
            lv = y[lo_idx]
            if up:
                # out-line of l overtakes the last in-line of i, y_i >= y_l + 2
                gap = lv[:, None] - lv[None, :] - 1
                cross = np.full(gap.shape, np.inf)
                np.divide(a[lo_idx][:, None] - a[hi_idx][None, :], 2 * gap, out=cross, where=gap >= 1)
                idx = int(cross.argmin())
            else:
                # out-line of l overtakes the last in-line of i, y_l >= y_i >= 1
                gap = lv[None, :] - lv[:, None] + 1
                cross = np.full(gap.shape, -np.inf)
                np.divide(a[hi_idx][None, :] - a[lo_idx][:, None], 2 * gap, out=cross,
                          where=(gap >= 1) & (lv[:, None] >= 1))
                # same level: the pair must be two different axes
                same = np.arange(lv.size)
                cross[same, same] = np.where((lo_idx != hi_idx) & (lv >= 1), (a[hi_idx] - a[lo_idx]) / 2.0, -np.inf)
                idx = int(cross.argmax())
            r_, c_ = np.unravel_index(idx, cross.shape)
            c = float(cross[r_, c_])
            if not np.isfinite(c):
                break
            lam = max(lam, c) if up else max(0.0, min(lam, c))
            i, l = int(lo_idx[r_]), int(hi_idx[c_])
            xy += a[l] - a[i]
            yy += 2 * (y[l] - y[i] + 1)
            y[i] -= 1
            y[l] += 1
    return best_y


# ---------------------------------------------------------------------------
# Householder reflection


@dataclass(frozen=True)
class Householder:
    """Reflection taking the predictor r onto -s*|r|*e_m, s = sign(r_m)."""

    v: np.ndarray
    axis: int
    sign: int

    @classmethod
    def from_predictor(cls, r) -> "Householder":
        r = np.asarray(r, dtype=np.float64)
        norm = float(np.linalg.norm(r))
        if norm <= 0:
            raise ValueError("zero predictor has no reflection")
        m = int(np.argmax(np.abs(r)))
        s = 1 if r[m] >= 0 else -1
        v = r.copy()
        v[m] += s * norm
        return cls(v, m, s)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x - (2 * float(self.v @ x) / float(self.v @ self.v)) * self.v


def householder(pred) -> Householder:
    return Householder.from_predictor(pred)


# ---------------------------------------------------------------------------
# Parameter rules shared by encoder and decoder


def theta_steps(gain_index: int) -> int:
    """Quantization steps over [0, pi/2]: about one per unit of arc length."""
    return max(4, math.ceil(HALF_PI * gain_index))


def k_from_band(n: int, gain_index: int, theta_index: int | None = None) -> int:
    """Pulse count for a band of dimension n.

    Without a predictor the whole n-dimensional shape is coded; with one, the
    coded part lives in n - 1 dimensions and its radius shrinks to g*sin(theta).
    """
    if gain_index <= 0:
        return 0
    if theta_index is None:
        return max(1, int(math.floor(0.5 + (gain_index - 0.2) * math.sqrt((n + 3) / 2))))
    if theta_index <= 0:
        return 0
    theta = theta_index * HALF_PI / theta_steps(gain_index)
    r = gain_index * math.sin(theta)
    return max(1, int(math.floor(0.5 + (r - 0.2) * math.sqrt((n + 2) / 2))))


@dataclass(frozen=True)
class GainTheta:
    gain_index: int
    theta_index: int | None = None  # None when the band is coded without reference
    noref: bool = True
    flip: bool = False  # predictor sign inverted


def synthesize(params: GainTheta, pulses: np.ndarray | None, q: float,
               pred: np.ndarray | None, n: int) -> np.ndarray:
    """Reconstruct a band from its coded parameters (float, unrounded)."""
    g = params.gain_index
    out = np.zeros(n)
    if g == 0:
        return out
    gain = g * q
    if params.noref:
        y = np.asarray(pulses, dtype=np.float64)
        return gain * y / np.linalg.norm(y)
    r = -np.asarray(pred, dtype=np.float64) if params.flip else np.asarray(pred, dtype=np.float64)
    h = Householder.from_predictor(r)
    theta = params.theta_index * HALF_PI / theta_steps(g)
    z = np.zeros(n)
    if pulses is not None and np.any(pulses):
        y = np.asarray(pulses, dtype=np.float64)
        z[np.arange(n) != h.axis] = gain * math.sin(theta) * y / np.linalg.norm(y)
    z[h.axis] = -h.sign * gain * math.cos(theta)
    return h.apply(z)


# ---------------------------------------------------------------------------
# Band coding


def _code_pulses(io, key, pulses, k: int, n: int) -> np.ndarray:
    """Sequential magnitudes with the remaining pulse count as context."""
    out = np.zeros(n, dtype=np.int64)
    rem = k
    for i in range(n):
        if rem == 0:
            break
        if i == n - 1:
            mag = rem
        else:
            m = min(rem, ESCAPE) + 1
            want = None if pulses is None else abs(int(pulses[i]))
            mag = io.sym((key, "p", min(rem, ESCAPE)), None if want is None else min(want, ESCAPE), m)
            if mag == ESCAPE and rem > ESCAPE:
                mag += io.exp_golomb(None if want is None else want - ESCAPE)
            if mag > rem:
                raise StreamError("pulse count exceeds remaining budget")
        if mag:
            neg = io.bits(None if pulses is None else int(pulses[i] < 0), 1)
            out[i] = -mag if neg else mag
        rem -= mag
    return out


def code_band(io, key, params: GainTheta | None, pulses, n: int, has_pred: bool):
    """Write (params given) or read (params None) one band's symbols."""
    reading = params is None
    g = io.uint((key, "g"), None if reading else params.gain_index)
    if g == 0:
        return GainTheta(0), None
    noref = True
    flip = False
    t = None
    if has_pred:
        noref = bool(io.flag((key, "noref"), None if reading else int(params.noref)))
        if not noref:
            flip = bool(io.bits(None if reading else int(params.flip), 1))
            t = io.uint((key, "t"), None if reading else params.theta_index)
            if t > theta_steps(g):
                raise StreamError("theta index out of range")
    p = GainTheta(g, t, noref, flip)
    k = k_from_band(n, g, t)
    dim = n if noref else n - 1
    coded = _code_pulses(io, (key, min(dim, 32)), None if reading else pulses, k, dim) if k else None
    return p, coded


def _pulses_for(params: GainTheta, x: np.ndarray, pred, n: int):
    """Encoder-side shape search for fixed gain/theta parameters."""
    k = k_from_band(n, params.gain_index, params.theta_index)
    if k == 0:
        return None
    if params.noref:
        return pvq_quantize_shape(x, k)
    r = -pred if params.flip else pred
    z = Householder.from_predictor(r).apply(x)
    w = np.delete(z, Householder.from_predictor(r).axis)
    if not np.any(np.abs(w) > 1e-12):
        w = np.zeros(n - 1)
        w[0] = 1.0
    return pvq_quantize_shape(w, k)


@dataclass
class BandResult:
    params: GainTheta
    pulses: np.ndarray | None
    recon: np.ndarray
    sse: float
    rate: float = 0.0


def quantize_band(x, pred, q: float, use_ref: bool) -> BandResult:
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    norm = float(np.linalg.norm(x))
    g = int(math.floor(norm / q + 0.5))
    if g == 0:
        params = GainTheta(0)
        recon = np.zeros(n)
        return BandResult(params, None, recon, float(x @ x))
    if use_ref:
        p = np.asarray(pred, dtype=np.float64)
        corr = float(x @ p)
        flip = corr < 0
        cos_t = min(1.0, abs(corr) / (norm * float(np.linalg.norm(p))))
        theta = math.acos(cos_t)
        steps = theta_steps(g)
        t = int(math.floor(theta / HALF_PI * steps + 0.5))
        params = GainTheta(g, t, False, flip)
    else:
        params = GainTheta(g)
    pulses = _pulses_for(params, x, pred, n)
    recon = synthesize(params, pulses, q, pred, n)
    d = x - recon
    return BandResult(params, pulses, recon, float(d @ d))


def pvq_encode_band(io, key, x, pred, q: float, lam: float, rate_io=None) -> BandResult:
    """Choose reference or no-reference coding by RD cost, then write it.

    ``rate_io`` supplies a fresh rate counter over the same contexts; without
    one the noref decision falls back to distortion alone.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    has_pred = pred is not None and bool(np.any(pred))
    cands = [quantize_band(x, pred, q, False)]
    if has_pred and cands[0].params.gain_index > 0:
        cands.append(quantize_band(x, pred, q, True))
    if len(cands) > 1:
        for c in cands:
            if rate_io is not None:
                rc = rate_io()
                code_band(rc, key, c.params, c.pulses, n, has_pred)
                c.rate = rc.total
        best = min(cands, key=lambda c: c.sse + lam * c.rate)
    else:
        best = cands[0]
    code_band(io, key, best.params, best.pulses, n, has_pred)
    return best


def pvq_decode_band(io, key, n: int, pred, q: float) -> np.ndarray:
    has_pred = pred is not None and bool(np.any(pred))
    params, pulses = code_band(io, key, None, None, n, has_pred)
    if params.gain_index and params.noref and pulses is None:
        raise StreamError("band with gain but no pulses")
    return synthesize(params, pulses, q, None if params.noref else pred, n)
