"""Bit-reservoir rate control.

Each frame type has its own rate model R = scale * Q**-alpha.  The measured
log-scale of every coded frame is smoothed by a second-order Bessel filter;
before each frame a plan over the remaining buffer interval picks the
finest quantizer whose predicted bits stay within the budget.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

QP_MIN, QP_MAX = 0, 254  # 0xFF marks rate-controlled frames in the header
Q0 = 0.25


class FrameType(enum.IntEnum):
    KEY = 0
    GOLDEN = 1
    P = 2
    B = 3


DEFAULT_ALPHA = {FrameType.KEY: 1.5, FrameType.GOLDEN: 1.0, FrameType.P: 1.0, FrameType.B: 1.0}


def quantizer(qp: float) -> float:
    """Linear quantizer for a (possibly fractional) quantization parameter."""
    return Q0 * 2.0 ** (qp / 6.0)


def scale_from_frame(bits: float, q: float, alpha: float) -> float:
    if bits <= 0 or q <= 0:
        raise ValueError("bits and quantizer must be positive")
    return bits * q ** alpha


def predict_bits(scale: float, q: float, alpha: float) -> float:
    return scale * q ** -alpha


# ---------------------------------------------------------------------------
# Second-order Bessel smoother


def bessel_coefficients(tau: float) -> tuple[float, float, float]:
    """Bilinear-transformed 3 / ((tau s)^2 + 3 tau s + 3) at one sample per frame.

    Returns (k, a1, a2) for y = k (x0 + 2 x1 + x2) - a1 y1 - a2 y2; the
    numerator is fixed so the DC gain is exactly one.
    """
    c = 2.0 * tau  # bilinear: s -> 2 (1 - z^-1) / (1 + z^-1), T = 1
    a0 = c * c + 3 * c + 3
    a1 = (6 - 2 * c * c) / a0
    a2 = (c * c - 3 * c + 3) / a0
    k = (1 + a1 + a2) / 4
    return k, a1, a2


def step_response(tau: float, n: int) -> np.ndarray:
    k, a1, a2 = bessel_coefficients(tau)
    x = [0.0, 0.0]
    y = [0.0, 0.0]
    out = np.empty(n)
    for i in range(n):
        yn = k * (1 + 2 * x[0] + x[1]) - a1 * y[0] - a2 * y[1]
        x = [1.0, x[0]]
        y = [yn, y[0]]
        out[i] = yn
    return out


def settling_time(tau: float, tol: float = 0.01) -> int:
    """Updates until the step response stays within tol of its final value."""
    n = int(20 * tau) + 50
    r = step_response(tau, n)  # r[i] follows update i + 1
    outside = np.flatnonzero(np.abs(r - 1.0) > tol)
    return 1 if outside.size == 0 else int(outside[-1]) + 2


def tau_for_settling(frames: float) -> float:
    """Time constant whose 1% settling time is ``frames`` updates (bisection)."""
    if frames < 2:
        raise ValueError("settling window must be at least two frames")
    # below tau = 1 the bilinear map rings at Nyquist, so settling is not monotone there
    lo, hi = 1.0, float(frames)
    if settling_time(lo) > frames:
        return lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if settling_time(mid) <= frames:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class BesselFilter2:
    """Direct-form-I second-order Bessel smoother with a start-up ramp.

    For the first ``ramp`` updates the time constant grows linearly from
    tau/8 to tau, so the first measurements are tracked quickly.
    """

    tau: float
    ramp: int = 0
    x: list = field(default_factory=lambda: [0.0, 0.0])
    y: list = field(default_factory=lambda: [0.0, 0.0])
    count: int = 0

    @property
    def seeded(self) -> bool:
        return self.count > 0

    @property
    def value(self) -> float:
        return self.y[0]

    def current_tau(self) -> float:
        if self.ramp <= 0 or self.count >= self.ramp:
            return self.tau
        frac = self.count / self.ramp
        return self.tau * (0.125 + 0.875 * frac)

    def seed(self, v: float) -> None:
        self.x = [v, v]
        self.y = [v, v]

    def update(self, v: float) -> float:
        if self.count == 0:
            self.seed(v)
            self.count = 1
            return v
        k, a1, a2 = bessel_coefficients(self.current_tau())
        yn = k * (v + 2 * self.x[0] + self.x[1]) - a1 * self.y[0] - a2 * self.y[1]
        self.x = [v, self.x[0]]
        self.y = [yn, self.y[0]]
        self.count += 1
        return yn


def bessel_update(filt: BesselFilter2, x: float) -> float:
    return filt.update(x)


# ---------------------------------------------------------------------------
# Frame labelling


@dataclass(frozen=True)
class GopPattern:
    """Frame types by position: keyframe every ``key_interval`` frames, a
    golden frame every ``golden_interval`` frames in between, P otherwise."""

    key_interval: int = 64
    golden_interval: int = 16

    def frame_type(self, i: int) -> FrameType:
        if self.key_interval > 0 and i % self.key_interval == 0:
            return FrameType.KEY
        if self.golden_interval > 0 and i % self.golden_interval == 0:
            return FrameType.GOLDEN
        return FrameType.P

    def types(self, start: int, n: int) -> list[FrameType]:
        return [self.frame_type(i) for i in range(start, start + n)]


# ---------------------------------------------------------------------------
# One-pass controller


@dataclass
class RcConfig:
    bits_per_frame: float
    buffer_frames: int = 24
    alpha: dict = field(default_factory=lambda: dict(DEFAULT_ALPHA))
    qp_offset: dict = field(default_factory=lambda: {t: 0 for t in FrameType})
    gop: GopPattern = field(default_factory=GopPattern)
    initial_qp: float = 60.0

    def __post_init__(self):
        if self.bits_per_frame <= 0:
            raise ValueError("target rate must be positive")
        if self.buffer_frames < 2:
            raise ValueError("buffer must hold at least two frames")
        self.alpha = {FrameType(k): float(v) for k, v in self.alpha.items()}
        if any(a <= 0 for a in self.alpha.values()):
            raise ValueError("alpha must be positive")


@dataclass
class RcPlan:
    start: int
    types: list[FrameType]
    target_bits: float

    @property
    def counts(self) -> dict[FrameType, int]:
        out = {t: 0 for t in FrameType}
        for t in self.types:
            out[t] += 1
        return out


@dataclass
class PlanResult:
    qp: int
    clamped: str | None = None  # "fine" or "coarse" when the target lies outside the range


def search_qp(total_bits: Callable[[float], float], target: float,
              qp_min: int = QP_MIN, qp_max: int = QP_MAX) -> PlanResult:
    """Smallest qp whose predicted bits fit the target (bits decrease with qp)."""
    if total_bits(qp_max) > target:
        return PlanResult(qp_max, "coarse")
    if total_bits(qp_min) <= target:
        return PlanResult(qp_min, "fine")
    lo, hi = qp_min, qp_max  # total(lo) > target >= total(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if total_bits(mid) <= target:
            hi = mid
        else:
            lo = mid
    return PlanResult(hi)


class RcModel:
    """Reservoir state plus one smoothed scale per frame type."""

    def __init__(self, cfg: RcConfig, n_frames: int | None = None):
        self.cfg = cfg
        self.n_frames = n_frames
        self.size = cfg.bits_per_frame * cfg.buffer_frames
        self.target_level = self.size / 2
        self.fullness = self.target_level
        self.tau = tau_for_settling(cfg.buffer_frames / 2)
        self.filters = {t: BesselFilter2(self.tau, ramp=cfg.buffer_frames) for t in FrameType}
        self.flags: list[tuple[int, str]] = []
        self.frame = 0
        q0 = quantizer(cfg.initial_qp)
        self._initial = {t: math.log(cfg.bits_per_frame * (4 if t == FrameType.KEY else 1)
                                     * q0 ** cfg.alpha[t]) for t in FrameType}

    def log_scale(self, t: FrameType) -> float:
        f = self.filters[t]
        return f.value if f.seeded else self._initial[t]

    def scale(self, t: FrameType) -> float:
        return math.exp(self.log_scale(t))

    def type_qp(self, qp: float, t: FrameType) -> float:
        return min(QP_MAX, max(QP_MIN, qp + self.cfg.qp_offset.get(t, 0)))

    def plan(self, start: int | None = None) -> RcPlan:
        start = self.frame if start is None else start
        n = self.cfg.buffer_frames
        if self.n_frames is not None:
            n = max(1, min(n, self.n_frames - start))
        types = self.cfg.gop.types(start, n)
        keys = [i for i, t in enumerate(types) if t == FrameType.KEY and i > 0]
        if keys:
            types = types[:keys[-1]]
        target = len(types) * self.cfg.bits_per_frame + self.fullness - self.target_level
        return RcPlan(start, types, target)

    def predicted_total(self, plan: RcPlan, qp: float) -> float:
        total = 0.0
        for t, n in plan.counts.items():
            if n:
                total += n * predict_bits(self.scale(t), quantizer(self.type_qp(qp, t)), self.cfg.alpha[t])
        return total

    def choose_qp(self) -> PlanResult:
        plan = self.plan()
        res = search_qp(lambda qp: self.predicted_total(plan, qp), plan.target_bits)
        if res.clamped == "coarse":
            self.flags.append((self.frame, "target-unreachable"))
        return res

    def frame_qp(self, qp: int, t: FrameType) -> int:
        return int(self.type_qp(qp, t))

    def post_frame(self, t: FrameType, bits: float, q: float) -> None:
        self.fullness += self.cfg.bits_per_frame - bits
        if self.fullness < 0:
            self.flags.append((self.frame, "underflow"))
            self.fullness = 0.0
        elif self.fullness > self.size:
            self.flags.append((self.frame, "overflow"))
            self.fullness = self.size
        if bits > 0:
            self.filters[t].update(math.log(scale_from_frame(bits, q, self.cfg.alpha[t])))
        self.frame += 1


def plan_quantizer(model: RcModel, plan: RcPlan) -> PlanResult:
    return search_qp(lambda qp: model.predicted_total(plan, qp), plan.target_bits)


def rc_post_frame(model: RcModel, t: FrameType, bits: float, q: float) -> RcModel:
    model.post_frame(t, bits, q)
    return model


# ---------------------------------------------------------------------------
# First-pass logs


LOG_MAGIC = b"DTKL"
LOG_VERSION = 1
_LOG_HEAD = struct.Struct("<4sBII")
_LOG_REC = struct.Struct("<BddQ")


class LogError(ValueError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    type: FrameType
    scale: float
    q: float
    bits: int


@dataclass
class TwoPassLog:
    start: int
    records: list[FrameRecord]

    def to_bytes(self) -> bytes:
        out = [_LOG_HEAD.pack(LOG_MAGIC, LOG_VERSION, self.start, len(self.records))]
        out += [_LOG_REC.pack(int(r.type), r.scale, r.q, r.bits) for r in self.records]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TwoPassLog":
        if len(data) < _LOG_HEAD.size:
            raise LogError("log file too short")
        magic, version, start, count = _LOG_HEAD.unpack_from(data)
        if magic != LOG_MAGIC:
            raise LogError("not a first-pass log")
        if version != LOG_VERSION:
            raise LogError(f"unsupported log version {version}")
        if len(data) != _LOG_HEAD.size + count * _LOG_REC.size:
            raise LogError("log length does not match its record count")
        recs = []
        for i in range(count):
            t, s, q, b = _LOG_REC.unpack_from(data, _LOG_HEAD.size + i * _LOG_REC.size)
            recs.append(FrameRecord(FrameType(t), s, q, b))
        return cls(start, recs)


def chunk_merge(logs: Sequence[TwoPassLog]) -> TwoPassLog:
    if not logs:
        raise LogError("no chunk logs to merge")
    recs: list[FrameRecord] = []
    expect = logs[0].start
    for log in logs:
        if log.start < expect:
            raise LogError(f"chunk starting at frame {log.start} overlaps the previous chunk")
        if log.start > expect:
            raise LogError(f"gap before chunk starting at frame {log.start}")
        recs.extend(log.records)
        expect = log.start + len(log.records)
    return TwoPassLog(logs[0].start, recs)


class TwoPassController:
    """Second-pass quantizer choice from measured first-pass scales.

    The plan sums the per-frame predictions directly; a running mean of the
    last 16 prediction errors is added once per planned frame. Over the last
    few frames of the log one shared qp cannot land on the budget, so each of
    those frames gets its own qp from a small exhaustive search.
    """

    OFFSET_WINDOW = 16
    ENDGAME_FRAMES = 3
    ENDGAME_SPAN = 3

    def __init__(self, cfg: RcConfig, log: TwoPassLog):
        self.cfg = cfg
        self.log = log
        self.model = RcModel(cfg, n_frames=log.start + len(log.records))
        self.model.frame = log.start
        self.errors: list[float] = []
        self._last_pred = 0.0

    def _record(self, i: int) -> FrameRecord:
        j = i - self.log.start
        if not 0 <= j < len(self.log.records):
            raise LogError(f"frame {i} not covered by the first-pass log")
        return self.log.records[j]

    def predicted_total(self, plan: RcPlan, qp: float) -> float:
        total = 0.0
        for i in range(plan.start, plan.start + len(plan.types)):
            r = self._record(i)
            a = self.cfg.alpha[r.type]
            total += predict_bits(r.scale, quantizer(self.model.type_qp(qp, r.type)), a)
        return total + self.offset() * len(plan.types)

    def offset(self) -> float:
        if not self.errors:
            return 0.0
        w = self.errors[-self.OFFSET_WINDOW:]
        return sum(w) / len(w)

    def choose_qp(self) -> PlanResult:
        i = self.model.frame
        rec = self._record(i)
        plan = self.model.plan()
        if plan.types and plan.types[0] != rec.type:
            raise LogError(f"frame {i}: log type {rec.type.name} does not match the pattern")
        res = search_qp(lambda qp: self.predicted_total(plan, qp), plan.target_bits)
        if res.clamped is None and self._remaining() <= self.ENDGAME_FRAMES:
            res = PlanResult(self._endgame_qp(plan, res.qp))
        q = quantizer(self.model.type_qp(res.qp, rec.type))
        self._last_pred = predict_bits(rec.scale, q, self.cfg.alpha[rec.type])
        if res.clamped == "coarse":
            self.model.flags.append((i, "target-unreachable"))
        return res

    def _remaining(self) -> int:
        return self.log.start + len(self.log.records) - self.model.frame

    def _endgame_qp(self, plan: RcPlan, qp: int) -> int:
        """qp for the current frame from the per-frame assignment closest to the budget."""
        target = plan.target_bits - self.offset() * len(plan.types)
        choices = range(max(QP_MIN, qp - self.ENDGAME_SPAN), min(QP_MAX, qp + self.ENDGAME_SPAN) + 1)
        preds = []
        for i in range(plan.start, plan.start + len(plan.types)):
            r = self._record(i)
            preds.append({c: predict_bits(r.scale, quantizer(self.model.type_qp(c, r.type)),
                                          self.cfg.alpha[r.type]) for c in choices})
        best = min(itertools.product(choices, repeat=len(preds)),
                   key=lambda cs: (abs(sum(p[c] for p, c in zip(preds, cs)) - target), cs))
        return best[0]

    def post_frame(self, t: FrameType, bits: float, q: float) -> None:
        self.errors.append(bits - self._last_pred)
        self.model.post_frame(t, bits, q)


def twopass_plan(ctrl: TwoPassController) -> PlanResult:
    return ctrl.choose_qp()


# ---------------------------------------------------------------------------
# Synthetic encoder and simulations


@dataclass(frozen=True)
class SyntheticEncoder:
    """Deterministic stand-in for a video encoder.

    Frame i of type t costs scale_t * c(i) * Q**-alpha_t * noise(i) bits,
    where c(i) is a slow complexity drift and noise(i) a seeded per-frame
    factor; both depend only on (seed, i).
    """

    scales: dict = field(default_factory=lambda: {FrameType.KEY: 2.0e6, FrameType.GOLDEN: 4.0e5,
                                                  FrameType.P: 2.0e5, FrameType.B: 1.0e5})
    alpha: dict = field(default_factory=lambda: dict(DEFAULT_ALPHA))
    drift: float = 0.3
    noise: float = 0.1
    seed: int = 0

    def complexity(self, i: int) -> float:
        if self.drift == 0:
            return 1.0
        return math.exp(self.drift * (math.sin(2 * math.pi * i / 300.0) + 0.5 * math.sin(2 * math.pi * i / 77.0)))

    def _noise(self, i: int) -> float:
        if self.noise == 0:
            return 1.0
        h = hashlib.blake2b(struct.pack("<qq", self.seed, i), digest_size=8).digest()
        u = (int.from_bytes(h, "little") + 0.5) / 2 ** 64
        return math.exp(self.noise * math.sqrt(3) * (2 * u - 1))

    def encode(self, i: int, t: FrameType, q: float) -> int:
        bits = self.scales[t] * self.complexity(i) * q ** -self.alpha[t] * self._noise(i)
        return max(1, int(round(bits)))


@dataclass
class SimResult:
    qps: list[int]
    bits: list[int]
    target_total: float
    flags: list

    @property
    def total(self) -> int:
        return int(sum(self.bits))

    @property
    def rate_error(self) -> float:
        return self.total / self.target_total - 1.0


def first_pass(enc: SyntheticEncoder, gop: GopPattern, start: int, n: int,
               qp: int = 60) -> TwoPassLog:
    """Fixed-quantizer first pass; any chunk of it can run independently."""
    q = quantizer(qp)
    recs = []
    for i in range(start, start + n):
        t = gop.frame_type(i)
        bits = enc.encode(i, t, q)
        recs.append(FrameRecord(t, scale_from_frame(bits, q, enc.alpha[t]), q, bits))
    return TwoPassLog(start, recs)


def simulate_one_pass(enc: SyntheticEncoder, cfg: RcConfig, n: int) -> SimResult:
    model = RcModel(cfg, n_frames=n)
    qps, bits = [], []
    for i in range(n):
        t = cfg.gop.frame_type(i)
        qp = model.frame_qp(model.choose_qp().qp, t)
        q = quantizer(qp)
        b = enc.encode(i, t, q)
        model.post_frame(t, b, q)
        qps.append(qp)
        bits.append(b)
    return SimResult(qps, bits, n * cfg.bits_per_frame, model.flags)


def simulate_two_pass(enc: SyntheticEncoder, cfg: RcConfig, log: TwoPassLog) -> SimResult:
    ctrl = TwoPassController(cfg, log)
    qps, bits = [], []
    for rec in log.records:
        i = ctrl.model.frame
        qp = ctrl.model.frame_qp(ctrl.choose_qp().qp, rec.type)
        q = quantizer(qp)
        b = enc.encode(i, rec.type, q)
        ctrl.post_frame(rec.type, b, q)
        qps.append(qp)
        bits.append(b)
    return SimResult(qps, bits, len(log.records) * cfg.bits_per_frame, ctrl.model.flags)
