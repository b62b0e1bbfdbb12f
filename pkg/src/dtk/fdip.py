"""Frequency-domain intra prediction (4x4) trained offline.

A spatial predictor E maps the context pixels (the up, left and up-left 4x4
neighbours) to a 4x4 block.  Its frequency-domain equivalent is
F = T_out E T_ctx^-1, which maps context coefficients straight to block
coefficients.  Training alternates SATD classification of corpus blocks
among ten modes with per-mode least-squares fits; sparsification then
zeroes entries of F until each output uses at most ``budget`` inputs.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .transforms import DEFAULT_LAPPING, dct_matrix

N = 4
NPIX = N * N
NCTX = 3 * NPIX  # up, left, up-left blocks, each in raster order
N_MODES = 10
MODE_NAMES = ("DC", "TM", "VE", "HE", "LD", "RD", "VR", "VL", "HD", "HU")


# ---------------------------------------------------------------------------
# Spatial modes


def _context_index():
    up = lambda r, c: r * N + c  # noqa: E731
    left = lambda r, c: NPIX + r * N + c  # noqa: E731
    upleft = lambda r, c: 2 * NPIX + r * N + c  # noqa: E731
    above = [up(N - 1, c) for c in range(N)]
    above += [above[-1]] * 4  # above-right is outside the context: replicate
    lcol = [left(r, N - 1) for r in range(N)]
    corner = upleft(N - 1, N - 1)
    return above, lcol, corner


def vp8_modes() -> np.ndarray:
    """The ten 4x4 directional modes as linear maps (10, 16, 48), no rounding."""
    A, L, P = _context_index()
    E = [L[3], L[2], L[1], L[0], P, A[0], A[1], A[2], A[3]]
    modes = np.zeros((N_MODES, NPIX, NCTX))

    def put(m, r, c, taps):
        row = modes[m, r * N + c]
        total = sum(w for _, w in taps)
        for idx, w in taps:
            row[idx] += w / total

    def avg2(a, b):
        return [(a, 1), (b, 1)]

    def avg3(a, b, c):
        return [(a, 1), (b, 2), (c, 1)]

    for r in range(N):
        for c in range(N):
            put(0, r, c, [(i, 1) for i in A[:4] + L])
            modes[1, r * N + c, L[r]] += 1
            modes[1, r * N + c, A[c]] += 1
            modes[1, r * N + c, P] -= 1
            put(2, r, c, avg3(P if c == 0 else A[c - 1], A[c], A[c + 1]))
            hl = [P] + L + [L[3]]
            put(3, r, c, avg3(hl[r], hl[r + 1], hl[r + 2]))
            k = r + c
            put(4, r, c, [(A[6], 1), (A[7], 3)] if k == 6 else avg3(A[k], A[k + 1], A[k + 2]))
            j = c - r + 3
            put(5, r, c, avg3(E[j], E[j + 1], E[j + 2]))
    vr = {
        (3, 0): avg3(E[1], E[2], E[3]), (2, 0): avg3(E[2], E[3], E[4]),
        (3, 1): avg3(E[3], E[4], E[5]), (1, 0): avg3(E[3], E[4], E[5]),
        (2, 1): avg2(E[4], E[5]), (0, 0): avg2(E[4], E[5]),
        (3, 2): avg3(E[4], E[5], E[6]), (1, 1): avg3(E[4], E[5], E[6]),
        (2, 2): avg2(E[5], E[6]), (0, 1): avg2(E[5], E[6]),
        (3, 3): avg3(E[5], E[6], E[7]), (1, 2): avg3(E[5], E[6], E[7]),
        (2, 3): avg2(E[6], E[7]), (0, 2): avg2(E[6], E[7]),
        (1, 3): avg3(E[6], E[7], E[8]), (0, 3): avg2(E[7], E[8]),
    }
    vl = {
        (0, 0): avg2(A[0], A[1]), (1, 0): avg3(A[0], A[1], A[2]),
        (2, 0): avg2(A[1], A[2]), (0, 1): avg2(A[1], A[2]),
        (1, 1): avg3(A[1], A[2], A[3]), (3, 0): avg3(A[1], A[2], A[3]),
        (2, 1): avg2(A[2], A[3]), (0, 2): avg2(A[2], A[3]),
        (3, 1): avg3(A[2], A[3], A[4]), (1, 2): avg3(A[2], A[3], A[4]),
        (2, 2): avg2(A[3], A[4]), (0, 3): avg2(A[3], A[4]),
        (3, 2): avg3(A[3], A[4], A[5]), (1, 3): avg3(A[3], A[4], A[5]),
        (2, 3): avg3(A[4], A[5], A[6]), (3, 3): avg3(A[5], A[6], A[7]),
    }
    hd = {
        (3, 0): avg2(E[0], E[1]), (3, 1): avg3(E[0], E[1], E[2]),
        (2, 0): avg2(E[1], E[2]), (3, 2): avg2(E[1], E[2]),
        (2, 1): avg3(E[1], E[2], E[3]), (3, 3): avg3(E[1], E[2], E[3]),
        (2, 2): avg2(E[2], E[3]), (1, 0): avg2(E[2], E[3]),
        (2, 3): avg3(E[2], E[3], E[4]), (1, 1): avg3(E[2], E[3], E[4]),
        (1, 2): avg2(E[3], E[4]), (0, 0): avg2(E[3], E[4]),
        (1, 3): avg3(E[3], E[4], E[5]), (0, 1): avg3(E[3], E[4], E[5]),
        (0, 2): avg3(E[4], E[5], E[6]), (0, 3): avg3(E[5], E[6], E[7]),
    }
    hu = {
        (0, 0): avg2(L[0], L[1]), (0, 1): avg3(L[0], L[1], L[2]),
        (0, 2): avg2(L[1], L[2]), (1, 0): avg2(L[1], L[2]),
        (0, 3): avg3(L[1], L[2], L[3]), (1, 1): avg3(L[1], L[2], L[3]),
        (1, 2): avg2(L[2], L[3]), (2, 0): avg2(L[2], L[3]),
        (1, 3): [(L[2], 1), (L[3], 3)], (2, 1): [(L[2], 1), (L[3], 3)],
    }
    for (r, c) in [(2, 2), (2, 3), (3, 0), (3, 1), (3, 2), (3, 3)]:
        hu[(r, c)] = [(L[3], 1)]
    for m, table in ((6, vr), (7, vl), (8, hd), (9, hu)):
        for (r, c), taps in table.items():
            put(m, r, c, taps)
    return modes


# ---------------------------------------------------------------------------
# Transforms and the frequency-domain equivalent


def block_transform(n: int = N) -> np.ndarray:
    """Separable 2D orthonormal DCT as an (n*n, n*n) matrix on raster vectors."""
    d = dct_matrix(n)
    return np.kron(d, d)


def context_transform(t: np.ndarray) -> np.ndarray:
    z = np.zeros((NCTX, NCTX))
    for k in range(3):
        z[k * NPIX:(k + 1) * NPIX, k * NPIX:(k + 1) * NPIX] = t
    return z


def derive_f(E: np.ndarray, transform: np.ndarray | str = "dct") -> np.ndarray:
    """F = T E T_ctx^-1 so that F (T_ctx x) == T (E x) for every context x."""
    t = block_transform() if isinstance(transform, str) and transform == "dct" else np.asarray(transform, float)
    if t.shape != (NPIX, NPIX):
        raise ValueError("transform must act on 4x4 blocks")
    if np.linalg.cond(t) > 1e12:
        raise ValueError("singular transform")
    tc = context_transform(t)
    return t @ E @ np.linalg.inv(tc)


# ---------------------------------------------------------------------------
# Corpus


@dataclass
class TrainingCorpus:
    """Coefficient data of all interior 4x4 blocks.

    y: (n, 16) target block coefficients; ctx: (n, 48) context coefficients;
    modes: (n,) current assignment.
    """

    y: np.ndarray
    ctx: np.ndarray
    modes: np.ndarray = None
    transform: str = "dct"

    def __post_init__(self):
        if self.modes is None:
            self.modes = np.zeros(len(self.y), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)


def lap_grid4(img: np.ndarray) -> np.ndarray:
    """Pre-filter every interior 4x4 grid edge (rows first, then columns)."""
    x = np.array(img, dtype=np.int64)
    f = DEFAULT_LAPPING
    h, w = x.shape
    for pos in range(N, h - N + 1, N):
        rows = f.pre(x[pos - 2], x[pos - 1], x[pos], x[pos + 1])
        x[pos - 2:pos + 2] = np.stack(rows)
    for pos in range(N, w - N + 1, N):
        cols = f.pre(x[:, pos - 2], x[:, pos - 1], x[:, pos], x[:, pos + 1])
        x[:, pos - 2:pos + 2] = np.stack(cols, axis=1)
    return x


def image_blocks(img: np.ndarray, transform: str = "dct") -> tuple[np.ndarray, np.ndarray]:
    """(y, ctx) for every block that has all three neighbours and is not on the
    image border; samples are centred on zero before transforming."""
    a = np.asarray(img, dtype=np.float64)
    h, w = (a.shape[0] // N) * N, (a.shape[1] // N) * N
    a = a[:h, :w] - 128.0
    if transform == "lt":
        a = lap_grid4(np.round(a * 16)).astype(np.float64) / 16
    elif transform != "dct":
        raise ValueError(f"unknown transform {transform!r}")
    br, bc = h // N, w // N
    if br < 3 or bc < 3:
        return np.zeros((0, NPIX)), np.zeros((0, NCTX))
    blocks = a.reshape(br, N, bc, N).transpose(0, 2, 1, 3).reshape(br, bc, NPIX)
    coeffs = blocks @ block_transform().T
    # interior blocks only: skip the first and last block row/column
    cur = coeffs[1:-1, 1:-1]
    up = coeffs[:-2, 1:-1]
    left = coeffs[1:-1, :-2]
    ul = coeffs[:-2, :-2]
    y = cur.reshape(-1, NPIX)
    ctx = np.concatenate([up, left, ul], axis=-1).reshape(-1, NCTX)
    return y, ctx


def build_corpus(images: Sequence[np.ndarray], transform: str = "dct") -> TrainingCorpus:
    ys, cs = zip(*(image_blocks(im, transform) for im in images))
    return TrainingCorpus(np.concatenate(ys), np.concatenate(cs), transform=transform)


# ---------------------------------------------------------------------------
# Classification and training


def satd(corpus: TrainingCorpus, Fs: np.ndarray) -> np.ndarray:
    """(n, modes) sum of absolute transform-domain residuals."""
    out = np.empty((len(corpus), len(Fs)))
    for m, F in enumerate(Fs):
        out[:, m] = np.abs(corpus.y - corpus.ctx @ F.T).sum(axis=1)
    return out


def sse(corpus: TrainingCorpus, Fs: np.ndarray) -> np.ndarray:
    out = np.empty((len(corpus), len(Fs)))
    for m, F in enumerate(Fs):
        r = corpus.y - corpus.ctx @ F.T
        out[:, m] = np.einsum("ij,ij->i", r, r)
    return out


def classify(corpus: TrainingCorpus, Fs: np.ndarray, metric: str = "satd") -> np.ndarray:
    """argmin-cost mode per block; ties resolve to the lowest index.

    Costs within float round-off of the minimum count as ties, so a flat
    block, which every mode predicts exactly, lands on DC.
    """
    cost = satd(corpus, Fs) if metric == "satd" else sse(corpus, Fs)
    best = cost.min(axis=1, keepdims=True)
    tol = 1e-9 * (1.0 + np.abs(corpus.y).sum(axis=1, keepdims=True))
    return np.argmax(cost <= best + tol, axis=1)


@dataclass
class FitInfo:
    n_blocks: int
    ridge: bool = False
    underdetermined: bool = False


def _solve_rows(X: np.ndarray, Y: np.ndarray, mask: np.ndarray | None) -> tuple[np.ndarray, FitInfo]:
    n, p = X.shape
    info = FitInfo(n)
    F = np.zeros((Y.shape[1], p))
    if n == 0:
        return F, info
    if n < p:
        info.underdetermined = True
    G = X.T @ X
    B = X.T @ Y
    lam = 1e-6 * np.trace(G) / p
    for i in range(Y.shape[1]):
        act = np.arange(p) if mask is None else np.flatnonzero(mask[i])
        if act.size == 0:
            continue
        if n < act.size:
            F[i, act] = np.linalg.lstsq(X[:, act], Y[:, i], rcond=None)[0]
            continue
        g = G[np.ix_(act, act)]
        if n < 10 * act.size or np.linalg.cond(g) > 1e12:
            info.ridge = True
            g = g + lam * np.eye(act.size)
        F[i, act] = np.linalg.solve(g, B[act, i])
    return F, info


def train_mode(y: np.ndarray, ctx: np.ndarray, mask: np.ndarray | None = None):
    """Least-squares F for one mode; returns (F, per-coefficient residual energy, info)."""
    F, info = _solve_rows(np.asarray(ctx, float), np.asarray(y, float), mask)
    r = y - ctx @ F.T
    return F, (r * r).sum(axis=0), info


def train_all(corpus: TrainingCorpus, masks: np.ndarray | None = None,
              previous: np.ndarray | None = None) -> np.ndarray:
    Fs = np.zeros((N_MODES, NPIX, NCTX)) if previous is None else previous.copy()
    for m in range(N_MODES):
        sel = corpus.modes == m
        if not sel.any():
            continue  # an empty mode keeps its previous predictor
        Fs[m], _, _ = train_mode(corpus.y[sel], corpus.ctx[sel], None if masks is None else masks[m])
    return Fs


# ---------------------------------------------------------------------------
# Gains


@dataclass(frozen=True)
class GainReport:
    coding_gain: float
    prediction_gain: float

    @property
    def total(self) -> float:
        return self.coding_gain + self.prediction_gain


def coding_gain(variances) -> float:
    v = np.asarray(variances, dtype=np.float64)
    keep = v > 0
    if not keep.all():
        warnings.warn("zero-variance coefficients excluded from the coding gain")
        v = v[keep]
    return float(10 * np.log10(v.mean() / np.exp(np.mean(np.log(v)))))


def ar1_covariance(n: int, rho: float) -> np.ndarray:
    i = np.arange(n)
    return rho ** np.abs(i[:, None] - i[None, :])


def ar1_dct_coding_gain(n: int = 8, rho: float = 0.95) -> float:
    d = dct_matrix(n)
    return coding_gain(np.diag(d @ ar1_covariance(n, rho) @ d.T))


def _geomean_log(v: np.ndarray) -> float:
    v = np.asarray(v, dtype=np.float64)
    keep = v > 0
    if not keep.all():
        warnings.warn("zero-variance coefficients excluded from the prediction gain")
    return float(np.mean(np.log(v[keep])))


def residual_energy(corpus: TrainingCorpus, Fs: np.ndarray, modes: np.ndarray | None = None) -> np.ndarray:
    modes = corpus.modes if modes is None else modes
    res = np.zeros(NPIX)
    for m in range(len(Fs)):
        sel = modes == m
        if sel.any():
            r = corpus.y[sel] - corpus.ctx[sel] @ Fs[m].T
            res += (r * r).sum(axis=0)
    return res / max(1, len(corpus))


def prediction_gain(corpus: TrainingCorpus, Fs: np.ndarray, modes: np.ndarray | None = None) -> float:
    inp = (corpus.y ** 2).mean(axis=0)
    res = residual_energy(corpus, Fs, modes)
    return float(10 / math.log(10) * (_geomean_log(inp) - _geomean_log(res)))


def gains(corpus: TrainingCorpus, Fs: np.ndarray | None) -> GainReport:
    cg = coding_gain((corpus.y ** 2).mean(axis=0))
    pg = 0.0 if Fs is None else prediction_gain(corpus, Fs)
    return GainReport(cg, pg)


# ---------------------------------------------------------------------------
# Training loop and sparsification


@dataclass
class TrainResult:
    Fs: np.ndarray
    masks: np.ndarray
    history: list[dict] = field(default_factory=list)

    @property
    def nonzeros(self) -> np.ndarray:
        return self.masks.reshape(N_MODES, -1).sum(axis=1)


def initial_predictors(transform: str = "dct") -> np.ndarray:
    return np.stack([derive_f(E, "dct") for E in vp8_modes()])


def train(corpus: TrainingCorpus, iters: int = 30, metric: str = "satd",
          Fs: np.ndarray | None = None) -> TrainResult:
    """Alternate classification and dense least-squares fits."""
    Fs = initial_predictors(corpus.transform) if Fs is None else Fs
    hist = []
    for it in range(iters):
        corpus.modes = classify(corpus, Fs, metric)
        Fs = train_all(corpus, previous=Fs)
        hist.append({"iter": it, "nonzeros": N_MODES * NPIX * NCTX,
                     "prediction_gain": prediction_gain(corpus, Fs)})
    return TrainResult(Fs, np.ones(Fs.shape, dtype=bool), hist)


def _drop_candidates(corpus: TrainingCorpus, Fs, masks, strategy: str, budget: int):
    """Score every removable entry; lower scores are dropped first."""
    total_res = residual_energy(corpus, Fs) * max(1, len(corpus))
    cands = []
    for m in range(N_MODES):
        sel = corpus.modes == m
        X = corpus.ctx[sel]
        G = X.T @ X if strategy == "gain_impact" else None
        for i in range(NPIX):
            act = np.flatnonzero(masks[m, i])
            if act.size <= budget:
                continue
            w = Fs[m, i, act]
            if strategy == "magnitude":
                score = np.abs(w)
            else:
                g = G[np.ix_(act, act)]
                g = g + 1e-9 * (np.trace(g) / act.size + 1) * np.eye(act.size)
                ginv_diag = np.diag(np.linalg.inv(g))
                delta = w * w / ginv_diag  # extra residual energy if the entry is refitted away
                score = np.log1p(delta / max(total_res[i], 1e-300))
            for c, s in zip(act, score):
                cands.append((float(s), m, i, int(c)))
    return cands


def sparsify(corpus: TrainingCorpus, Fs: np.ndarray, budget: int = 4,
             strategy: str = "gain_impact", fraction: float = 0.1,
             metric: str = "satd", max_rounds: int = 10_000) -> TrainResult:
    """Zero entries round by round, retraining and reclassifying in between."""
    if strategy not in ("magnitude", "gain_impact"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if budget < 0:
        raise ValueError("budget must be non-negative")
    masks = np.ones(Fs.shape, dtype=bool)
    Fs = Fs.copy()
    hist = []
    for rnd in range(max_rounds):
        excess = np.maximum(masks.sum(axis=2) - budget, 0)
        total_excess = int(excess.sum())
        if total_excess == 0:
            break
        cands = sorted(_drop_candidates(corpus, Fs, masks, strategy, budget))
        n_drop = max(1, int(math.ceil(fraction * total_excess)))
        row_left = excess.copy()
        dropped = 0
        for _, m, i, c in cands:
            if dropped >= n_drop:
                break
            if row_left[m, i] > 0:
                masks[m, i, c] = False
                row_left[m, i] -= 1
                dropped += 1
        Fs = train_all(corpus, masks, previous=Fs * masks)
        corpus.modes = classify(corpus, Fs, metric)
        Fs = train_all(corpus, masks, previous=Fs)
        hist.append({"iter": rnd, "nonzeros": int(masks.sum()),
                     "prediction_gain": prediction_gain(corpus, Fs)})
    return TrainResult(Fs * masks, masks, hist)


# ---------------------------------------------------------------------------
# Predictor files

PRED_MAGIC = b"DTKF"
PRED_VERSION = 1
_PRED_HEAD = struct.Struct("<4sBBHH")


def save_predictors(Fs: np.ndarray, masks: np.ndarray) -> bytes:
    m, rows, cols = Fs.shape
    out = [_PRED_HEAD.pack(PRED_MAGIC, PRED_VERSION, m, rows, cols)]
    for k in range(m):
        out.append(np.ascontiguousarray(Fs[k], dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(masks[k], dtype=np.uint8).tobytes())
    return b"".join(out)


def load_predictors(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < _PRED_HEAD.size:
        raise ValueError("predictor file too short")
    magic, version, m, rows, cols = _PRED_HEAD.unpack_from(data)
    if magic != PRED_MAGIC:
        raise ValueError("not a predictor file")
    if version != PRED_VERSION:
        raise ValueError(f"unsupported predictor file version {version}")
    per = rows * cols * 9
    if len(data) != _PRED_HEAD.size + m * per:
        raise ValueError("predictor file length mismatch")
    Fs = np.empty((m, rows, cols))
    masks = np.empty((m, rows, cols), dtype=bool)
    pos = _PRED_HEAD.size
    for k in range(m):
        Fs[k] = np.frombuffer(data, "<f8", rows * cols, pos).reshape(rows, cols)
        pos += rows * cols * 8
        masks[k] = np.frombuffer(data, np.uint8, rows * cols, pos).reshape(rows, cols).astype(bool)
        pos += rows * cols
    return Fs, masks
