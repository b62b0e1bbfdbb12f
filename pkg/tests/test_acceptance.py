"""Acceptance suite: one test per criterion, each with its runtime limit.

A summary line per criterion is printed at the end of the pytest run.
"""

import itertools
import math
import time

import numpy as np
import pytest
from corpus import corpus_images

from dtk import fdip
from dtk.codec import DERING_MODES, EncoderConfig, decode_frame, encode_frame, psnr_planes, rd_lambda, rdo_partition, tree_cost
from dtk.dering import (BLOCK, STRENGTHS, clpf_region, dd_filter_region, find_direction, frame_directions)
from dtk.entropy import (PROB_TOTAL, Cdf15, FreqCtx, RangeDecoder, RangeEncoder, cdf_adapt_dyadic,
                         empirical_entropy_bits)
from dtk.pvq import pvq_count, pvq_quantize_shape
from dtk.ratecontrol import (RcConfig, SyntheticEncoder, bessel_coefficients, chunk_merge, first_pass,
                             simulate_one_pass, simulate_two_pass, step_response, tau_for_settling)
from dtk.transforms import (SB_SIZE, PartitionTree, apply_lapping, count_trees, enumerate_trees, fdct_float,
                            idct_float, iwht2x2, wht2x2, wht2x2_real)


class Clock:
    def __init__(self, limit):
        self.limit = limit
        self.start = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.start
        assert elapsed < self.limit, f"took {elapsed:.1f} s, limit {self.limit} s"


# --- 1 ---------------------------------------------------------------------------------


class Counted:
    """Integer that tallies the arithmetic applied to it."""

    ops = {"add/sub": 0, "shift": 0, "other": 0}

    def __init__(self, v):
        self.v = v

    def _bin(self, other, kind, fn):
        Counted.ops[kind] += 1
        return Counted(fn(self.v, other.v if isinstance(other, Counted) else other))

    def __add__(self, o):
        return self._bin(o, "add/sub", lambda a, b: a + b)

    def __sub__(self, o):
        return self._bin(o, "add/sub", lambda a, b: a - b)

    def __rshift__(self, o):
        return self._bin(o, "shift", lambda a, b: a >> b)

    def __mul__(self, o):
        return self._bin(o, "other", lambda a, b: a * b)

    __radd__ = __add__
    __rmul__ = __mul__


@pytest.mark.criterion(1, "WHT exactness, +-1 of the real transform, 7 add/sub + 1 shift")
def test_criterion_1_wht():
    clock = Clock(10)
    v = np.array(list(itertools.product(range(-4, 5), repeat=4))).T
    rng = np.random.default_rng(1)
    v = np.concatenate([v, rng.integers(-2**15, 2**15, (4, 10**6))], axis=1)
    out = np.array(wht2x2(*v))
    assert np.array_equal(np.array(iwht2x2(*out)), v)
    assert np.abs(out - np.array(wht2x2_real(*v))).max() <= 1
    for fn in (wht2x2, iwht2x2):
        Counted.ops = {"add/sub": 0, "shift": 0, "other": 0}
        fn(*map(Counted, (3, -1, 4, 1)))
        assert Counted.ops == {"add/sub": 7, "shift": 1, "other": 0}
    clock.check()


# --- 2 ---------------------------------------------------------------------------------


@pytest.mark.criterion(2, "lapping pre/post bit-exact on 500 random (plane, tree) pairs, DC preserved")
def test_criterion_2_lapping():
    clock = Clock(30)
    rng = np.random.default_rng(2)
    for _ in range(500):
        rows, cols = rng.integers(1, 4, 2)
        plane = rng.integers(-4096, 4096, (rows * SB_SIZE, cols * SB_SIZE))
        trees = [[PartitionTree.random(SB_SIZE, rng) for _ in range(cols)] for _ in range(rows)]
        assert np.array_equal(apply_lapping(apply_lapping(plane, trees, "pre"), trees, "post"), plane)
        const = np.full(plane.shape, int(rng.integers(-4096, 4096)))
        assert np.array_equal(apply_lapping(const, trees, "pre"), const)
    clock.check()


# --- 3 ---------------------------------------------------------------------------------


@pytest.mark.criterion(3, "RDO partition equals exhaustive search over the 17 trees of a 16x16 region")
def test_criterion_3_rdo():
    clock = Clock(300)
    assert count_trees(16) == 17 and count_trees(32) == 83522
    trees = list(enumerate_trees(16))
    assert len(trees) == 17
    rng = np.random.default_rng(3)
    for n in range(50):
        kind = n % 3
        if kind == 0:
            block = rng.integers(-2048, 2048, (16, 16))
        elif kind == 1:
            block = np.cumsum(np.cumsum(rng.integers(-40, 41, (16, 16)), 0), 1)
        else:
            block = np.kron(rng.integers(-1500, 1500, (4, 4)), np.ones((4, 4), dtype=np.int64))
        q = float(rng.choice([4.0, 16.0, 64.0, 256.0]))
        lam = rd_lambda(q)
        _, cost = rdo_partition(block, q, lam)
        best = min(tree_cost(block, t, q, lam) for t in trees)
        assert cost == pytest.approx(best, rel=1e-12, abs=1e-9)
    clock.check()


# --- 4 ---------------------------------------------------------------------------------


@pytest.mark.criterion(4, "entropy coder overhead, dyadic update invariants and worked examples")
def test_criterion_4_entropy():
    clock = Clock(60)
    rng = np.random.default_rng(4)
    # q15 path, static model whose probabilities are exact in 15 bits
    widths = [16384, 8192, 4096, 2048, 1024, 512, 512]
    cdf = Cdf15(np.cumsum(widths).tolist())
    p = np.array(widths) / PROB_TOTAL
    syms = rng.choice(len(widths), size=10**6, p=p)
    enc = RangeEncoder()
    for s in syms.tolist():
        cdf.encode(enc, s)
    data = enc.finish()
    ideal = float(-np.log2(p[syms]).sum())
    assert 8 * len(data) <= ideal * 1.0001 + 64
    dec = RangeDecoder(data)
    assert all(cdf.decode(dec) == s for s in syms[:20000].tolist())
    # adaptive frequency-count path
    syms = rng.choice(4, size=10**6, p=[0.7, 0.2, 0.08, 0.02]).tolist()
    enc, ctx = RangeEncoder(), FreqCtx(4)
    for s in syms:
        ctx.encode(enc, s)
    overhead = 8 * len(enc.finish()) / empirical_entropy_bits(syms) - 1
    assert 0.0 <= overhead <= 0.02
    # dyadic update rule: total preserved and gaps >= 1 over 1e5 random triples
    for _ in range(10**5):
        m = int(rng.integers(2, 17))
        f = np.sort(rng.choice(np.arange(1, PROB_TOTAL), m - 1, replace=False))
        f = np.append(f, PROB_TOTAL)
        out = cdf_adapt_dyadic(f, int(rng.integers(m)), int(rng.integers(1, 8)))
        assert out[-1] == PROB_TOTAL
        assert out[0] >= 1 and np.all(np.diff(out) >= 1)
    assert cdf_adapt_dyadic(np.array([4, 8, 12, 16]), 0, 2).tolist() == [7, 10, 13, 16]
    assert cdf_adapt_dyadic(np.array([4, 8, 12, 16]), 3, 2).tolist() == [3, 6, 9, 16]
    clock.check()


# --- 5 ---------------------------------------------------------------------------------


@pytest.mark.criterion(5, "PVQ shape search matches the exhaustive codebook; pvq_count matches enumeration")
def test_criterion_5_pvq():
    clock = Clock(120)
    rng = np.random.default_rng(5)
    for n in range(1, 6):
        for k in range(0, 7):
            book = [v for v in itertools.product(range(-k, k + 1), repeat=n) if sum(map(abs, v)) == k]
            assert pvq_count(n, k) == len(book)
            if n > 4 or k == 0 or k > 5:
                continue
            book = np.array(book, dtype=float)
            unit = book / np.linalg.norm(book, axis=1, keepdims=True)
            for _ in range(200):
                x = rng.normal(size=n)
                xn = x / np.linalg.norm(x)
                best = math.acos(min(1.0, float(np.max(unit @ xn))))
                y = pvq_quantize_shape(x, k).astype(float)
                got = math.acos(min(1.0, float(xn @ y / np.linalg.norm(y))))
                assert int(np.abs(y).sum()) == k
                assert got <= best + 1e-9
    clock.check()


# --- 6 ---------------------------------------------------------------------------------


@pytest.mark.criterion(6, "checkerboard: Haar DC + AC copy at <= 70% of the bits with both off")
def test_criterion_6_checkerboard():
    clock = Clock(60)
    i, j = np.mgrid[0:512, 0:512]
    img = [np.where((i // 64 + j // 64) % 2, 200, 50).astype(np.int64)]
    on = encode_frame(img, EncoderConfig(qp=30, haar_dc=True, ac_copy=True)).bits
    off = encode_frame(img, EncoderConfig(qp=30, haar_dc=False, ac_copy=False)).bits
    print(f"checkerboard bits: tools on {on}, off {off}, ratio {on / off:.3f}")
    assert on <= 0.7 * off
    clock.check()


# --- 7 ---------------------------------------------------------------------------------


@pytest.mark.criterion(7, "FDIP identity, planted recovery, gain-impact vs magnitude, AR(1) coding gain")
def test_criterion_7_fdip():
    clock = Clock(900)
    rng = np.random.default_rng(7)
    t = fdip.block_transform()
    tc = fdip.context_transform(t)
    for _ in range(20):
        E = rng.normal(size=(fdip.NPIX, fdip.NCTX))
        x = rng.normal(size=(fdip.NCTX, 100)) * 100
        assert np.abs(fdip.derive_f(E) @ (tc @ x) - t @ (E @ x)).max() <= 1e-9
    F0 = rng.normal(size=(fdip.NPIX, fdip.NCTX)) * 0.2
    ctx = rng.normal(size=(20000, fdip.NCTX)) * 30
    noise = 1e-2
    F, _, _ = fdip.train_mode(ctx @ F0.T + rng.normal(size=(20000, fdip.NPIX)) * noise, ctx)
    # least-squares error per coefficient is about noise / (30 * sqrt(N))
    assert np.abs(F - F0).max() <= 100 * noise / (30 * math.sqrt(20000))
    corpus = fdip.build_corpus(corpus_images())
    dense = fdip.train(corpus, iters=30)
    dense_modes = corpus.modes.copy()
    pg = {}
    for strategy in ("magnitude", "gain_impact"):
        corpus.modes = dense_modes.copy()
        res = fdip.sparsify(corpus, dense.Fs, budget=4, strategy=strategy)
        assert res.masks.sum(axis=2).max() <= 4
        pg[strategy] = fdip.prediction_gain(corpus, res.Fs)
    print(f"P_g dense {dense.history[-1]['prediction_gain']:.4f} dB, "
          f"magnitude {pg['magnitude']:.4f} dB, gain_impact {pg['gain_impact']:.4f} dB")
    assert pg["gain_impact"] >= pg["magnitude"] - 0.05
    assert fdip.ar1_dct_coding_gain(8, 0.95) == pytest.approx(8.83, abs=0.1)
    clock.check()


# --- 8 ---------------------------------------------------------------------------------


@pytest.mark.criterion(8, "rate control: one-pass +-2%, two-pass +-0.5%, chunked == monolithic, Bessel step")
def test_criterion_8_ratecontrol():
    clock = Clock(60)
    enc = SyntheticEncoder(seed=8)
    cfg = RcConfig(8000.0, buffer_frames=24)
    one = simulate_one_pass(enc, cfg, 1000)
    log = first_pass(enc, cfg.gop, 0, 1000)
    two = simulate_two_pass(enc, cfg, log)
    print(f"rate error: one-pass {100 * one.rate_error:+.3f}%, two-pass {100 * two.rate_error:+.3f}%")
    assert abs(one.rate_error) <= 0.02
    assert abs(two.rate_error) <= 0.005 and abs(two.rate_error) <= abs(one.rate_error)
    chunks = chunk_merge([first_pass(enc, cfg.gop, 200 * c, 200) for c in range(5)])
    assert chunks.to_bytes() == log.to_bytes()
    assert simulate_two_pass(enc, cfg, chunks).qps == two.qps
    for buffer_frames in (24, 64):
        tau = tau_for_settling(buffer_frames / 2)
        k, a1, a2 = bessel_coefficients(tau)
        assert 4 * k / (1 + a1 + a2) == pytest.approx(1.0, abs=1e-12)
        r = step_response(tau, 20 * buffer_frames)
        assert r[-1] == pytest.approx(1.0, abs=1e-9)
        assert r.max() <= 1.05
        assert np.all(np.abs(r[buffer_frames // 2 - 1:] - 1) <= 0.01)
    clock.check()


# --- 9 ---------------------------------------------------------------------------------


def _brute_direction(block):
    keys = [lambda i, j: i, lambda i, j: i + j // 2, lambda i, j: i + j, lambda i, j: i // 2 + j,
            lambda i, j: j, lambda i, j: j - i // 2, lambda i, j: j - i, lambda i, j: i - j // 2]
    errs = []
    for key in keys:
        lines = {}
        for i in range(BLOCK):
            for j in range(BLOCK):
                lines.setdefault(key(i, j), []).append(float(block[i, j]))
        errs.append(sum(sum((v - np.mean(g)) ** 2 for v in g) for g in lines.values()))
    best = min(errs)
    return next(d for d, e in enumerate(errs) if e <= best + 1e-6)


@pytest.mark.criterion(9, "dering: no-op on constants, direction == brute force, DD reduces ringing MSE")
def test_criterion_9_dering():
    clock = Clock(60)
    rng = np.random.default_rng(9)
    for c in (0, 17, 255, 1023):
        flat = np.full((24, 24), c)
        dirs = rng.integers(0, 8, (3, 3))
        for s in STRENGTHS + (8,):
            assert np.array_equal(dd_filter_region(flat, dirs, s), flat)
            assert np.array_equal(clpf_region(flat, s), flat)
    for _ in range(500):
        block = rng.integers(0, 256, (BLOCK, BLOCK))
        assert find_direction(block) == _brute_direction(block)
    # ringing testbench: step edges through coarse 8x8 DCT quantization
    i, j = np.mgrid[0:64, 0:64]
    clean = np.where(3 * j + i > 109, 200, 50).astype(np.int64)
    rung = np.zeros_like(clean)
    for r in range(0, 64, 8):
        for c in range(0, 64, 8):
            coef = fdct_float(clean[r:r + 8, c:c + 8] - 128.0)
            rung[r:r + 8, c:c + 8] = np.round(idct_float(np.round(coef / 40) * 40)) + 128
    rung = np.clip(rung, 0, 255)
    before = np.mean((rung - clean) ** 2.0)
    after = np.mean((dd_filter_region(rung, frame_directions(rung), 2) - clean) ** 2.0)
    print(f"ringing MSE: unfiltered {before:.3f}, DD {after:.3f}")
    assert after < before
    clock.check()


# --- 10 --------------------------------------------------------------------------------


def _e2e_images():
    import skimage.data
    from skimage.color import rgb2ycbcr

    def ycc(name, r, c, h, w):
        im = rgb2ycbcr(getattr(skimage.data, name)()[..., :3])[r:r + h, c:c + w]
        # 4:2:0 by 2x2 averaging, odd sizes padded by edge replication
        pad = np.pad(im, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
        sub = pad.reshape(pad.shape[0] // 2, 2, pad.shape[1] // 2, 2, 3).mean(axis=(1, 3))
        return [np.round(im[..., 0]).astype(np.int64)] + [np.round(sub[..., i]).astype(np.int64) for i in (1, 2)]

    gray = corpus_images()
    imgs = [
        ycc("astronaut", 100, 200, 16, 16),
        ycc("astronaut", 40, 300, 24, 24),
        ycc("chelsea", 80, 120, 32, 32),
        ycc("coffee", 150, 200, 20, 36),
        ycc("rocket", 200, 320, 17, 29),
        ycc("chelsea", 150, 250, 16, 40),
        ycc("coffee", 60, 300, 28, 20),
        ycc("rocket", 320, 160, 24, 16),
        [gray[0][50:82, 60:92]],
        [gray[18][10:28, 30:48]],
    ]
    return imgs


@pytest.mark.criterion(10, "end-to-end bit-exact decode over the 80-config tool matrix, PSNR monotone in qp")
def test_criterion_10_end_to_end():
    clock = Clock(600)
    qps = (10, 30, 50, 70)
    configs = list(itertools.product([False, True], [False, True], [False, True], [False, True], DERING_MODES))
    assert len(configs) == 80
    for img in _e2e_images():
        for lapping, ac_copy, cfl, haar, dering in configs:
            cfg = dict(lapping=lapping, ac_copy=ac_copy, cfl=cfl, haar_dc=haar, dering=dering)
            quality = []
            for qp in qps:
                res = encode_frame(img, EncoderConfig(qp=qp, **cfg))
                planes, _, _ = decode_frame(res.data)
                assert all(np.array_equal(a, b) for a, b in zip(planes, res.recon)), (cfg, qp)
                quality.append(psnr_planes(img, planes))
            assert all(b <= a for a, b in zip(quality, quality[1:])), (cfg, quality)
    clock.check()
