import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtk.entropy import MAX_ALPHABET, RateCounter, Reader, Writer
from dtk.pvq import (BandLayout, GainTheta, Householder, householder, k_from_band, pvq_count,
                     pvq_decode_band, pvq_encode_band, pvq_quantize_shape, quantize_band, synthesize, zigzag)


def codebook(n, k):
    """All integer vectors of dimension n with L1 norm k (brute force)."""
    return [v for v in itertools.product(range(-k, k + 1), repeat=n) if sum(map(abs, v)) == k]


def angle(x, y):
    y = np.asarray(y, dtype=float)
    c = float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y))
    return math.acos(max(-1.0, min(1.0, c)))


# --- layout ---------------------------------------------------------------------


@pytest.mark.parametrize("n", [4, 8, 16, 32])
def test_bands_cover_ac_exactly(n):
    idx = np.concatenate(BandLayout(n).bands())
    assert sorted(idx.tolist()) == list(range(1, n * n))
    assert sorted(zigzag(n).tolist()) == list(range(n * n))
    block = np.arange(n * n).reshape(n, n)
    assert np.array_equal(BandLayout(n).merge(0, BandLayout(n).split(block)), block * (block > 0))


# --- codebook size ---------------------------------------------------------------


def test_pvq_count_examples():
    assert pvq_count(2, 1) == 4
    assert pvq_count(3, 2) == 18
    assert all(pvq_count(n, 0) == 1 for n in range(1, 10))
    assert pvq_count(0, 3) == 0


def test_pvq_count_matches_enumeration():
    for n in range(1, 6):
        for k in range(0, 7):
            assert pvq_count(n, k) == len(codebook(n, k))


def test_pvq_count_big_integers():
    assert pvq_count(32, 40) == pvq_count(31, 40) + pvq_count(32, 39) + pvq_count(31, 39)
    assert pvq_count(32, 40) > 2**64


# --- shape search -------------------------------------------------------------------


def test_shape_examples():
    assert pvq_quantize_shape([1, 0, 0], 3).tolist() == [3, 0, 0]
    assert pvq_quantize_shape([1, 1], 2).tolist() == [1, 1]
    with pytest.raises(ValueError):
        pvq_quantize_shape([0, 0], 2)


def test_shape_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for n in range(1, 5):
        for k in range(1, 6):
            book = np.array(codebook(n, k), dtype=float)
            book_n = book / np.linalg.norm(book, axis=1, keepdims=True)
            for _ in range(200):
                x = rng.normal(size=n)
                best = math.acos(min(1.0, float(np.max(book_n @ x) / np.linalg.norm(x))))
                assert angle(x, pvq_quantize_shape(x, k)) <= best + 1e-9


def test_shape_escapes_single_pulse_local_optimum():
    # [2, 1, 1, 1] is a local optimum under single-pulse moves; the best needs two
    x = np.array([1.31279522, -0.31140776, 0.85825489, 0.33686863])
    assert np.abs(pvq_quantize_shape(x, 5)).tolist() == [3, 0, 2, 0]


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 24), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_shape_beats_random_codewords(n, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.laplace(size=n)
    got = angle(x, pvq_quantize_shape(x, k))
    for _ in range(50):
        v = rng.multinomial(k, rng.dirichlet(np.ones(n))) * np.sign(x)
        assert got <= angle(x, v) + 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40), st.integers(0, 60))
def test_shape_norm_and_signs(x, k):
    x = np.array(x)
    if not np.any(np.abs(x) > 1e-6):
        return
    v = pvq_quantize_shape(x, k)
    assert int(np.abs(v).sum()) == k
    nz = v != 0
    assert np.all(np.sign(v[nz]) == np.sign(x[nz]))


# --- Householder -------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 32), st.integers(0, 2**32 - 1))
def test_householder_involution_and_isometry(n, seed):
    rng = np.random.default_rng(seed)
    r, x, y = rng.normal(size=(3, n))
    h = householder(r)
    hr = h.apply(r)
    e = np.zeros(n)
    e[h.axis] = -h.sign * np.linalg.norm(r)
    assert np.allclose(hr, e, atol=1e-9)
    assert np.allclose(h.apply(h.apply(x)), x, atol=1e-12)
    assert angle(h.apply(x), hr) == pytest.approx(angle(x, r), abs=1e-9)
    assert float(h.apply(x) @ h.apply(y)) == pytest.approx(float(x @ y), abs=1e-9)


def test_householder_rejects_zero():
    with pytest.raises(ValueError):
        Householder.from_predictor(np.zeros(4))


# --- pulse allocation ----------------------------------------------------------------


@pytest.mark.parametrize("n", [15, 16, 32, 256])
def test_k_monotone_in_gain(n):
    assert k_from_band(n, 0) == 0
    ks = [k_from_band(n, g) for g in range(60)]
    assert ks == sorted(ks)
    for g in range(1, 30):
        kt = [k_from_band(n, g, t) for t in range(0, 8)]
        assert kt[0] == 0
        assert all(k <= k_from_band(n, g) for k in kt)


# --- band coding ------------------------------------------------------------------------


def _roundtrip(x, pred, q, lam=0.0):
    w = Writer()
    res = pvq_encode_band(w, "b", x, pred, q, lam, rate_io=lambda: RateCounter(w.ctx))
    out = pvq_decode_band(Reader(w.finish()), "b", len(x), pred, q)
    return res, out


def test_zero_band_codes_gain_only():
    res, out = _roundtrip(np.zeros(15), np.ones(15), 4.0)
    assert res.params == GainTheta(0) and res.pulses is None
    assert not np.any(out)


def test_band_equal_to_predictor():
    rng = np.random.default_rng(1)
    x = rng.normal(size=15) * 40
    q = 5.0
    res = quantize_band(x, x, q, use_ref=True)
    assert res.params.theta_index == 0 and res.pulses is None
    gain_err = abs(np.linalg.norm(x) - res.params.gain_index * q)
    assert np.linalg.norm(res.recon - x) == pytest.approx(gain_err, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([15, 16, 32, 48]), st.integers(0, 2**32 - 1), st.floats(0.5, 40),
       st.booleans())
def test_encoder_and_decoder_agree(n, seed, q, with_pred):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * rng.uniform(1, 200)
    pred = x + rng.normal(size=n) * 20 if with_pred else None
    res, out = _roundtrip(x, pred, q, lam=q * q * 0.1)
    assert np.array_equal(out, res.recon)
    if res.params.gain_index:
        assert np.linalg.norm(out) == pytest.approx(res.params.gain_index * q, rel=1e-9)


def test_mse_non_increasing_as_q_decreases():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.normal(size=32) * 50
        pred = x + rng.normal(size=32) * 30
        for use_ref in (False, True):
            mse = [quantize_band(x, pred, q, use_ref).sse for q in (64, 32, 16, 8, 4, 2, 1, 0.5)]
            assert all(b <= a + 1e-9 for a, b in zip(mse, mse[1:])), mse


def test_flipped_predictor_is_reflected():
    rng = np.random.default_rng(3)
    x = rng.normal(size=15) * 30
    res = quantize_band(x, -x, 2.0, use_ref=True)
    assert res.params.flip and res.params.theta_index == 0
    assert np.allclose(synthesize(res.params, res.pulses, 2.0, -x, 15), res.recon)


class AlphabetSpy(Writer):
    def __init__(self):
        super().__init__()
        self.largest = 0

    def sym(self, key, value, m):
        self.largest = max(self.largest, m)
        return super().sym(key, value, m)


def test_symbol_alphabets_bounded():
    rng = np.random.default_rng(5)
    w = AlphabetSpy()
    for _ in range(200):
        n = int(rng.choice([15, 16, 32, 64, 256]))
        x = rng.laplace(size=n) * rng.uniform(1, 500)
        pred = rng.normal(size=n) if rng.random() < 0.5 else None
        pvq_encode_band(w, ("b", n), x, pred, float(rng.uniform(0.5, 20)), 1.0)
    assert 0 < w.largest <= MAX_ALPHABET
