import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtk.codec import (DERING_MODES, BitstreamHeader, DecodeError, EncoderConfig, MalformedStreamError,
                       Tools, TruncatedPayloadError, VersionError, chroma_shape, decode_frame, decode_stream,
                       encode_frame, encode_sequence, psnr, psnr_planes, rd_lambda, rdo_partition,
                       render_dc_basis, tree_cost)
from dtk.entropy import ContextSet
from dtk.ratecontrol import TwoPassLog
from dtk.transforms import SB_SIZE, PartitionTree, enumerate_trees


def make_image(w=40, h=24, seed=0, chroma=True):
    rng = np.random.default_rng(seed)
    i, j = np.mgrid[0:h, 0:w]
    y = np.clip(80 + 2 * j + 40 * np.sin(i / 3) + rng.normal(0, 6, (h, w)), 0, 255).astype(np.int64)
    if not chroma:
        return [y]
    ch, cw = chroma_shape(w, h)
    u = np.clip(128 + y[::2, ::2][:ch, :cw] // 4 - 30, 0, 255)
    v = rng.integers(100, 160, (ch, cw))
    return [y, u, v]


# --- RDO ---------------------------------------------------------------------------


def test_rdo_matches_exhaustive_search_16():
    rng = np.random.default_rng(0)
    trees = list(enumerate_trees(16))
    assert len(trees) == 17
    for n in range(8):
        block = rng.integers(-2000, 2000, (16, 16)) if n % 2 else \
            np.cumsum(rng.integers(-60, 60, (16, 16)), axis=1) * 16
        q = float(rng.choice([8.0, 32.0, 128.0]))
        ctx = ContextSet()
        tree, cost = rdo_partition(block, q, rd_lambda(q), ctx)
        costs = [tree_cost(block, t, q, rd_lambda(q), ctx) for t in trees]
        assert cost == pytest.approx(min(costs), rel=1e-12)
        assert tree_cost(block, tree, q, rd_lambda(q), ctx) == pytest.approx(cost, rel=1e-12)


def test_rdo_without_lapping_matches_too():
    block = np.random.default_rng(1).integers(-500, 500, (16, 16))
    tree, cost = rdo_partition(block, 16.0, rd_lambda(16.0), lapping=False)
    best = min(tree_cost(block, t, 16.0, rd_lambda(16.0), lapping=False) for t in enumerate_trees(16))
    assert cost == pytest.approx(best, rel=1e-12)


# --- round trip --------------------------------------------------------------------


@pytest.mark.parametrize("bit_depth", [8, 10])
def test_zero_signal_is_a_fixed_point(bit_depth):
    # samples are centred, so the all-zero internal signal is mid-grey
    mid = 1 << (bit_depth - 1)
    planes = [np.full((20, 36), mid), np.full((10, 18), mid), np.full((10, 18), mid)]
    for qp in range(0, 255, 7):
        res = encode_frame(planes, EncoderConfig(qp=qp), bit_depth=bit_depth)
        decoded, _, _ = decode_frame(res.data)
        assert all(np.all(p == mid) for p in decoded)


def test_black_image_decodes_to_black():
    for qp in range(0, 49, 4):
        res = encode_frame([np.zeros((20, 36), dtype=np.int64)], EncoderConfig(qp=qp))
        planes, _, _ = decode_frame(res.data)
        assert not np.any(planes[0])


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(16, 48), st.integers(16, 48), st.integers(0, 80),
       st.booleans(), st.booleans(), st.booleans(), st.booleans(), st.sampled_from(DERING_MODES),
       st.booleans())
def test_decoder_matches_encoder(seed, w, h, qp, lapping, ac_copy, cfl, haar, dering, chroma):
    cfg = EncoderConfig(qp=qp, lapping=lapping, ac_copy=ac_copy, cfl=cfl, haar_dc=haar, dering=dering)
    res = encode_frame(make_image(w, h, seed, chroma), cfg)
    planes, head, end = decode_frame(res.data)
    assert end == len(res.data)
    assert (head.width, head.height, head.qp) == (w, h, qp)
    assert all(np.array_equal(a, b) for a, b in zip(planes, res.recon))


def test_ten_bit_roundtrip():
    img8 = make_image(32, 32, 5)
    img = [p * 4 + 2 for p in img8]
    res = encode_frame(img, EncoderConfig(qp=40), bit_depth=10)
    planes, head, _ = decode_frame(res.data)
    assert head.bit_depth == 10
    assert all(np.array_equal(a, b) for a, b in zip(planes, res.recon))
    # the quantizer scales with bit depth, so quality matches the 8-bit encode
    ref = psnr_planes(img8, encode_frame(img8, EncoderConfig(qp=40)).recon)
    assert psnr_planes(img, planes, 10) == pytest.approx(ref, abs=1.0)


def test_psnr_non_increasing_in_qp():
    img = make_image(48, 32, 2)
    values = [psnr_planes(img, encode_frame(img, EncoderConfig(qp=qp)).recon) for qp in range(0, 121, 12)]
    assert all(b <= a + 1e-9 for a, b in zip(values, values[1:])), values


def test_lapping_reduces_blockiness():
    i, j = np.mgrid[0:64, 0:64]
    img = [np.clip(30 + 1.6 * j + 1.1 * i + 8 * np.sin(i / 11.0), 0, 255).astype(np.int64)]

    def blockiness(cfg):
        res = encode_frame(img, cfg)
        rec = res.recon[0].astype(float)
        edges = []
        for r, row in enumerate(res.trees):
            for c, t in enumerate(row):
                for x, y, s in t.leaves(c * SB_SIZE, r * SB_SIZE):
                    if x > 0:
                        edges.append(np.abs(rec[y:y + s, x - 2] - 2 * rec[y:y + s, x - 1] + rec[y:y + s, x]))
                        edges.append(np.abs(rec[y:y + s, x - 1] - 2 * rec[y:y + s, x] + rec[y:y + s, x + 1]))
                    if y > 0:
                        edges.append(np.abs(rec[y - 2, x:x + s] - 2 * rec[y - 1, x:x + s] + rec[y, x:x + s]))
                        edges.append(np.abs(rec[y - 1, x:x + s] - 2 * rec[y, x:x + s] + rec[y + 1, x:x + s]))
        return float(np.mean(np.concatenate(edges)))

    on = blockiness(EncoderConfig(qp=70, lapping=True, dering="off"))
    off = blockiness(EncoderConfig(qp=70, lapping=False, dering="off"))
    assert on < off


def test_encoder_input_validation():
    with pytest.raises(ValueError):
        encode_frame([np.zeros((8, 8), dtype=np.int64)], EncoderConfig())
    with pytest.raises(ValueError):
        encode_frame([np.full((16, 16), 300)], EncoderConfig())
    with pytest.raises(ValueError):
        encode_frame([np.zeros((16, 16))] * 3, EncoderConfig())
    with pytest.raises(ValueError):
        EncoderConfig(qp=None)
    with pytest.raises(ValueError):
        EncoderConfig(qp=10, target_bitrate=1000)
    with pytest.raises(ValueError):
        EncoderConfig(qp=255)
    with pytest.raises(ValueError):
        EncoderConfig(dering="sharpen")


# --- bitstream errors ----------------------------------------------------------------


@pytest.fixture(scope="module")
def stream():
    return encode_frame(make_image(32, 32, 3), EncoderConfig(qp=30)).data


def test_truncation_is_reported(stream):
    with pytest.raises(TruncatedPayloadError) as e:
        decode_frame(stream[:-3])
    assert e.value.stage == "payload"
    with pytest.raises(TruncatedPayloadError) as e:
        decode_frame(stream[:10])
    assert e.value.stage == "header"
    with pytest.raises(TruncatedPayloadError):
        decode_stream(b"")


def test_bad_magic_and_version(stream):
    with pytest.raises(MalformedStreamError):
        decode_frame(b"XXXX" + stream[4:])
    with pytest.raises(VersionError) as e:
        decode_frame(stream[:4] + b"\x07" + stream[5:])
    assert e.value.stage == "header"


def test_corrupt_payload_is_a_decode_error(stream):
    rng = np.random.default_rng(0)
    _, head, _ = BitstreamHeader.unpack(stream)
    for _ in range(20):
        junk = bytearray(stream)
        junk[head:] = rng.integers(0, 256, len(stream) - head, dtype=np.uint8).tobytes()
        try:
            decode_frame(bytes(junk))
        except DecodeError:
            pass


def test_header_roundtrip_and_flags():
    for bits in itertools.product([False, True], repeat=4):
        for d in DERING_MODES:
            t = Tools(*bits, d)
            assert Tools.from_flags(t.flags) == t
    with pytest.raises(MalformedStreamError):
        Tools.from_flags(0x70)
    h = BitstreamHeader(40, 24, 8, 1, 0x1F, 33, rc_target=12345)
    got, _, plen = BitstreamHeader.unpack(h.pack(0))
    assert got == h and plen == 0


def test_stream_of_frames():
    imgs = [make_image(32, 16, s) for s in range(3)]
    seq = encode_sequence(imgs, EncoderConfig(qp=40))
    out = decode_stream(seq.data)
    assert len(out) == 3
    for (planes, _), res in zip(out, seq.frames):
        assert all(np.array_equal(a, b) for a, b in zip(planes, res.recon))


def test_rate_controlled_sequence():
    imgs = [make_image(32, 32, s) for s in range(12)]
    cfg = EncoderConfig(qp=None, target_bitrate=30 * 1500, buffer_frames=4)
    first = encode_sequence(imgs, cfg, pass_=1)
    assert isinstance(first.log, TwoPassLog) and len(first.log.records) == 12
    second = encode_sequence(imgs, cfg, pass_=2, log=TwoPassLog.from_bytes(first.log.to_bytes()))
    one = encode_sequence(imgs, cfg)
    for seq in (one, second):
        heads = [h for _, h in decode_stream(seq.data)]
        assert all(h.rc_target == 1500 for h in heads)
    with pytest.raises(ValueError):
        encode_sequence(imgs, cfg, pass_=2)
    with pytest.raises(ValueError):
        encode_sequence(imgs[:3], cfg, pass_=2, log=first.log)


# --- PSNR ---------------------------------------------------------------------------


def test_psnr_examples():
    a = np.random.default_rng(0).integers(0, 256, (16, 16))
    assert psnr(a, a) == 99
    c = a + np.where(np.arange(256).reshape(16, 16) % 2, 1, -1)
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(48.13, abs=0.01)
    assert psnr(a, c) == psnr(c, a)
    with pytest.raises(ValueError):
        psnr(a, a[:8])


# --- DC basis --------------------------------------------------------------------------


def test_basis_zero_amplitude_is_zero():
    trees = [[PartitionTree.uniform(32, 8)] * 2] * 2
    assert not np.any(render_dc_basis(trees, {(8, 8)}, 0.0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_basis_support_bound(seed):
    rng = np.random.default_rng(seed)
    trees = [[PartitionTree.random(32, rng) for _ in range(3)] for _ in range(3)]
    leaves = [leaf for r in range(3) for c in range(3) for leaf in trees[r][c].leaves(32 * c, 32 * r)]
    x, y, s = leaves[int(rng.integers(len(leaves)))]
    out = render_dc_basis(trees, {(x, y)}, 1000.0)
    rows, cols = np.nonzero(np.abs(out) > 0)
    assert rows.size
    assert rows.min() >= y - 2 and rows.max() <= y + s + 1
    assert cols.min() >= x - 2 and cols.max() <= x + s + 1
    plain = render_dc_basis(trees, {(x, y)}, 1000.0, lapping=False)
    assert np.all((np.abs(plain) > 0) == np.pad(np.ones((s, s), bool), ((y, 96 - y - s), (x, 96 - x - s))))


def test_interior_unsplit_block_support():
    trees = [[PartitionTree(32)] * 3] * 3
    out = render_dc_basis(trees, {(32, 32)}, 500.0)
    rows, cols = np.nonzero(np.abs(out) > 1e-9)
    assert (rows.min(), rows.max(), cols.min(), cols.max()) == (30, 65, 30, 65)
