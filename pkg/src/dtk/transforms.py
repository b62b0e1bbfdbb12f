"""Block transforms: orthonormal DCTs, 4-point lapping and the integer 2x2 WHT.

Samples and coefficients are integer numpy arrays.  The DCT is computed in
double precision and rounded (half away from zero) back to fixed point; the
lapping filters and the WHT are exact integer lifting networks, so their
inverses are bit-exact.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

SUPPORTED_SIZES = (4, 8, 16, 32)
SB_SIZE = 32
MIN_BLOCK = 4


def round_half_away(x):
    """Round to nearest integer, ties away from zero; returns int64."""
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


@functools.lru_cache(maxsize=None)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (rows are basis functions)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def _check_size(block: np.ndarray) -> int:
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"expected a square block, got shape {block.shape}")
    n = block.shape[0]
    if n not in SUPPORTED_SIZES:
        raise ValueError(f"unsupported transform size {n}")
    return n


def fdct_float(block) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    m = dct_matrix(_check_size(block))
    return m @ block @ m.T


def idct_float(coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    m = dct_matrix(_check_size(coeffs))
    return m.T @ coeffs @ m


def fdct(block, shift: int = 0) -> np.ndarray:
    """Forward 2D DCT; coefficients carry `shift` extra fractional bits."""
    return round_half_away(fdct_float(block) * (1 << shift))


def idct(coeffs, shift: int = 0) -> np.ndarray:
    """Inverse of :func:`fdct` for the same `shift`."""
    return round_half_away(idct_float(coeffs) / (1 << shift))


def dct(block, direction: str = "forward", shift: int = 0) -> np.ndarray:
    if direction == "forward":
        return fdct(block, shift)
    if direction == "inverse":
        return idct(block, shift)
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# 4-point lapping


@dataclass(frozen=True)
class LappingFilter4:
    """Pre/post filter straddling one block edge: (x0, x1 | x2, x3).

    A sum/difference butterfly pairs the outer (x0, x3) and inner (x1, x2)
    samples; `steps` are dyadic shears alternately applied to the two
    difference terms, starting with ``t3 += num/2**shift * t2``.
    """

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for num, shift in self.steps:
            if shift < 0 or shift > 15:
                raise ValueError("lifting denominators must be 2**0..2**15")

    def matrix(self) -> np.ndarray:
        """Real-valued 2x2 map applied to (t2, t3), ignoring rounding."""
        v = np.eye(2)
        for idx, (num, shift) in enumerate(self.steps):
            s = np.eye(2)
            if idx % 2 == 0:
                s[1, 0] = num / (1 << shift)
            else:
                s[0, 1] = num / (1 << shift)
            v = s @ v
        return v

    def pre(self, x0, x1, x2, x3):
        t3 = x0 - x3
        t2 = x1 - x2
        t1 = x1 - (t2 >> 1)
        t0 = x0 - (t3 >> 1)
        for idx, (num, shift) in enumerate(self.steps):
            rnd = (1 << shift) >> 1
            if idx % 2 == 0:
                t3 = t3 + ((num * t2 + rnd) >> shift)
            else:
                t2 = t2 + ((num * t3 + rnd) >> shift)
        y1 = t1 + (t2 >> 1)
        y0 = t0 + (t3 >> 1)
        return y0, y1, y1 - t2, y0 - t3

    def post(self, y0, y1, y2, y3):
        t3 = y0 - y3
        t2 = y1 - y2
        t1 = y1 - (t2 >> 1)
        t0 = y0 - (t3 >> 1)
        for idx in reversed(range(len(self.steps))):
            num, shift = self.steps[idx]
            rnd = (1 << shift) >> 1
            if idx % 2 == 0:
                t3 = t3 - ((num * t2 + rnd) >> shift)
            else:
                t2 = t2 - ((num * t3 + rnd) >> shift)
        x1 = t1 + (t2 >> 1)
        x0 = t0 + (t3 >> 1)
        return x0, x1, x1 - t2, x0 - t3

    def real_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """(pre, post) as 4x4 real matrices acting on column vectors."""
        fwd = np.zeros((4, 4))
        fwd[3] = [1, 0, 0, -1]
        fwd[2] = [0, 1, -1, 0]
        fwd[1] = np.array([0, 1, 0, 0]) - 0.5 * fwd[2]
        fwd[0] = np.array([1, 0, 0, 0]) - 0.5 * fwd[3]
        mid = np.eye(4)
        mid[2:, 2:] = self.matrix()
        pre = np.linalg.inv(fwd) @ mid @ fwd
        return pre, np.linalg.inv(pre)


def lap4(samples: Sequence[int], filt: "LappingFilter4 | None" = None,
         direction: str = "pre") -> tuple[int, int, int, int]:
    filt = filt or DEFAULT_LAPPING
    if len(samples) != 4:
        raise ValueError("lap4 takes exactly four samples")
    x = [int(s) for s in samples]
    if direction == "pre":
        return tuple(int(v) for v in filt.pre(*x))
    if direction == "post":
        return tuple(int(v) for v in filt.post(*x))
    raise ValueError(f"unknown direction {direction!r}")


def _ar1_cov(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def lapped_coding_gain(v_entries: np.ndarray, rho: float = 0.95) -> np.ndarray:
    """Coding gain (dB) of 4-point lapping + 4-point DCT on an AR(1) source.

    `v_entries` has shape (..., 2, 2): the real map applied to the two
    butterfly differences.  Uses synthesis-norm weighting, since the lapped
    transform is biorthogonal.
    """
    v = np.asarray(v_entries, dtype=np.float64)
    batch = v.shape[:-2]
    v = v.reshape(-1, 2, 2)
    fwd = np.zeros((4, 4))
    fwd[3] = [1, 0, 0, -1]
    fwd[2] = [0, 1, -1, 0]
    fwd[1] = np.array([0, 1, 0, 0]) - 0.5 * fwd[2]
    fwd[0] = np.array([1, 0, 0, 0]) - 0.5 * fwd[3]
    inv = np.linalg.inv(fwd)

    def embed(m):
        mid = np.tile(np.eye(4), (m.shape[0], 1, 1))
        mid[:, 2:, 2:] = m
        return mid

    det = v[:, 0, 0] * v[:, 1, 1] - v[:, 0, 1] * v[:, 1, 0]
    vinv = np.empty_like(v)
    vinv[:, 0, 0] = v[:, 1, 1]
    vinv[:, 1, 1] = v[:, 0, 0]
    vinv[:, 0, 1] = -v[:, 0, 1]
    vinv[:, 1, 0] = -v[:, 1, 0]
    vinv /= det[:, None, None]
    pre = inv @ embed(v) @ fwd
    post = inv @ embed(vinv) @ fwd

    d = dct_matrix(4)
    # block samples 0..3 from the two edge filters around it (8 inputs)
    sel = np.zeros((pre.shape[0], 4, 8))
    sel[:, 0, 0:4] = pre[:, 2]
    sel[:, 1, 0:4] = pre[:, 3]
    sel[:, 2, 4:8] = pre[:, 0]
    sel[:, 3, 4:8] = pre[:, 1]
    ana = np.einsum("kj,bjm->bkm", d, sel)
    cov = _ar1_cov(8, rho)
    var = np.einsum("bkm,mn,bkn->bk", ana, cov, ana)
    u = d.T  # column k: block samples of basis k
    syn_l = np.einsum("bij,jk->bik", post[:, :, 2:4], u[0:2])
    syn_r = np.einsum("bij,jk->bik", post[:, :, 0:2], u[2:4])
    norms = (syn_l ** 2).sum(axis=1) + (syn_r ** 2).sum(axis=1)
    gm = np.exp(np.mean(np.log(var * norms), axis=1))
    return (10 * np.log10(1.0 / gm)).reshape(batch)


def _shear_product(a, b, c) -> np.ndarray:
    a, b, c = np.broadcast_arrays(*(np.asarray(t, dtype=np.float64) for t in (a, b, c)))
    v = np.empty(a.shape + (2, 2))
    # [[1,0],[c,1]] @ [[1,b],[0,1]] @ [[1,0],[a,1]]
    v[..., 0, 0] = 1 + b * a
    v[..., 0, 1] = b
    v[..., 1, 0] = c * (1 + b * a) + a
    v[..., 1, 1] = c * b + 1
    return v


def design_lapping_filter(rho: float = 0.95, shift: int = 6, span: int = 64,
                          centre: tuple[int, int, int] = (0, 0, 0)
                          ) -> tuple[LappingFilter4, float]:
    """Brute-force the three dyadic shears maximizing AR(1) coding gain.

    Numerators range over ``centre[i] - span .. centre[i] + span`` with a
    common denominator ``2**shift``.  Returns the best filter and its gain.
    """
    den = float(1 << shift)
    rng_b = np.arange(centre[1] - span, centre[1] + span + 1)
    rng_c = np.arange(centre[2] - span, centre[2] + span + 1)
    bb, cc = np.meshgrid(rng_b, rng_c, indexing="ij")
    best = (-np.inf, None)
    for a in range(centre[0] - span, centre[0] + span + 1):
        v = _shear_product(a / den, bb / den, cc / den)
        g = lapped_coding_gain(v, rho)
        g = np.where(np.isfinite(g), g, -np.inf)
        idx = np.unravel_index(np.argmax(g), g.shape)
        if g[idx] > best[0] + 1e-12:
            best = (float(g[idx]), (a, int(bb[idx]), int(cc[idx])))
    gain, (a, b, c) = best
    steps = tuple((n, shift) for n in (a, b, c))
    return LappingFilter4(steps), gain


# Output of design_lapping_filter(0.95, shift=6, span=64); see
# scripts/design_lapping.py.  Frozen so the bitstream does not depend on
# floating-point search details.
DEFAULT_LAPPING = LappingFilter4(((-8, 6), (34, 6), (0, 6)))


# ---------------------------------------------------------------------------
# Partition trees


@dataclass(frozen=True)
class PartitionTree:
    """Quadtree of transform sizes for one superblock (or sub-region)."""

    size: int = SB_SIZE
    children: "tuple[PartitionTree, ...] | None" = None

    def __post_init__(self):
        if self.size < MIN_BLOCK or self.size & (self.size - 1):
            raise ValueError(f"invalid block size {self.size}")
        if self.children is not None:
            if len(self.children) != 4:
                raise ValueError("a split node needs exactly four children")
            for ch in self.children:
                if ch.size * 2 != self.size:
                    raise ValueError("child size must be half the parent size")

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @classmethod
    def split(cls, size: int, children=None) -> "PartitionTree":
        if children is None:
            children = tuple(cls(size // 2) for _ in range(4))
        return cls(size, tuple(children))

    @classmethod
    def uniform(cls, size: int, leaf_size: int) -> "PartitionTree":
        if size == leaf_size:
            return cls(size)
        return cls.split(size, [cls.uniform(size // 2, leaf_size)] * 4)

    @classmethod
    def random(cls, size: int, rng: np.random.Generator, p_split: float = 0.5,
               min_size: int = MIN_BLOCK) -> "PartitionTree":
        if size > min_size and rng.random() < p_split:
            return cls.split(size, [cls.random(size // 2, rng, p_split, min_size)
                                    for _ in range(4)])
        return cls(size)

    def leaves(self, x: int = 0, y: int = 0) -> Iterator[tuple[int, int, int]]:
        """Leaves as (x, y, size) in z-order (TL, TR, BL, BR)."""
        if self.children is None:
            yield x, y, self.size
            return
        h = self.size // 2
        for ch, (dx, dy) in zip(self.children, QUADRANTS):
            yield from ch.leaves(x + dx * h, y + dy * h)

    def scaled(self, factor_log2: int, min_size: int = MIN_BLOCK) -> "PartitionTree":
        """The tree on a grid subsampled by 2**factor_log2, clamped at min_size."""
        size = self.size >> factor_log2
        if self.children is None or size // 2 < min_size:
            return PartitionTree(size)
        return PartitionTree(size, tuple(c.scaled(factor_log2, min_size) for c in self.children))

    def to_string(self) -> str:
        if self.children is None:
            return "L"
        return "S(" + ",".join(c.to_string() for c in self.children) + ")"

    @classmethod
    def parse(cls, text: str, size: int = SB_SIZE) -> "PartitionTree":
        tree, pos = cls._parse(text.replace(" ", ""), 0, size)
        if pos != len(text.replace(" ", "")):
            raise ValueError(f"trailing characters in tree string {text!r}")
        return tree

    @classmethod
    def _parse(cls, text: str, pos: int, size: int):
        if text.startswith("L", pos):
            return cls(size), pos + 1
        if not text.startswith("S(", pos):
            raise ValueError(f"bad tree string at offset {pos}")
        pos += 2
        kids = []
        for i in range(4):
            kid, pos = cls._parse(text, pos, size // 2)
            kids.append(kid)
            sep = ")" if i == 3 else ","
            if not text.startswith(sep, pos):
                raise ValueError(f"expected {sep!r} at offset {pos}")
            pos += 1
        return cls(size, tuple(kids)), pos


QUADRANTS = ((0, 0), (1, 0), (0, 1), (1, 1))


def count_trees(size: int, min_size: int = MIN_BLOCK) -> int:
    """Number of quadtree partitions of a size x size block down to min_size."""
    if size <= min_size:
        return 1
    return 1 + count_trees(size // 2, min_size) ** 4


def enumerate_trees(size: int, min_size: int = MIN_BLOCK) -> Iterator[PartitionTree]:
    yield PartitionTree(size)
    if size > min_size:
        subs = list(enumerate_trees(size // 2, min_size))
        for combo in itertools.product(subs, repeat=4):
            yield PartitionTree(size, combo)


# ---------------------------------------------------------------------------
# Applying lapping to planes

Trace = Callable[[str, str, int, int, int], None]


def filter_edge(plane: np.ndarray, orientation: str, pos: int, start: int,
                stop: int, direction: str,
                filt: LappingFilter4 = DEFAULT_LAPPING) -> None:
    """Filter one edge in place.

    A horizontal edge lies between rows pos-1 and pos and spans columns
    [start, stop); a vertical edge lies between columns pos-1 and pos and
    spans rows [start, stop).
    """
    fn = filt.pre if direction == "pre" else filt.post
    if orientation == "h":
        rows = plane[pos - 2:pos + 2, start:stop]
        out = fn(rows[0], rows[1], rows[2], rows[3])
        for i in range(4):
            plane[pos - 2 + i, start:stop] = out[i]
    else:
        cols = plane[start:stop, pos - 2:pos + 2]
        out = fn(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])
        for i in range(4):
            plane[start:stop, pos - 2 + i] = out[i]


def lap_tree(plane: np.ndarray, tree: PartitionTree, x: int, y: int,
             direction: str, filt: LappingFilter4 = DEFAULT_LAPPING,
             trace: Trace | None = None) -> None:
    """Filter the interior edges of `tree` placed at (x, y), recursively."""
    if tree.is_leaf:
        return
    h = tree.size // 2
    kids = list(zip(tree.children, QUADRANTS))
    if direction == "pre":
        _lap_cross(plane, x, y, tree.size, direction, filt, trace)
        for ch, (dx, dy) in kids:
            lap_tree(plane, ch, x + dx * h, y + dy * h, direction, filt, trace)
    else:
        for ch, (dx, dy) in reversed(kids):
            lap_tree(plane, ch, x + dx * h, y + dy * h, direction, filt, trace)
        _lap_cross(plane, x, y, tree.size, direction, filt, trace)


def _lap_cross(plane, x, y, size, direction, filt, trace):
    h = size // 2
    order = ("h", "v") if direction == "pre" else ("v", "h")
    for o in order:
        if o == "h":
            filter_edge(plane, "h", y + h, x, x + size, direction, filt)
            if trace:
                trace(direction, "h", y + h, x, x + size)
        else:
            filter_edge(plane, "v", x + h, y, y + size, direction, filt)
            if trace:
                trace(direction, "v", x + h, y, y + size)


def lap_split_level(block: np.ndarray, direction: str,
                    filt: LappingFilter4 = DEFAULT_LAPPING) -> np.ndarray:
    """Copy of `block` with only its central cross edges filtered."""
    out = np.array(block, dtype=np.int64, copy=True)
    _lap_cross(out, 0, 0, out.shape[0], direction, filt, None)
    return out


def lap_exterior(plane: np.ndarray, sb: int, direction: str,
                 filt: LappingFilter4 = DEFAULT_LAPPING,
                 trace: Trace | None = None) -> None:
    """Filter the superblock grid edges of a whole plane in place.

    The pre-filter runs every horizontal segment, then every vertical one;
    the post-filter visits the same segments in exactly the reverse order.
    """
    height, width = plane.shape
    rows, cols = height // sb, width // sb
    edges = [("h", r * sb, c * sb, (c + 1) * sb) for r in range(1, rows) for c in range(cols)]
    edges += [("v", c * sb, r * sb, (r + 1) * sb) for c in range(1, cols) for r in range(rows)]
    if direction != "pre":
        edges.reverse()
    for o, pos, a, b in edges:
        filter_edge(plane, o, pos, a, b, direction, filt)
        if trace:
            trace(direction, o, pos, a, b)


def apply_lapping(plane: np.ndarray, trees: Sequence[Sequence[PartitionTree]],
                  direction: str, sb: int = SB_SIZE,
                  filt: LappingFilter4 = DEFAULT_LAPPING,
                  trace: Trace | None = None) -> np.ndarray:
    """Fixed-lapping filter of a whole plane; returns a new array.

    `trees[r][c]` is the partition of superblock (r, c).  The pre-filter runs
    the superblock grid edges first, then each superblock's interior
    recursively; the post-filter is the exact reverse.
    """
    if direction not in ("pre", "post"):
        raise ValueError(f"unknown direction {direction!r}")
    out = np.array(plane, dtype=np.int64, copy=True)
    height, width = out.shape
    if height % sb or width % sb:
        raise ValueError(f"plane {width}x{height} is not a multiple of the superblock size {sb}")
    rows, cols = height // sb, width // sb
    if len(trees) != rows or any(len(r) != cols for r in trees):
        raise ValueError("partition grid does not match the plane dimensions")
    for row in trees:
        for t in row:
            if t.size != sb:
                raise ValueError("tree size does not match the superblock size")
    if direction == "pre":
        lap_exterior(out, sb, "pre", filt, trace)
    order = [(r, c) for r in range(rows) for c in range(cols)]
    if direction == "post":
        order.reverse()
    for r, c in order:
        lap_tree(out, trees[r][c], c * sb, r * sb, direction, filt, trace)
    if direction == "post":
        lap_exterior(out, sb, "post", filt, trace)
    return out


# ---------------------------------------------------------------------------
# 2x2 Walsh-Hadamard transform


def wht2x2(a, b, c, d):
    """Exactly reversible orthonormal 2x2 WHT: seven add/subtracts, one shift."""
    e = a + c
    f = d - b
    g = (e - f) >> 1
    bb = g - b
    cc = g - c
    aa = e - bb
    dd = f + cc
    return aa, bb, cc, dd


def iwht2x2(aa, bb, cc, dd):
    """Inverse of :func:`wht2x2`."""
    e = aa + bb
    f = dd - cc
    g = (e - f) >> 1
    b = g - bb
    c = g - cc
    a = e - c
    d = f + b
    return a, b, c, d


def wht2x2_real(a, b, c, d):
    """The real-valued transform the lifting network approximates."""
    return ((a + b + c + d) / 2, (a - b + c - d) / 2,
            (a + b - c - d) / 2, (a - b - c + d) / 2)
