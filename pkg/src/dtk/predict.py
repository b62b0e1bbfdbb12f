"""Intra prediction in the coefficient domain.

* Haar DC: leaf DC coefficients are merged up the partition tree with the
  2x2 WHT, and the superblock root is predicted from neighbouring roots.
* AC copy: the first coefficient row (column) of a same-size block above
  (left) predicts the current block's first row (column).
* Chroma from luma: co-located luma AC coefficients serve as the shape
  predictor of each chroma band.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pvq import BandLayout
from .transforms import PartitionTree, iwht2x2, wht2x2


# ---------------------------------------------------------------------------
# Haar DC hierarchy


@dataclass
class DcTree:
    """Root DC plus the (B, C, D) details of every split node in pre-order."""

    root: int
    details: list[tuple[int, int, int]] = field(default_factory=list)


def haar_dc_merge(tree: PartitionTree, leaf_dcs) -> DcTree:
    """Merge leaf DCs (z-order, matching ``tree.leaves()``) up to the root."""
    it = iter(leaf_dcs)
    details: list = []

    def merge(node: PartitionTree) -> int:
        if node.children is None:
            return int(next(it))
        slot = len(details)
        details.append(None)
        a, b, c, d = (merge(ch) for ch in node.children)
        A, B, C, D = wht2x2(a, b, c, d)
        details[slot] = (B, C, D)
        return A

    root = merge(tree)
    if next(it, None) is not None:
        raise ValueError("more leaf DCs than leaves")
    return DcTree(root, details)


def haar_dc_expand(tree: PartitionTree, dc: DcTree) -> list[int]:
    """Inverse of ``haar_dc_merge``: leaf DCs in z-order."""
    out: list[int] = []
    it = iter(dc.details)

    def expand(node: PartitionTree, value: int) -> None:
        if node.children is None:
            out.append(int(value))
            return
        B, C, D = next(it)
        for ch, v in zip(node.children, iwht2x2(value, B, C, D)):
            expand(ch, v)

    expand(tree, dc.root)
    return out


def predict_sb_dc(left: int | None, above: int | None, above_left: int | None) -> int:
    """Static predictor for a superblock root DC; None marks a missing neighbour."""
    if left is not None and above is not None:
        if above_left is None:
            return (left + above) // 2
        lo, hi = min(left, above), max(left, above)
        return min(max(left + above - above_left, lo), hi)
    if left is not None:
        return left
    if above is not None:
        return above
    return 0  # samples are centred, so zero is mid-range


# ---------------------------------------------------------------------------
# AC copy


@dataclass(frozen=True)
class AcCopyPrediction:
    coeffs: np.ndarray  # N x N, DC and uncovered positions zero
    sources: tuple[str, ...]  # per band: "above", "left", "both" or ""


def ac_copy_predict(size: int, left: tuple[int, np.ndarray] | None,
                    above: tuple[int, np.ndarray] | None) -> AcCopyPrediction | None:
    """Build a predictor from the first row of ``above`` and first column of ``left``.

    Neighbours are (size, reconstructed coefficient block) pairs; only those
    of the current size contribute.  A band holding both row and column
    positions takes only the source with more energy in its copied part.
    """
    row = above[1][0, 1:] if above is not None and above[0] == size else None
    col = left[1][1:, 0] if left is not None and left[0] == size else None
    if row is None and col is None:
        return None
    pred = np.zeros((size, size), dtype=np.int64)
    layout = BandLayout(size)
    sources = []
    for idx in layout.bands():
        r, c = np.divmod(idx, size)
        in_row = idx[(r == 0) & (c > 0)]
        in_col = idx[(c == 0) & (r > 0)]
        use_row = row is not None and in_row.size > 0
        use_col = col is not None and in_col.size > 0
        if use_row and use_col:
            e_row = int(np.sum(row[in_row - 1].astype(np.int64) ** 2))
            e_col = int(np.sum(col[in_col // size - 1].astype(np.int64) ** 2))
            if e_row >= e_col:
                use_col = False
            else:
                use_row = False
        if use_row:
            pred.reshape(-1)[in_row] = row[in_row - 1]
        if use_col:
            pred.reshape(-1)[in_col] = col[in_col // size - 1]
        sources.append("above" if use_row else "left" if use_col else "")
    return AcCopyPrediction(pred, tuple(sources))


# ---------------------------------------------------------------------------
# Chroma from luma


def tf_merge4(blocks: list[np.ndarray]) -> np.ndarray:
    """Merge four n x n coefficient blocks (TL, TR, BL, BR) into one 2n x 2n block.

    Co-located coefficients pass through the 2x2 WHT and are interleaved so
    that the merged block approximates a transform of the union.
    """
    a, b, c, d = (np.asarray(x, dtype=np.int64) for x in blocks)
    n = a.shape[0]
    A, B, C, D = wht2x2(a, b, c, d)
    out = np.empty((2 * n, 2 * n), dtype=np.int64)
    out[0::2, 0::2] = A
    out[0::2, 1::2] = B
    out[1::2, 0::2] = C
    out[1::2, 1::2] = D
    return out


def cfl_luma_source(luma_coeffs: dict[tuple[int, int], tuple[int, np.ndarray]],
                    x: int, y: int, size: int) -> np.ndarray | None:
    """Luma coefficients covering the luma region [x, x+size) x [y, y+size).

    ``luma_coeffs`` maps leaf origins to (size, coefficients).  A single
    leaf of exactly that size is used directly; a larger leaf is skipped;
    smaller leaves are merged recursively with ``tf_merge4``.
    """
    leaf = luma_coeffs.get((x, y))
    if leaf is not None and leaf[0] == size:
        return leaf[1]
    if leaf is not None and leaf[0] > size:
        return None
    if size <= 4:
        return None
    h = size // 2
    parts = [cfl_luma_source(luma_coeffs, x + dx * h, y + dy * h, h)
             for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1))]
    if any(p is None for p in parts):
        return None
    return tf_merge4(parts)


def cfl_shape_predict(luma_block: np.ndarray, chroma_size: int) -> np.ndarray:
    """Low-frequency corner of co-located luma coefficients, DC removed."""
    src = np.asarray(luma_block)
    if src.shape[0] < chroma_size:
        raise ValueError("luma block smaller than the chroma block")
    pred = np.array(src[:chroma_size, :chroma_size], dtype=np.int64)
    pred[0, 0] = 0
    return pred
