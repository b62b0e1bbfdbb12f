"""Fixed 20-image grayscale corpus for trainer and predictor tests."""

from __future__ import annotations

import functools

import numpy as np

NATURAL = ("camera", "coins", "moon", "text", "page", "clock", "coffee", "astronaut",
           "chelsea", "rocket", "brick", "grass", "gravel", "cell")
CROP = 192


def _natural(name: str) -> np.ndarray:
    import skimage.data
    from skimage.color import rgb2gray

    im = getattr(skimage.data, name)()
    if im.ndim == 3:
        im = np.round(rgb2gray(im[..., :3]) * 255)
    im = np.asarray(im, dtype=np.float64)
    h, w = im.shape
    r0, c0 = (h - CROP) // 2, (w - CROP) // 2
    return im[r0:r0 + CROP, c0:c0 + CROP].astype(np.int64)


def _synthetic(k: int, size: int = CROP) -> np.ndarray:
    rng = np.random.default_rng(1000 + k)
    i, j = np.mgrid[0:size, 0:size].astype(np.float64)
    if k == 0:
        im = 40 + 0.6 * i + 0.4 * j
    elif k == 1:
        im = 128 + 90 * np.sin(2 * np.pi * (j + 0.3 * i) / 23)
    elif k == 2:
        im = 128 + 100 * np.sin(np.hypot(i - size / 2, j - size / 2) / 5)
    elif k == 3:
        im = np.where((i - j) % 48 < 24, 70.0, 190.0)
    elif k == 4:
        # 2D separable AR(1) texture
        e = rng.standard_normal((size, size))
        for a in range(1, size):
            e[a] += 0.9 * e[a - 1]
        for b in range(1, size):
            e[:, b] += 0.9 * e[:, b - 1]
        im = 128 + 12 * e / e.std() * 4
    else:
        im = 128 + 60 * np.sin(i / 9) * np.cos(j / 13) + rng.normal(0, 4, (size, size))
    return np.clip(np.round(im), 0, 255).astype(np.int64)


@functools.lru_cache(maxsize=1)
def corpus_images() -> tuple[np.ndarray, ...]:
    return tuple(_natural(n) for n in NATURAL) + tuple(_synthetic(k) for k in range(6))
