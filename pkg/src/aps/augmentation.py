"""Photometric and occlusion augmentation.

Brightness scaling applies to RGB images only (point-cloud images encode
geometry, not light). Sliding masks simulate occlusions and missing sensor
data: the same rectangle is burned into both modalities of a sample pair.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    if factor <= 0:
        raise InvalidArgumentError("brightness factor must be > 0")
    return np.clip(image * np.float32(factor), 0.0, 1.0).astype(np.float32)


def mask_rect(image: np.ndarray, x: int, y: int, w: int, h: int, fill: float = 0.0) -> np.ndarray:
    ih, iw = image.shape[:2]
    if w < 1 or h < 1:
        raise InvalidArgumentError("mask must be at least 1x1")
    if x < 0 or y < 0 or x + w > iw or y + h > ih:
        raise InvalidArgumentError(
            f"mask ({x}, {y}, {w}, {h}) leaves the {iw}x{ih} image"
        )
    out = image.copy()
    out[y:y + h, x:x + w] = fill
    return out


def sliding_mask_grid(width: int, height: int, mask_frac: float, stride_frac: float):
    """Rectangles of a sliding-window occlusion sweep, row-major.

    Per axis there are ceil((1 - mask_frac) / stride_frac) + 1 stops; the last
    stop is clamped so the mask stays inside the image and touches the far
    edge exactly.
    """
    if not 0.0 < mask_frac < 1.0:
        raise InvalidArgumentError("mask_frac must be in (0, 1)")
    if stride_frac <= 0:
        raise InvalidArgumentError("stride_frac must be > 0")
    mw = max(1, int(round(mask_frac * width)))
    mh = max(1, int(round(mask_frac * height)))
    k = math.ceil((1.0 - mask_frac) / stride_frac) + 1

    def stops(size, msize):
        out = []
        for i in range(k):
            p = min(int(round(i * stride_frac * size)), size - msize)
            if not out or p != out[-1]:
                out.append(p)
        out[-1] = size - msize
        return out

    return [(x, y, mw, mh) for y in stops(height, mh) for x in stops(width, mw)]


def mask_pair(rgb: np.ndarray, pointcloud: np.ndarray, rect) -> tuple:
    """Burn the same rectangle into both modalities."""
    x, y, w, h = rect
    return mask_rect(rgb, x, y, w, h), mask_rect(pointcloud, x, y, w, h)
