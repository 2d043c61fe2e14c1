"""PNG image io. Arrays are float32 RGB in [0, 1], shape (H, W, 3)."""
from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .errors import InvalidArgumentError


def write_png(path, image: np.ndarray, bit_depth: int = 8) -> None:
    """Write a [0,1] float image as an 8- or 16-bit RGB PNG."""
    if bit_depth not in (8, 16):
        raise InvalidArgumentError(f"unsupported bit depth {bit_depth}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgumentError(f"expected (H, W, 3) image, got {img.shape}")
    scale = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    q = np.clip(np.rint(img * scale), 0, scale).astype(dtype)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ok = cv2.imwrite(str(path), q[:, :, ::-1])  # cv2 stores BGR
    if not ok:
        raise InvalidArgumentError(f"failed to write image {path}")


def read_png(path) -> np.ndarray:
    """Read an RGB PNG into float32 [0,1]; raises on unreadable files."""
    raw = read_png_raw(path)
    scale = 255.0 if raw.dtype == np.uint8 else 65535.0
    return (raw.astype(np.float32)) / scale


def read_png_raw(path) -> np.ndarray:
    """Read an RGB PNG keeping the native integer dtype (uint8 or uint16)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise InvalidArgumentError(f"cannot decode image {path}")
    if raw.ndim == 2:
        raw = np.stack([raw] * 3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    return raw[:, :, ::-1].copy()


def quantization_step(bit_depth: int) -> float:
    return 1.0 / (255 if bit_depth == 8 else 65535)
