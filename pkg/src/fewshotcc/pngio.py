"""PNG reading/writing for 8- and 16-bit RGB images (cv2-backed)."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


def write_png16(path, image01: np.ndarray) -> None:
    """Write linear [0, 1] floats as a 16-bit RGB PNG."""
    image01 = np.asarray(image01)
    if image01.ndim != 3 or image01.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    scaled = np.round(np.clip(image01, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), scaled[:, :, ::-1]):
        raise OSError(f"could not write {path}")


def read_png(path) -> np.ndarray:
    """Read an 8- or 16-bit RGB PNG, preserving bit depth (uint8/uint16)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"could not read image {path}")
    if raw.ndim != 3 or raw.shape[2] < 3:
        raise ValueError(f"{Path(path).name}: expected an RGB image")
    return np.ascontiguousarray(raw[:, :, 2::-1])
