"""Dataset ingestion and preprocessing.

The input contract is a manifest CSV (see :func:`load_manifest`) pointing at
8- or 16-bit RGB PNGs. Preprocessing follows the camera-pipeline order:
black-level subtraction, 8-bit quantization of deeper inputs, scaling to
[0, 1], gamma 2.2 encoding, then calibration-object masking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pngio
from .colorsci import IlluminantRGB

GAMMA = 2.2


class ManifestError(ValueError):
    """Malformed manifest content (missing columns, bad values, dead paths)."""


@dataclass(frozen=True)
class MaskRect:
    """Pixel rectangle, half-open: columns [x0, x1), rows [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"degenerate mask rectangle {self}")


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    camera_id: str
    gt_illuminant: IlluminantRGB
    mask: MaskRect | None = None
    black_level: float = 0.0
    nominal_cct: float | None = None

    @property
    def image_id(self) -> str:
        return str(self.path)


@dataclass
class DatasetManifest:
    root: Path
    records: list = field(default_factory=list)

    def cameras(self) -> list:
        seen = dict.fromkeys(r.camera_id for r in self.records)
        return list(seen)


_REQUIRED = ("path", "camera_id", "gt_r", "gt_g", "gt_b")
_MASK_COLS = ("mask_x0", "mask_y0", "mask_x1", "mask_y1")
_OPTIONAL = _MASK_COLS + ("black_level", "nominal_cct")


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest CSV.

    Required columns: path, camera_id, gt_r, gt_g, gt_b. Optional:
    nominal_cct, black_level, and mask_x0/mask_y0/mask_x1/mask_y1 (all four
    together). Image paths are resolved relative to the manifest file and
    must exist.
    """
    path = Path(path)
    root = path.parent
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in _REQUIRED:
            if col not in header:
                raise ManifestError(f"{path.name}: missing required column {col!r}")
        unknown = [c for c in header if c not in _REQUIRED + _OPTIONAL]
        if unknown:
            raise ManifestError(f"{path.name}: unknown column(s) {unknown}")
        has_mask = any(c in header for c in _MASK_COLS)
        if has_mask and not all(c in header for c in _MASK_COLS):
            raise ManifestError(f"{path.name}: mask columns must appear as a full set {_MASK_COLS}")

        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                gt = IlluminantRGB(
                    _num(row, "gt_r"), _num(row, "gt_g"), _num(row, "gt_b")
                )
            except ValueError as exc:
                raise ManifestError(f"{path.name}:{lineno}: {exc}") from exc
            camera_id = (row["camera_id"] or "").strip()
            if not camera_id:
                raise ManifestError(f"{path.name}:{lineno}: empty camera_id")
            img_path = root / row["path"]
            if not img_path.exists():
                raise ManifestError(f"{path.name}:{lineno}: image not found: {img_path}")
            mask = None
            if has_mask and any((row.get(c) or "").strip() for c in _MASK_COLS):
                try:
                    mask = MaskRect(*(int(_num(row, c)) for c in _MASK_COLS))
                except ValueError as exc:
                    raise ManifestError(f"{path.name}:{lineno}: {exc}") from exc
            black = 0.0
            if (row.get("black_level") or "").strip():
                black = _num(row, "black_level")
            cct = None
            if (row.get("nominal_cct") or "").strip():
                cct = _num(row, "nominal_cct")
            records.append(
                ManifestRecord(
                    path=img_path,
                    camera_id=camera_id,
                    gt_illuminant=gt,
                    mask=mask,
                    black_level=black,
                    nominal_cct=cct,
                )
            )
    return DatasetManifest(root=root, records=records)


def _num(row: dict, col: str) -> float:
    raw = (row.get(col) or "").strip()
    try:
        value = float(raw)
    except ValueError:
        raise ManifestError(f"column {col!r}: {raw!r} is not a number") from None
    if not math.isfinite(value):
        raise ManifestError(f"column {col!r}: {raw!r} is not finite")
    return value


@dataclass
class ProcessedImage:
    """Gamma-encoded float image in [0, 1] with a validity mask.

    Invalid pixels (calibration object) are exactly 0 in all channels.
    ``cct`` is filled later by the task module.
    """

    pixels: np.ndarray
    valid: np.ndarray
    camera_id: str
    gt_illuminant: IlluminantRGB
    image_id: str
    cct: float | None = None


def gamma_encode(linear: np.ndarray) -> np.ndarray:
    """v -> v^(1/2.2), the display encoding applied to network inputs."""
    return np.power(linear, 1.0 / GAMMA)


def gamma_decode(encoded: np.ndarray) -> np.ndarray:
    """v -> v^2.2, back to linear for photometric statistics."""
    return np.power(encoded, GAMMA)


def normalize_raw(raw: np.ndarray, black_level: float = 0.0) -> np.ndarray:
    """Black-subtract, quantize deep inputs to 8 bits, and scale to [0, 1].

    uint16 inputs are rounded to 8-bit codes after black subtraction (the
    post-subtraction maximum maps to 255); uint8 inputs skip requantization.
    float inputs are assumed to be already normalized to [0, 1] and pass
    through black subtraction/rescale only.
    """
    raw = np.asarray(raw)
    if raw.dtype == np.uint8:
        native_max = 255.0
    elif raw.dtype == np.uint16:
        native_max = 65535.0
    elif np.issubdtype(raw.dtype, np.floating):
        native_max = 1.0
    else:
        raise ValueError(f"unsupported image dtype {raw.dtype}")
    if not 0 <= black_level < native_max:
        raise ValueError(f"black level {black_level} outside [0, {native_max})")
    shifted = np.maximum(raw.astype(np.float64) - black_level, 0.0)
    full_scale = native_max - black_level
    if raw.dtype == np.uint16:
        codes = np.round(shifted * (255.0 / full_scale))
        return (codes / 255.0).astype(np.float32)
    return (shifted / full_scale).astype(np.float32)


def preprocess(raw: np.ndarray, record: ManifestRecord) -> ProcessedImage:
    """Full pipeline: black level, bit depth, [0, 1], gamma, masking."""
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {raw.shape}")
    pixels = gamma_encode(normalize_raw(raw, record.black_level))
    h, w = pixels.shape[:2]
    valid = np.ones((h, w), dtype=bool)
    if record.mask is not None:
        m = record.mask
        if m.x1 > w or m.y1 > h:
            raise ValueError(f"mask rectangle {m} outside {w}x{h} image")
        pixels[m.y0 : m.y1, m.x0 : m.x1, :] = 0.0
        valid[m.y0 : m.y1, m.x0 : m.x1] = False
    return ProcessedImage(
        pixels=pixels,
        valid=valid,
        camera_id=record.camera_id,
        gt_illuminant=record.gt_illuminant,
        image_id=record.image_id,
    )


def load_processed(manifest: DatasetManifest) -> dict:
    """Read and preprocess every manifest image; keyed by image id."""
    images = {}
    for record in manifest.records:
        raw = pngio.read_png(record.path)
        images[record.image_id] = preprocess(raw, record)
    return images


def bilinear_resize(img: np.ndarray, out_size: int) -> np.ndarray:
    """Square bilinear resize with half-pixel centers (align-corners false)."""
    h, w = img.shape[:2]
    if h == out_size and w == out_size:
        return img.copy()
    out = np.empty((out_size, out_size, img.shape[2]), dtype=img.dtype)
    for axis, n in ((0, h), (1, w)):
        src = (np.arange(out_size) + 0.5) * (n / out_size) - 0.5
        src = np.clip(src, 0.0, n - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = (src - i0).astype(img.dtype)
        if axis == 0:
            y0, y1, fy = i0, i1, frac[:, None, None]
        else:
            x0, x1, fx = i0, i1, frac[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out[:] = top * (1 - fy) + bot * fy
    return out


def crop_resize(img: ProcessedImage, out_size: int, rng: np.random.Generator) -> np.ndarray:
    """Random square crop (side uniform in [out_size, min(H, W)]) resized to
    out_size with bilinear interpolation.

    Masked pixels stay zero-valued and are not weight-renormalized; a crop at
    the minimum side is returned bit-identically (pure crop, no resampling).
    """
    h, w = img.pixels.shape[:2]
    max_side = min(h, w)
    if out_size > max_side:
        raise ValueError(f"out_size {out_size} exceeds image min side {max_side}")
    side = int(rng.integers(out_size, max_side + 1))
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    crop = img.pixels[y0 : y0 + side, x0 : x0 + side, :]
    return bilinear_resize(crop, out_size)
