"""Colorimetry primitives: chromaticity, correlated color temperature, angular error.

Conventions used throughout the package:

* linear RGB means camera-linear values, no gamma;
* chromaticities are CIE 1931 (x, y);
* color temperatures are in Kelvin, restricted to [1667, 25000] K, the
  range over which the CCT fit below is considered meaningful.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

KELVIN_MIN = 1667.0
KELVIN_MAX = 25000.0

#: Chromaticities farther than this from the Planckian locus (Euclidean
#: distance in (x, y)) have no meaningful correlated temperature and are
#: rejected by default.
DEFAULT_LOCUS_DISTANCE = 0.05

# Linear sRGB -> XYZ, D65 white point (Bruce Lindbloom's matrices).
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

# Second radiation constant c2 = h*c/k in m*K (CODATA 2018, exact SI).
_C2 = 6.62607015e-34 * 299792458.0 / 1.380649e-23

# Exponential-sum xy -> CCT fit (Hernandez-Andres, Lee & Romero 1999).
# Each entry: (x_e, y_e, A0, (A1, t1), (A2, t2), (A3, t3)).
_HA_LOW = (
    0.3366,
    0.1735,
    -949.86315,
    (6253.80338, 0.92159),
    (28.70599, 0.20039),
    (0.00004, 0.07125),
)
_HA_HIGH = (
    0.3356,
    0.1691,
    36284.48953,
    (0.00228, 0.07861),
    (5.4535e-36, 0.01543),
    (0.0, 1.0),
)
_HA_SWITCH_K = 50000.0


@dataclass(frozen=True)
class IlluminantRGB:
    """A global illuminant color in linear RGB.

    Magnitude carries no meaning (the angular metric is scale invariant);
    only the direction of the vector matters.
    """

    r: float
    g: float
    b: float

    def __post_init__(self):
        vals = (self.r, self.g, self.b)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"illuminant components must be finite, got {vals}")
        if any(v < 0 for v in vals):
            raise ValueError(f"illuminant components must be >= 0, got {vals}")
        if not any(v > 0 for v in vals):
            raise ValueError("illuminant must have at least one positive component")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "IlluminantRGB":
        r, g, b = np.asarray(arr, dtype=np.float64).reshape(3)
        return cls(float(r), float(g), float(b))


@dataclass(frozen=True)
class ChromaticityXY:
    """CIE 1931 (x, y) chromaticity coordinates."""

    x: float
    y: float

    def __post_init__(self):
        if not (0.0 < self.x < 1.0 and 0.0 < self.y < 1.0 and self.x + self.y < 1.0):
            raise ValueError(f"({self.x}, {self.y}) is not a valid chromaticity")


@dataclass(frozen=True)
class SpectralTable:
    """Curves sampled on a uniform wavelength grid (nm).

    ``values`` has one column per curve; all samples are non-negative.
    """

    wavelengths: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if wl.ndim != 1 or wl.size < 2:
            raise ValueError("wavelength grid must be a 1-D array of >= 2 samples")
        steps = np.diff(wl)
        if not np.all(steps > 0):
            raise ValueError("wavelength grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
            raise ValueError("wavelength grid must have a uniform step")
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != wl.size:
            raise ValueError("values must have one row per wavelength")
        if np.any(vals < 0):
            raise ValueError("spectral values must be >= 0")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", vals)

    @property
    def step(self) -> float:
        return float(self.wavelengths[1] - self.wavelengths[0])

    def same_grid(self, other: "SpectralTable") -> bool:
        return self.wavelengths.shape == other.wavelengths.shape and np.array_equal(
            self.wavelengths, other.wavelengths
        )


@functools.lru_cache(maxsize=1)
def cmf_table() -> SpectralTable:
    """The bundled CIE 1931 2-degree color matching functions (5 nm grid).

    Columns are (xbar, ybar, zbar); see data/cie1931_2deg_5nm.csv.
    """
    text = resources.files("fewshotcc.data").joinpath("cie1931_2deg_5nm.csv").read_text()
    lines = text.strip().splitlines()
    if lines[0] != "wavelength_nm,xbar,ybar,zbar":
        raise ValueError("unexpected CMF csv header")
    rows = np.array([[float(f) for f in ln.split(",")] for ln in lines[1:]])
    return SpectralTable(wavelengths=rows[:, 0], values=rows[:, 1:4])


def check_kelvin(t: float, lo: float = KELVIN_MIN, hi: float = KELVIN_MAX) -> float:
    t = float(t)
    if not math.isfinite(t) or not (lo <= t <= hi):
        raise ValueError(f"temperature {t} K outside supported range [{lo}, {hi}] K")
    return t


def angular_error(a: IlluminantRGB, b: IlluminantRGB) -> float:
    """Angle between two illuminant vectors, in degrees.

    Symmetric and invariant to positive scaling of either argument.
    Computed as atan2(|a x b|, a.b), which equals arccos of the clamped
    normalized dot product but stays exact at 0 and accurate near 180.
    """
    va = a.as_array()
    vb = b.as_array()
    cross = np.cross(va, vb)
    return math.degrees(math.atan2(float(np.linalg.norm(cross)), float(va @ vb)))


def rgb_to_xy(rgb: IlluminantRGB) -> ChromaticityXY:
    """Map linear RGB to (x, y) chromaticity through the sRGB/D65 matrix."""
    xyz = SRGB_TO_XYZ @ rgb.as_array()
    total = float(xyz.sum())
    if total <= 0:
        raise ValueError("X+Y+Z must be positive to form a chromaticity")
    return ChromaticityXY(float(xyz[0] / total), float(xyz[1] / total))


def planck_spectrum(t: float, wavelengths_nm: np.ndarray) -> np.ndarray:
    """Relative blackbody spectral radiance at temperature ``t`` on an nm grid.

    Scaled so the maximum sample is 1; downstream uses are scale invariant.
    """
    wl_m = np.asarray(wavelengths_nm, dtype=np.float64) * 1e-9
    radiance = wl_m**-5 / np.expm1(_C2 / (wl_m * t))
    return radiance / radiance.max()


def planckian_chromaticity(t: float) -> ChromaticityXY:
    """Chromaticity of a blackbody radiator at ``t`` Kelvin.

    Integrates Planck's law against the bundled CMFs by the trapezoid rule.
    """
    check_kelvin(t)
    cmf = cmf_table()
    spectrum = planck_spectrum(t, cmf.wavelengths)
    xyz = np.trapezoid(spectrum[:, None] * cmf.values, cmf.wavelengths, axis=0)
    total = xyz.sum()
    return ChromaticityXY(float(xyz[0] / total), float(xyz[1] / total))


def _xy_to_uv(x, y):
    """CIE 1931 (x, y) -> CIE 1960 UCS (u, v)."""
    denom = -2.0 * x + 12.0 * y + 3.0
    return 4.0 * x / denom, 6.0 * y / denom


@functools.lru_cache(maxsize=1)
def _locus_table() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Planckian locus sampled every 1 K over the supported range."""
    cmf = cmf_table()
    temps = np.arange(KELVIN_MIN, KELVIN_MAX + 1.0)
    wl_m = cmf.wavelengths * 1e-9
    # (T, wavelength) radiance matrix; rows are scale-normalized implicitly
    # by the chromaticity projection.
    radiance = wl_m[None, :] ** -5 / np.expm1(_C2 / (wl_m[None, :] * temps[:, None]))
    xyz = np.trapezoid(radiance[:, :, None] * cmf.values[None, :, :], cmf.wavelengths, axis=1)
    xy = xyz[:, :2] / xyz.sum(axis=1, keepdims=True)
    u, v = _xy_to_uv(xy[:, 0], xy[:, 1])
    return temps, xy, np.column_stack([u, v])


def _nearest_locus_point(c: ChromaticityXY) -> tuple[float, float]:
    """Nearest locus temperature (in the CCT-defining CIE 1960 uv metric)
    plus the minimum (x, y) distance to the locus (the rejection metric)."""
    temps, xy, uv = _locus_table()
    u, v = _xy_to_uv(c.x, c.y)
    idx = int(np.argmin((uv[:, 0] - u) ** 2 + (uv[:, 1] - v) ** 2))
    xy_dist2 = (xy[:, 0] - c.x) ** 2 + (xy[:, 1] - c.y) ** 2
    return float(temps[idx]), float(math.sqrt(xy_dist2.min()))


def cct_oracle(c: ChromaticityXY, max_locus_distance: float = DEFAULT_LOCUS_DISTANCE) -> float:
    """Correlated color temperature by brute-force nearest-locus-point search.

    Slower than :func:`cct_from_xy` but definitionally direct: the CCT is
    the temperature of the closest point on a 1 K sampling of the locus.
    """
    temp, dist = _nearest_locus_point(c)
    if dist > max_locus_distance:
        raise ValueError(
            f"chromaticity ({c.x:.4f}, {c.y:.4f}) is {dist:.4f} from the "
            f"Planckian locus (limit {max_locus_distance}); CCT is undefined"
        )
    return temp


def cct_from_xy(c: ChromaticityXY, max_locus_distance: float = DEFAULT_LOCUS_DISTANCE) -> float:
    """Correlated color temperature via the Hernandez-Andres exponential fit.

    The fit's high-range constants take over when the first evaluation lands
    above 50000 K; results are clamped to [1667, 25000] K.
    """
    _, dist = _nearest_locus_point(c)
    if dist > max_locus_distance:
        raise ValueError(
            f"chromaticity ({c.x:.4f}, {c.y:.4f}) is {dist:.4f} from the "
            f"Planckian locus (limit {max_locus_distance}); CCT is undefined"
        )

    def evaluate(constants) -> float:
        x_e, y_e, a0, term1, term2, term3 = constants
        if c.y == y_e:
            raise ValueError(f"chromaticity y == {y_e} (fit epicenter); CCT undefined")
        n = (c.x - x_e) / (c.y - y_e)
        return a0 + sum(a * math.exp(-n / t) for a, t in (term1, term2, term3))

    cct = evaluate(_HA_LOW)
    if cct > _HA_SWITCH_K:
        cct = evaluate(_HA_HIGH)
    return min(KELVIN_MAX, max(KELVIN_MIN, cct))


def apply_white_balance(pixels: np.ndarray, illum: IlluminantRGB) -> np.ndarray:
    """Divide out green-normalized von Kries gains from a linear RGB image.

    With ``illum`` equal to the scene's true illuminant, a uniformly lit
    gray surface becomes achromatic.
    """
    if illum.r <= 0 or illum.g <= 0 or illum.b <= 0:
        raise ValueError("white balance requires strictly positive illuminant channels")
    pixels = np.asarray(pixels)
    if pixels.shape[-1] != 3:
        raise ValueError("expected an RGB image with a trailing channel axis")
    gains = illum.as_array() / illum.g
    return pixels / gains.astype(pixels.dtype, copy=False)
