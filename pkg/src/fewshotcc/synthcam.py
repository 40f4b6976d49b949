"""Physics-based synthetic multi-camera dataset generation.

A camera is three Gaussian-bump spectral sensitivity curves; an illuminant
is a (optionally perturbed) blackbody spectrum; a scene is a patchwork of
smooth random reflectance curves. Pixels are rendered by integrating
illuminant x reflectance x sensitivity over wavelength, which makes every
scene's ground-truth illuminant exact by construction.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pngio
from .colorsci import IlluminantRGB, SpectralTable, cmf_table, planck_spectrum

SPD_KELVIN_MIN = 2000.0
SPD_KELVIN_MAX = 12000.0

# (R, G, B) channel order; peaks in nm.
_BASE_PEAKS = (610.0, 540.0, 460.0)
_BASE_SIGMAS = (28.0, 32.0, 24.0)

# Cameras are scaled so the brightest channel response over the supported
# blackbody range stays below this, leaving headroom for SPD jitter and
# sensor noise before the [0, 1] clamp.
_RESPONSE_CEILING = 0.8


@dataclass(frozen=True)
class CameraCSS:
    """Per-channel spectral sensitivities, columns ordered (R, G, B)."""

    camera_id: str
    table: SpectralTable

    def __post_init__(self):
        vals = self.table.values
        if vals.shape[1] != 3:
            raise ValueError("camera sensitivity table needs exactly 3 channels")
        if not self.camera_id:
            raise ValueError("camera_id must be nonempty")
        if np.any(vals.max(axis=0) <= 0):
            raise ValueError("every channel needs a strictly positive sample")
        wl = self.table.wavelengths
        peak_r, peak_g, peak_b = (wl[np.argmax(vals[:, k])] for k in range(3))
        if not (peak_b < peak_g < peak_r):
            raise ValueError(
                f"channel peaks must be ordered blue < green < red in wavelength, "
                f"got R={peak_r}, G={peak_g}, B={peak_b}"
            )


@dataclass(frozen=True)
class IlluminantSPD:
    """Spectral power distribution, normalized to unit luminance integral."""

    table: SpectralTable
    nominal_cct: float
    family: str  # "planckian" | "planckian_jittered"

    def __post_init__(self):
        if self.family not in ("planckian", "planckian_jittered"):
            raise ValueError(f"unknown SPD family {self.family!r}")
        cmf = cmf_table()
        if not self.table.same_grid(cmf):
            raise ValueError("SPD must live on the CMF wavelength grid")
        lum = np.trapezoid(self.table.values[:, 0] * cmf.values[:, 1], cmf.wavelengths)
        if abs(lum - 1.0) > 1e-6:
            raise ValueError(f"SPD luminance integral must be 1, got {lum}")

    @property
    def power(self) -> np.ndarray:
        return self.table.values[:, 0]


@dataclass(frozen=True)
class ReflectancePatchSet:
    """A bank of reflectance curves plus a per-pixel patch assignment."""

    curves: SpectralTable  # one column per patch
    assignment: np.ndarray  # (H, W) integer indices into the bank

    def __post_init__(self):
        if np.any(self.curves.values > 1.0):
            raise ValueError("reflectance samples must lie in [0, 1]")
        assignment = np.asarray(self.assignment)
        if assignment.ndim != 2:
            raise ValueError("assignment must be a 2-D index map")
        if assignment.min() < 0 or assignment.max() >= self.curves.values.shape[1]:
            raise ValueError("assignment indexes outside the curve bank")
        object.__setattr__(self, "assignment", assignment)


@dataclass(frozen=True)
class SynthScene:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    gt_illuminant: IlluminantRGB
    camera_id: str
    nominal_cct: float


def _gaussian(wl: np.ndarray, center: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((wl - center) / sigma) ** 2)


@functools.lru_cache(maxsize=1)
def _base_channel_gains() -> tuple:
    """Design-time white-point calibration of the base camera: per-channel
    gains that make the canonical curves respond neutrally to 6500 K light,
    the way production sensors are balanced at a daylight reference."""
    cmf = cmf_table()
    wl = cmf.wavelengths
    power = planck_spectrum(6500.0, wl)
    power = power / np.trapezoid(power * cmf.values[:, 1], wl)
    gains = []
    for k in range(3):
        base = _gaussian(wl, _BASE_PEAKS[k], _BASE_SIGMAS[k])
        gains.append(1.0 / float(np.trapezoid(power * base, wl)))
    return tuple(gains)


def make_css(seed: int, jitter: float = 0.15, camera_id: str | None = None) -> CameraCSS:
    """A synthetic camera: jittered Gaussian sensitivity bumps per channel.

    ``jitter`` in [0, 0.3] scales the per-camera variation of peak position,
    width and amplitude; 0 gives the canonical (daylight-balanced) camera
    for any seed.
    """
    if not 0.0 <= jitter <= 0.3:
        raise ValueError(f"jitter must be in [0, 0.3], got {jitter}")
    rng = np.random.default_rng(seed)
    cmf = cmf_table()
    wl = cmf.wavelengths
    base_gains = _base_channel_gains()
    curves = np.empty((wl.size, 3))
    for k in range(3):
        peak = _BASE_PEAKS[k] + jitter * rng.uniform(-60.0, 60.0)
        sigma = _BASE_SIGMAS[k] * (1.0 + jitter * rng.uniform(-0.5, 0.5))
        amp = base_gains[k] * (1.0 + jitter * rng.uniform(-0.5, 0.5))
        curves[:, k] = amp * _gaussian(wl, peak, sigma)

    # calibrate exposure: brightest channel response over the blackbody
    # range maps to the fixed ceiling (one shared scalar keeps the camera's
    # color signature intact)
    peak_response = 0.0
    for t in np.linspace(SPD_KELVIN_MIN, SPD_KELVIN_MAX, 25):
        spd = planck_spectrum(t, wl)
        spd = spd / np.trapezoid(spd * cmf.values[:, 1], wl)
        peak_response = max(peak_response, float(np.trapezoid(spd[:, None] * curves, wl, axis=0).max()))
    curves *= _RESPONSE_CEILING / peak_response

    return CameraCSS(
        camera_id=camera_id or f"cam-{seed}",
        table=SpectralTable(wavelengths=wl, values=curves),
    )


def planckian_spd(t: float, jitter_seed: int | None = None) -> IlluminantSPD:
    """Blackbody illuminant at ``t`` Kelvin, optionally nudged off-locus.

    The jitter is a smooth multiplicative envelope (sum of wide Gaussians),
    emulating real light sources whose chromaticity sits near but not on
    the Planckian locus.
    """
    if not SPD_KELVIN_MIN <= t <= SPD_KELVIN_MAX:
        raise ValueError(
            f"illuminant temperature {t} K outside [{SPD_KELVIN_MIN}, {SPD_KELVIN_MAX}] K"
        )
    cmf = cmf_table()
    wl = cmf.wavelengths
    power = planck_spectrum(t, wl)
    family = "planckian"
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        envelope = np.ones_like(wl)
        for _ in range(3):
            envelope += rng.uniform(-0.08, 0.08) * _gaussian(
                wl, rng.uniform(wl[0], wl[-1]), rng.uniform(60.0, 140.0)
            )
        power = power * np.maximum(envelope, 0.05)
        family = "planckian_jittered"
    power = power / np.trapezoid(power * cmf.values[:, 1], wl)
    return IlluminantSPD(
        table=SpectralTable(wavelengths=wl, values=power),
        nominal_cct=float(t),
        family=family,
    )


def illuminant_rgb(css: CameraCSS, spd: IlluminantSPD) -> IlluminantRGB:
    """The camera's response to the bare illuminant (no surface in between)."""
    if not css.table.same_grid(spd.table):
        raise ValueError("camera and illuminant live on different wavelength grids")
    wl = css.table.wavelengths
    rho = np.trapezoid(spd.power[:, None] * css.table.values, wl, axis=0)
    return IlluminantRGB(float(rho[0]), float(rho[1]), float(rho[2]))


def make_reflectance_patches(
    rng: np.random.Generator,
    size: int,
    n_patches: int = 12,
    n_rects: int = 28,
) -> ReflectancePatchSet:
    """Random rectangular patchwork of smooth reflectance curves.

    Each curve is a neutral base plus a sum of three Gaussians in
    wavelength, clipped to [0, 1]. The base keeps scene averages close
    enough to gray that image-level temperature estimates stay meaningful.
    """
    cmf = cmf_table()
    wl = cmf.wavelengths
    bank = np.empty((wl.size, n_patches))
    for p in range(n_patches):
        curve = np.full_like(wl, rng.uniform(0.2, 0.45))
        for _ in range(3):
            curve += rng.uniform(-0.15, 0.15) * _gaussian(
                wl, rng.uniform(wl[0], wl[-1]), rng.uniform(50.0, 160.0)
            )
        bank[:, p] = np.clip(curve, 0.0, 1.0)
    assignment = np.zeros((size, size), dtype=np.int64)
    for _ in range(n_rects):
        h = int(rng.integers(size // 6, size * 2 // 3))
        w = int(rng.integers(size // 6, size * 2 // 3))
        y = int(rng.integers(0, size - h + 1))
        x = int(rng.integers(0, size - w + 1))
        assignment[y : y + h, x : x + w] = int(rng.integers(0, n_patches))
    return ReflectancePatchSet(
        curves=SpectralTable(wavelengths=wl, values=bank), assignment=assignment
    )


def render_scene(
    css: CameraCSS,
    spd: IlluminantSPD,
    patches: ReflectancePatchSet,
    noise_sigma: float = 0.005,
    noise_rng: np.random.Generator | None = None,
) -> SynthScene:
    """Integrate illuminant x reflectance x sensitivity into a linear image.

    With ``noise_rng`` set, additive Gaussian sensor noise (std
    ``noise_sigma`` of full scale) is applied before the [0, 1] clamp.
    """
    if not css.table.same_grid(spd.table) or not css.table.same_grid(patches.curves):
        raise ValueError("camera, illuminant and reflectances must share one grid")
    if min(patches.assignment.shape) < 4:
        raise ValueError("scene must be at least 4x4 pixels")
    wl = css.table.wavelengths
    # one integral per (patch, channel); pixels index into the result
    weighted = spd.power[:, None, None] * patches.curves.values[:, :, None] * css.table.values[:, None, :]
    patch_rgb = np.trapezoid(weighted, wl, axis=0)
    image = patch_rgb[patches.assignment].astype(np.float32)
    if noise_rng is not None and noise_sigma > 0:
        image = image + noise_rng.normal(0.0, noise_sigma, image.shape).astype(np.float32)
    image = np.clip(image, 0.0, 1.0)
    return SynthScene(
        image=image,
        gt_illuminant=illuminant_rgb(css, spd),
        camera_id=css.camera_id,
        nominal_cct=spd.nominal_cct,
    )


@dataclass
class SynthConfig:
    out_dir: Path
    cameras: int = 4
    scenes_per_camera: int = 60
    image_size: int = 64
    cct_min: float = 2500.0
    cct_max: float = 9000.0
    cct_mode: str = "bimodal"  # bimodal (indoor/outdoor-like) | loguniform
    warm_max: float = 3500.0
    cold_min: float = 6200.0
    css_jitter: float = 0.15
    spd_jitter: bool = True
    noise_sigma: float = 0.005
    n_patches: int = 12
    master_seed: int = 0

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.cameras < 3:
            raise ValueError("need at least 3 cameras")
        if self.scenes_per_camera < 40:
            raise ValueError("need at least 40 scenes per camera")
        if not (self.cct_min <= 4000.0 and self.cct_max >= 5500.0):
            raise ValueError("CCT range must span warm (<=4000 K) and cold (>=5500 K) sources")
        if self.cct_mode not in ("bimodal", "loguniform"):
            raise ValueError(f"cct_mode must be bimodal or loguniform, got {self.cct_mode!r}")
        if self.cct_mode == "bimodal" and not (
            self.cct_min < self.warm_max < self.cold_min < self.cct_max
        ):
            raise ValueError("bimodal mode needs cct_min < warm_max < cold_min < cct_max")
        if self.image_size < 4:
            raise ValueError("image_size must be >= 4")

    def sample_cct(self, rng: np.random.Generator) -> float:
        """Scene illuminant temperature; bimodal mode mimics the tungsten
        (warm) vs. daylight (cold) split of real capture sessions."""
        if self.cct_mode == "bimodal":
            if rng.random() < 0.5:
                lo, hi = self.cct_min, self.warm_max
            else:
                lo, hi = self.cold_min, self.cct_max
        else:
            lo, hi = self.cct_min, self.cct_max
        return float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))


def _scene_rng(master_seed: int, camera_index: int, scene_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, camera_index, scene_index]))


def camera_for_index(config: SynthConfig, index: int) -> CameraCSS:
    seed = int(np.random.SeedSequence([config.master_seed, 7001, index]).generate_state(1)[0])
    return make_css(seed, jitter=config.css_jitter, camera_id=f"cam{index:02d}")


def generate_dataset(config: SynthConfig, workers: int = 1) -> Path:
    """Render the full dataset to disk and return the manifest path.

    Layout: one 16-bit PNG per scene under <out>/<camera_id>/, plus a
    manifest.csv with columns path,camera_id,gt_r,gt_g,gt_b,nominal_cct.
    Deterministic in the master seed regardless of worker count (each scene
    owns an RNG stream derived from (master_seed, camera, scene)).
    """
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for ci in range(config.cameras):
        css = camera_for_index(config, ci)
        (out / css.camera_id).mkdir(exist_ok=True)
        for si in range(config.scenes_per_camera):
            jobs.append((ci, css, si))

    def render_job(job):
        ci, css, si = job
        rng = _scene_rng(config.master_seed, ci, si)
        t = config.sample_cct(rng)
        jitter_seed = int(rng.integers(0, 2**31 - 1)) if config.spd_jitter else None
        spd = planckian_spd(t, jitter_seed=jitter_seed)
        patches = make_reflectance_patches(rng, config.image_size, config.n_patches)
        noise_rng = rng if config.noise_sigma > 0 else None
        scene = render_scene(css, spd, patches, noise_sigma=config.noise_sigma, noise_rng=noise_rng)
        rel = f"{css.camera_id}/scene{si:04d}.png"
        pngio.write_png16(out / rel, scene.image)
        return rel, scene

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(render_job, jobs))
    else:
        results = [render_job(j) for j in jobs]

    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "camera_id", "gt_r", "gt_g", "gt_b", "nominal_cct"])
        for rel, scene in results:
            gt = scene.gt_illuminant
            writer.writerow(
                [rel, scene.camera_id, repr(gt.r), repr(gt.g), repr(gt.b), repr(scene.nominal_cct)]
            )
    return manifest
