"""Task definition from color temperature.

Each camera's images get an image-derived CCT (gray-world mean of valid
linear pixels through the chromaticity/CCT chain). A camera's temperatures
are binned on a log scale into M bins; (camera, bin) pairs with enough
members become few-shot regression tasks. A KNN-in-temperature variant
builds a task around an anchor temperature instead of fixed bins.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .colorsci import DEFAULT_LOCUS_DISTANCE, IlluminantRGB, cct_from_xy, rgb_to_xy
from .dataio import ProcessedImage, gamma_decode

logger = logging.getLogger(__name__)

#: Minimum members for a (camera, bin) task: a default support+query budget.
DEFAULT_MIN_TASK_SIZE = 20


def image_cct(
    img: ProcessedImage, max_locus_distance: float = DEFAULT_LOCUS_DISTANCE
) -> float:
    """Image-derived correlated color temperature (no ground truth needed).

    Uses the gray-world statistic: mean linear RGB over valid pixels, mapped
    through chromaticity to CCT. Raises if the image is fully masked or its
    mean color has no meaningful temperature.
    """
    if not img.valid.any():
        raise ValueError(f"{img.image_id}: no valid pixels to estimate CCT from")
    mean_linear = gamma_decode(img.pixels[img.valid]).mean(axis=0)
    rho = IlluminantRGB.from_array(mean_linear)
    return cct_from_xy(rgb_to_xy(rho), max_locus_distance=max_locus_distance)


@dataclass
class CctHistogram:
    """Log-uniform temperature bins for one camera."""

    camera_id: str
    edges: np.ndarray  # (M + 1,) ascending Kelvin
    counts: np.ndarray  # (M,) images per bin

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.edges.ndim != 1 or self.edges.size < 2:
            raise ValueError("edges must be a 1-D array of at least 2 values")
        if self.counts.shape != (self.edges.size - 1,):
            raise ValueError("counts must have one entry per bin")
        if not np.all(np.diff(self.edges) > 0):
            raise ValueError("edges must be strictly increasing")
        spacing = np.diff(np.log10(self.edges))
        if spacing.size > 1 and np.max(np.abs(spacing - spacing.mean())) > 1e-9:
            raise ValueError("edges must be uniform in log10 to 1e-9")

    @property
    def m(self) -> int:
        return self.counts.size


def assign_bin(edges: np.ndarray, value: float) -> int:
    """Bin index for a temperature; interior shared edges go to the lower bin
    so the bins partition the range (both outer edges inclusive)."""
    if value < edges[0] or value > edges[-1]:
        raise ValueError(f"{value} K outside histogram range [{edges[0]}, {edges[-1]}]")
    if value == edges[0]:
        return 0
    return int(np.searchsorted(edges, value, side="left")) - 1


def build_histogram(
    camera_id: str,
    ccts,
    m: int,
    degenerate: str = "error",
    edges: np.ndarray | None = None,
) -> CctHistogram:
    """Log-uniform M-bin histogram spanning a camera's CCT range.

    The top edge is widened by one ulp so the maximum image lands inside the
    last bin. A camera whose images all share one temperature either raises
    or falls back to a single bin (``degenerate="single_bin"``). Precomputed
    ``edges`` (for cross-camera alignment) override the span computation.
    """
    values = np.asarray(sorted(ccts), dtype=np.float64)
    if values.size < m:
        raise ValueError(
            f"{camera_id}: {values.size} images with computable CCT < {m} bins"
        )
    if edges is None:
        lo, hi = float(values[0]), float(values[-1])
        if lo == hi:
            if degenerate != "single_bin":
                raise ValueError(
                    f"{camera_id}: all CCTs equal {lo} K; cannot form {m} bins"
                )
            m = 1
            hi = float(np.nextafter(hi, np.inf))
        edges = np.logspace(math.log10(lo), math.log10(hi), m + 1)
        edges[0] = min(edges[0], lo)
        edges[-1] = float(np.nextafter(max(edges[-1], hi), np.inf))
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    for v in values:
        counts[assign_bin(edges, float(v))] += 1
    return CctHistogram(camera_id=camera_id, edges=edges, counts=counts)


@dataclass(frozen=True)
class TaskSpec:
    """One few-shot regression task: same camera, similar temperature."""

    camera_id: str
    member_ids: tuple
    bin_index: int | None = None
    cct_lo: float | None = None
    cct_hi: float | None = None
    anchor_cct: float | None = None

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError("task has no members")
        object.__setattr__(self, "member_ids", tuple(sorted(self.member_ids)))

    @property
    def key(self) -> tuple:
        return (self.camera_id, self.bin_index, self.anchor_cct)

    def to_json(self) -> str:
        return json.dumps(
            {
                "camera_id": self.camera_id,
                "bin_index": self.bin_index,
                "cct_lo": self.cct_lo,
                "cct_hi": self.cct_hi,
                "anchor_cct": self.anchor_cct,
                "member_ids": list(self.member_ids),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TaskSpec":
        d = json.loads(line)
        return cls(
            camera_id=d["camera_id"],
            member_ids=tuple(d["member_ids"]),
            bin_index=d["bin_index"],
            cct_lo=d["cct_lo"],
            cct_hi=d["cct_hi"],
            anchor_cct=d["anchor_cct"],
        )


@dataclass(frozen=True)
class Episode:
    """A sampled K-shot support set and disjoint query set from one task."""

    task: TaskSpec
    support_ids: tuple
    query_ids: tuple

    def __post_init__(self):
        if set(self.support_ids) & set(self.query_ids):
            raise ValueError("support and query sets overlap")


def assign_tasks(
    ccts_by_camera: dict,
    histograms: dict,
    min_task_size: int = DEFAULT_MIN_TASK_SIZE,
) -> list:
    """One task per populated (camera, bin); undersized bins are dropped.

    ``ccts_by_camera`` maps camera_id -> {image_id: cct}. Before the size
    filter the tasks partition each camera's computable-CCT images.
    """
    tasks = []
    for camera_id, ccts in sorted(ccts_by_camera.items()):
        hist = histograms[camera_id]
        members_per_bin: dict = {}
        for image_id, cct in ccts.items():
            members_per_bin.setdefault(assign_bin(hist.edges, cct), []).append(image_id)
        for bin_index in sorted(members_per_bin):
            members = members_per_bin[bin_index]
            if len(members) < min_task_size:
                logger.warning(
                    "dropping task (%s, bin %d): %d members < min_task_size %d",
                    camera_id, bin_index, len(members), min_task_size,
                )
                continue
            tasks.append(
                TaskSpec(
                    camera_id=camera_id,
                    member_ids=tuple(members),
                    bin_index=bin_index,
                    cct_lo=float(hist.edges[bin_index]),
                    cct_hi=float(hist.edges[bin_index + 1]),
                )
            )
    return tasks


def knn_task(members: dict, anchor_cct: float, k: int, camera_id: str) -> TaskSpec:
    """The k images nearest the anchor temperature (ties broken by image id)."""
    if len(members) < k:
        raise ValueError(f"{camera_id}: {len(members)} images < K={k}")
    ranked = sorted(members.items(), key=lambda kv: (abs(kv[1] - anchor_cct), kv[0]))
    return TaskSpec(
        camera_id=camera_id,
        member_ids=tuple(image_id for image_id, _ in ranked[:k]),
        anchor_cct=float(anchor_cct),
    )


def sample_episode(task: TaskSpec, k: int, q: int, rng: np.random.Generator) -> Episode:
    """Uniform without-replacement support/query split; deterministic in rng."""
    if k < 1 or q < 0:
        raise ValueError(f"need k >= 1 and q >= 0, got k={k} q={q}")
    n = len(task.member_ids)
    if n < k + q:
        raise ValueError(f"task {task.key} has {n} members < k+q = {k + q}")
    picks = rng.choice(n, size=k + q, replace=False)
    ids = task.member_ids
    return Episode(
        task=task,
        support_ids=tuple(ids[i] for i in picks[:k]),
        query_ids=tuple(ids[i] for i in picks[k:]),
    )


def dump_tasks(tasks, path) -> None:
    """Write tasks as JSON-lines (one task object per line)."""
    with open(path, "w", newline="\n") as f:
        for task in tasks:
            f.write(task.to_json() + "\n")


def load_tasks(path) -> list:
    with open(path) as f:
        return [TaskSpec.from_json(line) for line in f if line.strip()]


@dataclass
class TaskIndex:
    """Tasks plus the lookups the trainer and evaluator need."""

    tasks: list
    histograms: dict
    ccts: dict  # image_id -> cct
    skipped: list = field(default_factory=list)  # image ids with no computable CCT

    def task_of(self, image_id: str) -> TaskSpec:
        for task in self.tasks:
            if image_id in task.member_ids:
                return task
        raise KeyError(f"image {image_id} belongs to no task")

    def for_camera(self, camera_id: str) -> list:
        return [t for t in self.tasks if t.camera_id == camera_id]


def build_task_index(
    images: dict,
    m: int,
    min_task_size: int = DEFAULT_MIN_TASK_SIZE,
    global_edges: bool = False,
    degenerate: str = "error",
    max_locus_distance: float = DEFAULT_LOCUS_DISTANCE,
) -> TaskIndex:
    """Compute CCTs, build per-camera histograms (optionally shared edges),
    and assign (camera, bin) tasks.

    Images whose CCT is not computable (fully masked, off-locus mean color)
    are skipped with a warning and excluded from every task. Each processed
    image's ``cct`` field is filled in place.
    """
    ccts_by_camera: dict = {}
    all_ccts: dict = {}
    skipped = []
    for image_id in sorted(images):
        img = images[image_id]
        try:
            cct = image_cct(img, max_locus_distance=max_locus_distance)
        except ValueError as exc:
            logger.warning("skipping %s: %s", image_id, exc)
            skipped.append(image_id)
            continue
        img.cct = cct
        ccts_by_camera.setdefault(img.camera_id, {})[image_id] = cct
        all_ccts[image_id] = cct

    shared = None
    if global_edges:
        values = np.asarray(sorted(all_ccts.values()))
        shared = np.logspace(math.log10(values[0]), math.log10(values[-1]), m + 1)
        shared[0] = min(shared[0], values[0])
        shared[-1] = float(np.nextafter(max(shared[-1], values[-1]), np.inf))
    histograms = {
        camera_id: build_histogram(camera_id, list(ccts.values()), m, degenerate, edges=shared)
        for camera_id, ccts in sorted(ccts_by_camera.items())
    }
    tasks = assign_tasks(ccts_by_camera, histograms, min_task_size=min_task_size)
    return TaskIndex(tasks=tasks, histograms=histograms, ccts=all_ccts, skipped=skipped)
