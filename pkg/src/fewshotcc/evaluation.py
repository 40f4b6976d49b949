"""Angular-error statistics and the multi-draw K-shot evaluation protocol.

For every test image of the held-out camera and every draw, a fresh support
set is sampled from the image's task (never containing the image itself),
the checkpoint is adapted on it, and the image's angular error is recorded
after each inner step. The headline number is the per-draw median over all
images, averaged over draws; the full six-statistic summary is computed on
the draw-averaged per-image errors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .colorsci import IlluminantRGB
from .meta import inner_adapt_multi, predict_multi, prepare_batch
from .nn import Checkpoint


def prediction_error_degrees(pred, gt: IlluminantRGB) -> float:
    """Angular error of a raw (possibly unnormalized or degenerate) network
    prediction against a ground-truth illuminant, in degrees."""
    p = np.asarray(pred, dtype=np.float64).reshape(3)
    pnorm = float(np.linalg.norm(p))
    if pnorm <= 1e-8:
        return 90.0  # matches the training loss's degenerate fallback
    g = gt.as_array()
    cosine = float(p @ g / (pnorm * np.linalg.norm(g)))
    return math.degrees(math.acos(min(1.0, max(-1.0, cosine))))

#: Documents the aggregation-order reading used for the headline statistic.
AGGREGATION_NOTE = (
    "headline_median_over_draws = mean over draws of the per-draw median over images; "
    "the 'median' column is the median over images of draw-averaged errors "
    "(the sentence's other reading). Error bars are inter-draw standard deviations."
)


@dataclass(frozen=True)
class AngularErrorStats:
    """The six-column summary used by color-constancy benchmarks (degrees)."""

    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float
    gm: float

    def __post_init__(self):
        vals = (self.mean, self.median, self.trimean, self.best25, self.worst25, self.gm)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"statistics must be finite and >= 0, got {vals}")
        if not (self.best25 <= self.median <= self.worst25):
            raise ValueError(
                f"expected best25 <= median <= worst25, got "
                f"{self.best25}, {self.median}, {self.worst25}"
            )

    def as_tuple(self) -> tuple:
        return (self.mean, self.median, self.trimean, self.best25, self.worst25, self.gm)


FIELDS = ("mean", "median", "trimean", "best25", "worst25", "gm")


def stats(errors) -> AngularErrorStats:
    """Six-statistic summary of a list of angular errors (degrees).

    median: midpoint-interpolated order statistic; trimean: (Q1 + 2*Q2 + Q3)/4
    with linear-interpolation (type-7) quartiles; best25/worst25: means of the
    ceil(N/4) smallest/largest values; gm: geometric mean of the other five.
    """
    arr = np.asarray(errors, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("stats of an empty error list")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("errors must be finite and >= 0")
    ordered = np.sort(arr)
    mean = float(arr.mean())
    median = float(np.median(arr))
    q1, q3 = (float(q) for q in np.percentile(arr, [25.0, 75.0]))
    trimean = (q1 + 2.0 * median + q3) / 4.0
    k = math.ceil(arr.size / 4)
    best25 = float(ordered[:k].mean())
    worst25 = float(ordered[-k:].mean())
    gm = float((mean * median * trimean * best25 * worst25) ** 0.2)
    return AngularErrorStats(mean, median, trimean, best25, worst25, gm)


def cross_camera_gm(per_camera: list) -> AngularErrorStats:
    """Geometric mean of each statistic across cameras (multi-camera summary
    row); distinct from the per-set ``gm`` column."""
    if not per_camera:
        raise ValueError("no per-camera statistics to aggregate")
    columns = np.array([s.as_tuple() for s in per_camera], dtype=np.float64)
    agg = np.exp(np.log(np.maximum(columns, 1e-300)).mean(axis=0))
    agg = np.where(columns.min(axis=0) == 0.0, 0.0, agg)
    return AngularErrorStats(*(float(v) for v in agg))


@dataclass
class DrawReport:
    """Per-draw, per-image, per-step angular errors plus the aggregates."""

    camera_id: str
    k_test: int
    n_test: int
    image_ids: tuple
    step_errors: np.ndarray  # (draws, images, n_test + 1), degrees

    @property
    def draws(self) -> int:
        return self.step_errors.shape[0]

    @property
    def errors(self) -> np.ndarray:
        """Final-step (fully adapted) errors, (draws, images)."""
        return self.step_errors[:, :, -1]

    @property
    def per_draw_medians(self) -> np.ndarray:
        return np.median(self.errors, axis=1)

    @property
    def headline(self) -> float:
        """Median over images, averaged over draws."""
        return float(self.per_draw_medians.mean())

    @property
    def headline_std(self) -> float:
        return float(self.per_draw_medians.std(ddof=0))

    @property
    def image_mean_errors(self) -> np.ndarray:
        """Per-image errors averaged over draws."""
        return self.errors.mean(axis=0)

    def summary(self) -> AngularErrorStats:
        return stats(self.image_mean_errors)

    def median_curve(self) -> tuple:
        """(mean, std) over draws of the per-draw median, per inner step."""
        per_draw = np.median(self.step_errors, axis=1)  # (draws, steps)
        return per_draw.mean(axis=0), per_draw.std(axis=0, ddof=0)


def evaluate(
    checkpoint: Checkpoint,
    images: dict,
    task_of,
    camera_id: str,
    k_test: int,
    n_test: int,
    draws: int,
    seed: int,
    chunk_size: int = 32,
) -> DrawReport:
    """Run the multi-draw K-shot protocol on one held-out camera.

    ``task_of`` maps an image id to its TaskSpec (images without a task are
    excluded up front, with an error if none remain). Adaptation uses the
    checkpoint's learning-rate state; errors are recorded at every inner
    step so step curves come from the same draws.
    """
    if draws < 1 or k_test < 1 or n_test < 0:
        raise ValueError("need draws >= 1, k_test >= 1, n_test >= 0")
    spec = checkpoint.spec
    test_ids = []
    pools = {}
    for image_id in sorted(images):
        if images[image_id].camera_id != camera_id:
            continue
        try:
            task = task_of(image_id)
        except KeyError:
            continue
        pool = tuple(m for m in task.member_ids if m != image_id)
        if len(pool) < k_test:
            raise ValueError(
                f"task {task.key} has {len(pool)} members besides {image_id}; "
                f"needs >= K_test = {k_test}"
            )
        test_ids.append(image_id)
        pools[image_id] = pool
    if not test_ids:
        raise ValueError(f"no testable images for camera {camera_id!r}")

    input_size = spec.input_size
    gts = {i: images[i].gt_illuminant for i in test_ids}
    query_x = {i: prepare_batch(images, [i], input_size)[0] for i in test_ids}

    step_errors = np.empty((draws, len(test_ids), n_test + 1))
    for draw in range(draws):
        rng = np.random.default_rng(np.random.SeedSequence([seed, draw]))
        # draw all support sets first so results don't depend on chunking
        supports = {}
        for image_id in test_ids:
            pool = pools[image_id]
            picks = rng.choice(len(pool), size=k_test, replace=False)
            chosen = [pool[int(p)] for p in picks]
            assert image_id not in chosen
            supports[image_id] = prepare_batch(images, chosen, input_size)
        for start in range(0, len(test_ids), chunk_size):
            chunk = test_ids[start : start + chunk_size]
            sx = np.stack([supports[i][0] for i in chunk])
            sy = np.stack([supports[i][1] for i in chunk])
            step_stacks = inner_adapt_multi(
                spec, checkpoint.params.theta, checkpoint.alpha, sx, sy, n_test, keep_steps=True
            )
            qx = np.stack([query_x[i] for i in chunk])
            for step, stacks in enumerate(step_stacks):
                preds = predict_multi(spec, stacks, qx)  # (T, 1, 3)
                for idx, image_id in enumerate(chunk):
                    step_errors[draw, start + idx, step] = prediction_error_degrees(
                        preds[idx, 0], gts[image_id]
                    )
    return DrawReport(
        camera_id=camera_id,
        k_test=k_test,
        n_test=n_test,
        image_ids=tuple(test_ids),
        step_errors=step_errors,
    )


REPORT_COLUMNS = (
    "camera",
    "variant",
    "k_test",
    "n_test",
    "mean",
    "median",
    "trimean",
    "best25",
    "worst25",
    "gm",
    "headline_median_over_draws",
)


def report_row(report: DrawReport, variant: str) -> dict:
    s = report.summary()
    row = {
        "camera": report.camera_id,
        "variant": variant,
        "k_test": report.k_test,
        "n_test": report.n_test,
        "headline_median_over_draws": report.headline,
    }
    row.update({f: getattr(s, f) for f in FIELDS})
    return row


def write_report(rows: list, path) -> None:
    """Report CSV; one row per evaluated configuration."""
    with open(path, "w", newline="") as f:
        f.write(f"# {AGGREGATION_NOTE}\n")
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key, value in out.items():
                if isinstance(value, float):
                    out[key] = repr(value)
            writer.writerow(out)


def read_report(path) -> list:
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    rows = []
    for row in reader:
        parsed = dict(row)
        for key in ("k_test", "n_test"):
            parsed[key] = int(parsed[key])
        for key in FIELDS + ("headline_median_over_draws",):
            parsed[key] = float(parsed[key])
        rows.append(parsed)
    return rows
