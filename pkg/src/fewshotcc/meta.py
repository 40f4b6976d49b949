"""Training orchestration: meta-training, the joint baseline, K-shot adaptation.

Meta-training samples a meta-batch of tasks per iteration, draws a disjoint
support/query episode from each, computes meta-gradients through n inner SGD
steps, and applies one plain outer SGD step to the shared initialization
(and, for the variants that learn them, to the inner learning rates). The
baseline trains the same architecture with ordinary SGD on pooled batches
under the same iteration and learning-rate budget.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataio import bilinear_resize, crop_resize
from .nn import autograd as ag
from .nn.autograd import Tensor
from .nn.metagrad import AlphaState, backward, meta_backward_multi, _split_theta
from .nn.network import forward_graph, layout, mean_angular_loss_graph
from .tasks import sample_episode

logger = logging.getLogger(__name__)

TRAIN_VARIANTS = ("maml", "metasgd", "lslr", "baseline")


@dataclass
class TrainConfig:
    variant: str = "lslr"
    meta_batch_size: int = 4
    k_train: int = 10
    q_train: int = 10
    n_train: int = 5
    beta: float = 0.001
    beta_decay_rate: float = 0.96
    beta_decay_every: int = 0  # 0 -> iterations // 25
    alpha_init: float = 0.001
    iterations: int = 2000
    meta_grad: str = "exact"
    seed: int = 0
    input_size: int = 16
    spec: str = "desk"
    held_out_camera: str = ""

    def __post_init__(self):
        if self.variant not in TRAIN_VARIANTS:
            raise ValueError(f"variant must be one of {TRAIN_VARIANTS}, got {self.variant!r}")
        if self.meta_grad not in ("exact", "first_order"):
            raise ValueError(f"meta_grad must be exact or first_order, got {self.meta_grad!r}")
        if self.spec not in ("desk", "paper"):
            raise ValueError(f"spec must be desk or paper, got {self.spec!r}")
        if min(self.meta_batch_size, self.k_train, self.q_train, self.iterations) < 1:
            raise ValueError("meta_batch_size, k_train, q_train, iterations must be >= 1")
        if self.n_train < 0:
            raise ValueError("n_train must be >= 0")

    def network_spec(self) -> nn.NetworkSpec:
        if self.spec == "paper":
            return nn.paper_spec(self.input_size)
        return nn.desk_spec(self.input_size)

    def beta_at(self, iteration: int) -> float:
        every = self.beta_decay_every or max(1, self.iterations // 25)
        return self.beta * self.beta_decay_rate ** (iteration // every)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def prepare_batch(images: dict, ids, input_size: int) -> tuple:
    """Deterministic inference-time batch: full images resized to the input.

    Returns float32 arrays (N, s, s, 3) and (N, 3).
    """
    xs = np.stack([bilinear_resize(images[i].pixels, input_size) for i in ids])
    ys = np.stack([images[i].gt_illuminant.as_array() for i in ids]).astype(np.float32)
    return xs.astype(np.float32), ys


def _augmented_batch(images: dict, ids, input_size: int, rng) -> tuple:
    """Training-time batch: random crop/resize augmentation per image."""
    xs = np.stack([crop_resize(images[i], input_size, rng) for i in ids])
    ys = np.stack([images[i].gt_illuminant.as_array() for i in ids]).astype(np.float32)
    return xs.astype(np.float32), ys


def inner_adapt(
    spec: nn.NetworkSpec,
    theta: np.ndarray,
    alpha: AlphaState,
    support_x: np.ndarray,
    support_y: np.ndarray,
    n: int,
    record_alpha: list | None = None,
) -> np.ndarray:
    """n SGD steps on the support loss; step i uses the variant's alpha_i.

    ``record_alpha`` (if given) collects the per-parameter step sizes used at
    each step, which makes the learning-rate extension rule observable.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    theta = np.asarray(theta).reshape(-1).copy()
    infos = layout(spec)
    for step in range(n):
        grad, _ = backward(spec, theta, support_x, support_y)
        scales = alpha.step_scales(spec, step)
        if record_alpha is not None:
            record_alpha.append(scales)
        flat_scale = np.concatenate(
            [
                np.broadcast_to(np.asarray(s, dtype=theta.dtype), info.shape).reshape(-1)
                for s, info in zip(scales, infos)
            ]
        )
        theta = theta - flat_scale * grad
    return theta


def inner_adapt_multi(
    spec: nn.NetworkSpec,
    theta: np.ndarray,
    alpha: AlphaState,
    support_x: np.ndarray,
    support_y: np.ndarray,
    n: int,
    keep_steps: bool = False,
):
    """Adapt one shared initialization against T independent support sets.

    ``support_x`` is (T, K, s, s, 3). Returns the per-task adapted parameter
    arrays (a list with one (T,) + shape array per parameter); with
    ``keep_steps`` a list of such lists, one per step 0..n.
    """
    tasks = support_x.shape[0]
    cur = [
        np.repeat(a[None].astype(np.float32), tasks, axis=0)
        for a in _split_theta(spec, np.asarray(theta, dtype=np.float32))
    ]
    steps = [[a.copy() for a in cur]] if keep_steps else None
    support_t = Tensor(support_x)
    for step in range(n):
        params = [Tensor(a, requires_grad=True) for a in cur]
        pred = forward_graph(spec, params, support_t)
        # tasks are independent: the sum's gradient is each task's own
        root = ag.tsum(mean_angular_loss_graph(pred, support_y))
        grads = ag.backward(root, wrt=params)
        scales = alpha.step_scales(spec, step)
        cur = [
            a - np.asarray(s, dtype=a.dtype) * g.data
            for a, s, g in zip(cur, scales, grads)
        ]
        if keep_steps:
            steps.append([a.copy() for a in cur])
    return steps if keep_steps else cur


def predict_multi(spec: nn.NetworkSpec, param_stacks: list, batch: np.ndarray) -> np.ndarray:
    """Forward T per-task parameter stacks over a (T, N, s, s, 3) batch."""
    params = [Tensor(a) for a in param_stacks]
    return forward_graph(spec, params, Tensor(batch)).data


def meta_step(
    spec: nn.NetworkSpec,
    theta: np.ndarray,
    alpha: AlphaState,
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    query_y: np.ndarray,
    n: int,
    beta: float,
    mode: str = "exact",
    learn_alpha: bool = True,
):
    """One outer update from a stacked meta-batch of episodes.

    theta <- theta - beta * mean(grad_theta); alpha likewise when the variant
    learns it and the meta-gradient mode is exact. Returns the new theta, the
    new AlphaState, and the per-task outer losses (radians).
    """
    if n == 0:
        # no inner loop: the outer loss is the plain query loss
        grads = []
        losses = np.empty(support_x.shape[0])
        for t in range(query_x.shape[0]):
            g, losses[t] = backward(spec, theta, query_x[t], query_y[t])
            grads.append(g)
        grad_theta = np.mean(grads, axis=0)
        grad_alpha = np.zeros_like(alpha.value)
    else:
        grad_theta, grad_alpha, losses = meta_backward_multi(
            spec, theta, alpha, support_x, support_y, query_x, query_y, n, mode
        )
    new_theta = (theta - beta * grad_theta).astype(theta.dtype)
    new_alpha = alpha
    if learn_alpha and alpha.learns and mode == "exact":
        new_alpha = AlphaState(alpha.variant, alpha.value - beta * grad_alpha)
    return new_theta, new_alpha, losses


@dataclass
class TrainResult:
    checkpoint: nn.Checkpoint
    log_rows: list  # (iteration, beta, mean_outer_loss_degrees)
    sampled_cameras: set = field(default_factory=set)


def _training_tasks(config: TrainConfig, tasks: list) -> list:
    usable = [
        t
        for t in tasks
        if t.camera_id != config.held_out_camera
        and len(t.member_ids) >= config.k_train + config.q_train
    ]
    if not usable:
        raise ValueError("no usable training tasks after the leave-one-out filter")
    cameras = {t.camera_id for t in usable}
    if len(cameras) < 2:
        raise ValueError(f"meta-training needs >= 2 training cameras, got {sorted(cameras)}")
    return usable


def meta_train(config: TrainConfig, images: dict, tasks: list) -> TrainResult:
    """Meta-train over the task distribution, excluding the held-out camera."""
    if config.variant == "baseline":
        raise ValueError("use train_baseline for the baseline variant")
    spec = config.network_spec()
    usable = _training_tasks(config, tasks)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    theta = nn.init_params(spec, config.seed).theta
    alpha = AlphaState.initial(config.variant, spec, max(config.n_train, 1), config.alpha_init)

    result = TrainResult(checkpoint=None, log_rows=[])
    for iteration in range(config.iterations):
        beta = config.beta_at(iteration)
        picks = rng.integers(0, len(usable), size=config.meta_batch_size)
        sup_x, sup_y, qry_x, qry_y = [], [], [], []
        for pick in picks:
            task = usable[int(pick)]
            result.sampled_cameras.add(task.camera_id)
            episode = sample_episode(task, config.k_train, config.q_train, rng)
            sx, sy = _augmented_batch(images, episode.support_ids, config.input_size, rng)
            qx, qy = _augmented_batch(images, episode.query_ids, config.input_size, rng)
            sup_x.append(sx)
            sup_y.append(sy)
            qry_x.append(qx)
            qry_y.append(qy)
        theta, alpha, losses = meta_step(
            spec,
            theta,
            alpha,
            np.stack(sup_x),
            np.stack(sup_y),
            np.stack(qry_x),
            np.stack(qry_y),
            config.n_train,
            beta,
            mode=config.meta_grad,
        )
        result.log_rows.append((iteration, beta, math.degrees(float(np.mean(losses)))))
        if (iteration + 1) % max(1, config.iterations // 10) == 0:
            logger.info(
                "iteration %d/%d: outer loss %.3f deg",
                iteration + 1, config.iterations, result.log_rows[-1][2],
            )

    assert config.held_out_camera not in result.sampled_cameras
    result.checkpoint = nn.Checkpoint(
        params=nn.NetworkParams(spec=spec, theta=theta, seed=config.seed),
        alpha=alpha,
        config=config.to_dict(),
        iterations=config.iterations,
    )
    return result


def train_baseline(config: TrainConfig, images: dict) -> TrainResult:
    """Joint training: plain SGD on batches pooled over training cameras.

    Uses the same iteration count and beta schedule as meta-training; the
    batch size matches meta-training's per-iteration image count
    (meta_batch_size * (k_train + q_train)) so the data budget is equal.
    """
    spec = config.network_spec()
    pool = sorted(
        i for i, img in images.items() if img.camera_id != config.held_out_camera
    )
    if not pool:
        raise ValueError("no training images after the leave-one-out filter")
    cameras = {images[i].camera_id for i in pool}
    if len(cameras) < 2:
        raise ValueError(f"baseline training needs >= 2 training cameras, got {sorted(cameras)}")
    batch_size = config.meta_batch_size * (config.k_train + config.q_train)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    theta = nn.init_params(spec, config.seed).theta

    result = TrainResult(checkpoint=None, log_rows=[])
    for iteration in range(config.iterations):
        beta = config.beta_at(iteration)
        picks = rng.choice(len(pool), size=min(batch_size, len(pool)), replace=False)
        ids = [pool[int(p)] for p in picks]
        result.sampled_cameras.update(images[i].camera_id for i in ids)
        bx, by = _augmented_batch(images, ids, config.input_size, rng)
        grad, loss = backward(spec, theta, bx, by)
        theta = (theta - beta * grad).astype(np.float32)
        result.log_rows.append((iteration, beta, math.degrees(loss)))

    result.checkpoint = nn.Checkpoint(
        params=nn.NetworkParams(spec=spec, theta=theta, seed=config.seed),
        alpha=AlphaState("maml", np.asarray(config.alpha_init, dtype=np.float32)),
        config=config.to_dict(),
        iterations=config.iterations,
    )
    return result


@dataclass
class Predictor:
    """Adapted parameters bound to a spec; callable on image batches."""

    spec: nn.NetworkSpec
    theta: np.ndarray

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return nn.forward(self.spec, _split_theta(self.spec, self.theta), batch)


def adapt(
    checkpoint: nn.Checkpoint,
    support_x: np.ndarray,
    support_y: np.ndarray,
    n_test: int,
    source_tasks=None,
) -> Predictor:
    """K-shot test-time adaptation of a checkpoint.

    Runs n_test inner steps with the checkpoint's learning-rate state (the
    per-step rates extend past the trained depth by reusing the last step's
    values). n_test=0 returns the checkpoint's predictor unchanged. If
    ``source_tasks`` is given (one task key per support image), mixed-task
    support sets are rejected.
    """
    if source_tasks is not None:
        distinct = set(source_tasks)
        if len(distinct) > 1:
            raise ValueError(f"support images come from {len(distinct)} tasks; expected one")
    theta = inner_adapt(
        checkpoint.spec, checkpoint.params.theta, checkpoint.alpha, support_x, support_y, n_test
    )
    return Predictor(spec=checkpoint.spec, theta=theta.astype(np.float32))


def write_train_log(rows, path) -> None:
    """CSV log: iteration, beta, mean outer loss in degrees."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "beta", "mean_outer_loss_degrees"])
        for iteration, beta, loss_deg in rows:
            writer.writerow([iteration, repr(float(beta)), repr(float(loss_deg))])


def load_train_log(path) -> list:
    rows = []
    with open(path) as f:
        reader = csv.DictReader(f)
        for row in reader:
            rows.append(
                (int(row["iteration"]), float(row["beta"]), float(row["mean_outer_loss_degrees"]))
            )
    return rows
