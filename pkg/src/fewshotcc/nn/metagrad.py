"""Gradient entry points: plain backprop and meta-gradients through inner SGD.

``meta_backward`` unrolls n inner SGD steps on a support set, evaluates the
query loss at the adapted parameters, and differentiates that scalar back to
the initial parameters and the inner learning rates. In ``exact`` mode the
sweep goes through the inner gradients themselves (second order); in
``first_order`` mode the inner updates are treated as constants.

A whole meta-batch can run as one graph (``meta_backward_multi``): episodes
are stacked on a leading task axis, the network runs grouped per task, and
the returned theta/alpha gradients are the means over tasks. Tasks are
mathematically independent, so this is exactly the average of per-episode
meta-gradients, at a fraction of the graph overhead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .network import (
    NetworkSpec,
    forward_graph,
    layout,
    lift_params,
    mean_angular_loss_graph,
    num_layers,
    param_count,
)

VARIANTS = ("maml", "metasgd", "lslr")


@dataclass
class AlphaState:
    """Inner-loop learning rates at one of three granularities.

    * ``maml``: a single scalar, fixed during meta-training;
    * ``metasgd``: one learned value per network parameter (flat vector);
    * ``lslr``: a learned (n_steps, n_layers) matrix; inner steps beyond the
      trained depth reuse the last row.
    """

    variant: str
    value: np.ndarray

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.value = np.asarray(self.value, dtype=np.float32)
        expected_ndim = {"maml": 0, "metasgd": 1, "lslr": 2}[self.variant]
        if self.value.ndim != expected_ndim:
            raise ValueError(
                f"{self.variant} alpha must be {expected_ndim}-D, got shape {self.value.shape}"
            )

    @classmethod
    def initial(cls, variant: str, spec: NetworkSpec, n_steps: int, alpha_init: float) -> "AlphaState":
        if variant == "maml":
            value = np.asarray(alpha_init, dtype=np.float32)
        elif variant == "metasgd":
            value = np.full(param_count(spec), alpha_init, dtype=np.float32)
        elif variant == "lslr":
            if n_steps < 1:
                raise ValueError("lslr needs n_steps >= 1")
            value = np.full((n_steps, num_layers(spec)), alpha_init, dtype=np.float32)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        return cls(variant=variant, value=value)

    @property
    def learns(self) -> bool:
        return self.variant in ("metasgd", "lslr")

    def step_scales(self, spec: NetworkSpec, step: int) -> list:
        """Per-parameter step sizes for inner step ``step`` (0-based).

        For lslr, steps at or beyond the trained depth reuse the final row.
        """
        infos = layout(spec)
        if self.variant == "maml":
            return [float(self.value)] * len(infos)
        if self.variant == "metasgd":
            out = []
            offset = 0
            for info in infos:
                size = int(np.prod(info.shape))
                out.append(self.value[offset : offset + size].reshape(info.shape))
                offset += size
            return out
        row = self.value[min(step, self.value.shape[0] - 1)]
        return [float(row[info.layer_id]) for info in infos]


def _split_theta(spec: NetworkSpec, theta: np.ndarray) -> list:
    theta = np.asarray(theta).reshape(-1)
    if theta.size != param_count(spec):
        raise ValueError(f"theta has {theta.size} values, spec needs {param_count(spec)}")
    arrays = []
    offset = 0
    for info in layout(spec):
        size = int(np.prod(info.shape))
        arrays.append(theta[offset : offset + size].reshape(info.shape))
        offset += size
    return arrays


def backward(spec: NetworkSpec, theta: np.ndarray, batch: np.ndarray, gts: np.ndarray):
    """Exact gradient of the mean angular loss over a batch.

    Returns ``(flat_grad, loss_radians)``; the gradient matches theta's dtype.
    """
    params = [Tensor(a, requires_grad=True) for a in _split_theta(spec, theta)]
    lifted = [ag.reshape(p, (1,) + tuple(p.data.shape)) for p in params]
    pred = forward_graph(spec, lifted, Tensor(np.asarray(batch)[None]))
    loss = ag.tmean(mean_angular_loss_graph(pred, np.asarray(gts)[None]))
    grads = ag.backward(loss, wrt=params)
    flat = np.concatenate([g.data.reshape(-1) for g in grads])
    return flat, float(loss.data)


def _alpha_leaves(alpha: AlphaState, dtype) -> list:
    """Leaf tensors for the learning rates; lslr gets one leaf per (step, layer)."""
    if alpha.variant == "lslr":
        return [
            [Tensor(np.asarray(v, dtype=dtype), requires_grad=True) for v in row]
            for row in alpha.value
        ]
    return [Tensor(alpha.value.astype(dtype), requires_grad=True)]


def _alpha_step_tensors(alpha: AlphaState, leaves, spec: NetworkSpec, step: int) -> list:
    infos = layout(spec)
    if alpha.variant == "maml":
        return [leaves[0]] * len(infos)
    if alpha.variant == "metasgd":
        flat = leaves[0]
        out = []
        offset = 0
        for info in infos:
            size = int(np.prod(info.shape))
            out.append(ag.reshape(_slice1d(flat, offset, offset + size), info.shape))
            offset += size
        return out
    row = leaves[min(step, len(leaves) - 1)]
    return [row[info.layer_id] for info in infos]


def _slice1d(t: Tensor, start: int, stop: int) -> Tensor:
    """Differentiable 1-D slice (needed to split the metasgd alpha vector)."""
    n = t.data.shape[0]

    def rule(g):
        pad_left = Tensor(np.zeros(start, dtype=t.data.dtype))
        pad_right = Tensor(np.zeros(n - stop, dtype=t.data.dtype))
        return (_concat1d([pad_left, g, pad_right]),)

    return ag._make(t.data[start:stop], (t,), rule, t.requires_grad)


def _concat1d(parts: list) -> Tensor:
    sizes = [p.data.shape[0] for p in parts]

    def rule(g):
        out = []
        offset = 0
        for p, size in zip(parts, sizes):
            out.append(_slice1d(g, offset, offset + size) if p.requires_grad else None)
            offset += size
        return tuple(out)

    track = any(p.requires_grad for p in parts)
    return ag._make(np.concatenate([p.data for p in parts]), tuple(parts), rule, track)


def meta_backward_multi(
    spec: NetworkSpec,
    theta: np.ndarray,
    alpha: AlphaState,
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    query_y: np.ndarray,
    n: int,
    mode: str = "exact",
):
    """Meta-gradients for a stack of episodes (leading axis = task).

    ``support_x`` is (T, K, H, W, C) with matching (T, K, 3) ground truths;
    likewise for the query arrays. Returns ``(grad_theta, grad_alpha,
    outer_losses)`` where the gradients are means over the T tasks and
    ``outer_losses`` holds each task's query loss in radians.
    """
    if n < 1:
        raise ValueError("meta_backward needs n >= 1 inner steps")
    if mode not in ("exact", "first_order"):
        raise ValueError(f"unknown mode {mode!r}")
    theta = np.asarray(theta).reshape(-1)
    support_x = np.asarray(support_x)
    tasks = support_x.shape[0]

    if mode == "first_order":
        if alpha.learns:
            warnings.warn(
                f"first_order meta-gradients freeze alpha for variant {alpha.variant!r}",
                stacklevel=2,
            )
        grad_sum = np.zeros_like(theta)
        losses = np.empty(tasks, dtype=np.float64)
        infos = layout(spec)
        for t in range(tasks):
            cur = theta
            for step in range(n):
                grad, _ = backward(spec, cur, support_x[t], support_y[t])
                scales = alpha.step_scales(spec, step)
                flat_scale = np.concatenate(
                    [
                        np.broadcast_to(np.asarray(s, dtype=cur.dtype), info.shape).reshape(-1)
                        for s, info in zip(scales, infos)
                    ]
                )
                cur = cur - flat_scale * grad
            grad_t, losses[t] = backward(spec, cur, query_x[t], query_y[t])
            grad_sum += grad_t
        return grad_sum / tasks, np.zeros_like(alpha.value), losses

    theta_leaves = [Tensor(a, requires_grad=True) for a in _split_theta(spec, theta)]
    cur = [
        ag.broadcast_to(ag.reshape(p, (1,) + tuple(p.data.shape)), (tasks,) + tuple(p.data.shape))
        for p in theta_leaves
    ]
    leaves = _alpha_leaves(alpha, theta.dtype)
    support_t = Tensor(support_x)
    for step in range(n):
        pred = forward_graph(spec, cur, support_t)
        task_losses = mean_angular_loss_graph(pred, support_y)
        # tasks are independent, so the gradient of the sum is each task's own
        inner_root = ag.tsum(task_losses)
        grads = ag.backward(inner_root, wrt=cur, create_graph=True)
        scales = _alpha_step_tensors(alpha, leaves, spec, step)
        cur = [p - s * g for p, g, s in zip(cur, grads, scales)]
    qpred = forward_graph(spec, cur, Tensor(np.asarray(query_x)))
    outer_vec = mean_angular_loss_graph(qpred, np.asarray(query_y))
    outer_root = ag.tmean(outer_vec)

    flat_leaves = [l for row in leaves for l in row] if alpha.variant == "lslr" else leaves
    all_grads = ag.backward(outer_root, wrt=theta_leaves + flat_leaves)
    grad_theta = np.concatenate([g.data.reshape(-1) for g in all_grads[: len(theta_leaves)]])
    alpha_grads = [g.data for g in all_grads[len(theta_leaves) :]]
    if alpha.variant == "lslr":
        n_layers = alpha.value.shape[1]
        grad_alpha = np.array(
            [
                [alpha_grads[i * n_layers + j] for j in range(n_layers)]
                for i in range(alpha.value.shape[0])
            ],
            dtype=alpha.value.dtype,
        )
    elif alpha.variant == "metasgd":
        grad_alpha = alpha_grads[0].astype(alpha.value.dtype)
    else:
        grad_alpha = np.asarray(alpha_grads[0], dtype=alpha.value.dtype)
    return grad_theta, grad_alpha, np.asarray(outer_vec.data, dtype=np.float64).reshape(tasks)


def meta_backward(
    spec: NetworkSpec,
    theta: np.ndarray,
    alpha: AlphaState,
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    query_y: np.ndarray,
    n: int,
    mode: str = "exact",
):
    """Single-episode meta-gradient; see :func:`meta_backward_multi`.

    Returns ``(grad_theta, grad_alpha, outer_loss_radians)``.
    """
    grad_theta, grad_alpha, losses = meta_backward_multi(
        spec,
        theta,
        alpha,
        np.asarray(support_x)[None],
        np.asarray(support_y)[None],
        np.asarray(query_x)[None],
        np.asarray(query_y)[None],
        n,
        mode,
    )
    return grad_theta, grad_alpha, float(losses[0])
