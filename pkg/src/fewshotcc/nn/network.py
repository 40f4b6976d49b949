"""Base-learner definition: layer vocabulary, parameters, forward pass, loss.

A network is a flat sequence of layers from a small vocabulary (3x3 conv,
layernorm, relu, global average pool, dense). Parameters live in one flat
float32 vector; the layout table maps slices of it to layer arrays.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

#: Predictions with norm at or below this are treated as degenerate by the loss.
LOSS_EPS = 1e-8

# Cosine clamp margin for the graph loss; keeps the arccos derivative finite
# at collinearity, where the exact subgradient is zero anyway.
_COS_MARGIN = 1e-7

_LN_EPS = 1e-5


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description. ``layers`` entries are tuples:
    ("conv", out_channels) | ("layernorm",) | ("relu",) | ("avgpool",) |
    ("dense", out_features)."""

    input_size: int
    layers: tuple
    in_channels: int = 3

    def __post_init__(self):
        if self.input_size < 1:
            raise ValueError("input_size must be >= 1")
        _ = layout(self)  # validates layer chaining

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "layers": [list(l) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_size=int(d["input_size"]),
            in_channels=int(d["in_channels"]),
            layers=tuple(tuple(l) for l in d["layers"]),
        )


def desk_spec(input_size: int = 16) -> NetworkSpec:
    """Small architecture for fast experiments on synthetic data."""
    return NetworkSpec(
        input_size=input_size,
        layers=(
            ("conv", 16),
            ("layernorm",),
            ("relu",),
            ("conv", 16),
            ("layernorm",),
            ("relu",),
            ("avgpool",),
            ("dense", 16),
            ("relu",),
            ("dense", 3),
        ),
    )


def paper_spec(input_size: int = 128) -> NetworkSpec:
    """Full-scale architecture: four 3x3x64 conv layers (each layer-normalized),
    global average pooling and two dense layers (64x64, 64x3)."""
    conv_block = (("conv", 64), ("layernorm",), ("relu",))
    return NetworkSpec(
        input_size=input_size,
        layers=conv_block * 4 + (("avgpool",), ("dense", 64), ("relu",), ("dense", 3)),
    )


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple
    layer_id: int  # index among parameterized layers (conv/layernorm/dense)
    fan_in: int  # 0 for deterministically initialized params (LN affine)
    is_bias: bool


@functools.lru_cache(maxsize=None)
def layout(spec: NetworkSpec) -> tuple:
    """Parameter layout for a spec; validates that layer shapes chain."""
    infos = []
    channels = spec.in_channels
    features = None  # set after avgpool
    layer_id = 0
    for i, entry in enumerate(spec.layers):
        kind = entry[0]
        if kind == "conv":
            if features is not None:
                raise ValueError("conv after avgpool is not supported")
            out = int(entry[1])
            infos.append(ParamInfo(f"conv{i}.w", (3, 3, channels, out), layer_id, 9 * channels, False))
            infos.append(ParamInfo(f"conv{i}.b", (out,), layer_id, 0, True))
            channels = out
            layer_id += 1
        elif kind == "layernorm":
            if features is not None:
                raise ValueError("layernorm after avgpool is not supported")
            infos.append(ParamInfo(f"ln{i}.gamma", (channels,), layer_id, 0, False))
            infos.append(ParamInfo(f"ln{i}.beta", (channels,), layer_id, 0, True))
            layer_id += 1
        elif kind == "relu":
            pass
        elif kind == "avgpool":
            if features is not None:
                raise ValueError("duplicate avgpool")
            features = channels
        elif kind == "dense":
            if features is None:
                raise ValueError("dense requires a preceding avgpool")
            out = int(entry[1])
            infos.append(ParamInfo(f"dense{i}.w", (features, out), layer_id, features, False))
            infos.append(ParamInfo(f"dense{i}.b", (out,), layer_id, 0, True))
            features = out
            layer_id += 1
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    if features != 3:
        raise ValueError(f"network must end with a 3-dimensional output, got {features}")
    return tuple(infos)


def num_layers(spec: NetworkSpec) -> int:
    """Number of parameterized layers (the per-layer learning-rate axis)."""
    infos = layout(spec)
    return infos[-1].layer_id + 1 if infos else 0


def param_count(spec: NetworkSpec) -> int:
    return sum(int(np.prod(p.shape)) for p in layout(spec))


@dataclass
class NetworkParams:
    """Flat parameter vector plus the spec that defines its layout."""

    spec: NetworkSpec
    theta: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        expected = param_count(self.spec)
        self.theta = np.asarray(self.theta, dtype=np.float32).reshape(-1)
        if self.theta.size != expected:
            raise ValueError(f"theta has {self.theta.size} values, spec needs {expected}")

    def arrays(self) -> list:
        """Per-parameter views into the flat vector (flatten/unflatten bijection)."""
        out = []
        offset = 0
        for info in layout(self.spec):
            size = int(np.prod(info.shape))
            out.append(self.theta[offset : offset + size].reshape(info.shape))
            offset += size
        return out

    @classmethod
    def from_arrays(cls, spec: NetworkSpec, arrays, seed=None) -> "NetworkParams":
        flat = np.concatenate([np.asarray(a, dtype=np.float32).reshape(-1) for a in arrays])
        return cls(spec=spec, theta=flat, seed=seed)


def flatten_arrays(arrays) -> np.ndarray:
    return np.concatenate([np.asarray(a).reshape(-1) for a in arrays])


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """He-uniform fan-in init for conv/dense weights; zero biases; unit layernorm."""
    rng = np.random.default_rng(seed)
    arrays = []
    for info in layout(spec):
        if info.is_bias:
            arrays.append(np.zeros(info.shape, dtype=np.float32))
        elif info.fan_in == 0:
            arrays.append(np.ones(info.shape, dtype=np.float32))
        else:
            limit = math.sqrt(6.0 / info.fan_in)
            arrays.append(rng.uniform(-limit, limit, size=info.shape).astype(np.float32))
    params = NetworkParams.from_arrays(spec, arrays, seed=seed)
    return params


def forward_graph(spec: NetworkSpec, params: list, x: Tensor) -> Tensor:
    """Build the forward computation graph.

    ``x`` is a (T, N, H, W, C) tensor and ``params`` holds one tensor per
    :func:`layout` entry, each shaped (T,) + entry.shape. The leading task
    axis lets a whole meta-batch (with per-task adapted weights) run as one
    graph; T=1 is an ordinary forward pass.
    """
    i = 0
    infos = layout(spec)
    t = x.data.shape[0]

    def take():
        nonlocal i
        tens = params[i]
        if tuple(tens.data.shape) != (t,) + infos[i].shape:
            raise ValueError(
                f"param {infos[i].name}: expected {(t,) + infos[i].shape}, got {tens.data.shape}"
            )
        i += 1
        return tens

    h = x
    for entry in spec.layers:
        kind = entry[0]
        if kind == "conv":
            w, b = take(), take()
            h = ag.conv3x3(h, w) + ag.reshape(b, (t, 1, 1, 1, -1))
        elif kind == "layernorm":
            gamma, beta = take(), take()
            mu = ag.tmean(h, axis=(2, 3, 4), keepdims=True)
            d = h - mu
            var = ag.tmean(d * d, axis=(2, 3, 4), keepdims=True)
            inv = (var + _LN_EPS) ** -0.5
            # fold the affine scale into the (small) inverse-sigma factor
            # before touching the full activation tensor
            scale = inv * ag.reshape(gamma, (t, 1, 1, 1, -1))
            h = d * scale + ag.reshape(beta, (t, 1, 1, 1, -1))
        elif kind == "relu":
            h = ag.relu(h)
        elif kind == "avgpool":
            h = ag.tmean(h, axis=(2, 3))
        elif kind == "dense":
            w, b = take(), take()
            h = ag.bmm(h, w) + ag.reshape(b, (t, 1, -1))
    return h


def lift_params(spec: NetworkSpec, arrays, tasks: int = 1) -> list:
    """Constant parameter tensors broadcast to a task axis of length ``tasks``."""
    return [
        Tensor(np.broadcast_to(np.asarray(a)[None], (tasks,) + info.shape))
        for a, info in zip(arrays, layout(spec))
    ]


def forward(spec: NetworkSpec, params, batch: np.ndarray) -> np.ndarray:
    """Plain (graph-free) forward pass; returns (N, 3) predictions."""
    arrays = params.arrays() if isinstance(params, NetworkParams) else list(params)
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != (spec.input_size, spec.input_size, spec.in_channels):
        raise ValueError(
            f"batch shape {batch.shape} does not match spec input "
            f"(N, {spec.input_size}, {spec.input_size}, {spec.in_channels})"
        )
    out = forward_graph(spec, lift_params(spec, arrays), Tensor(batch[None]))
    return out.data[0]


def angular_loss(pred, gt, eps: float = LOSS_EPS):
    """Angular-distance loss for one prediction, with its analytic gradient.

    Returns ``(loss_radians, grad_wrt_pred, degenerate)``. The gradient is
    orthogonal to ``pred`` (the loss ignores prediction scale). Predictions
    with norm <= eps get the defined fallback: loss pi/2, zero gradient,
    degenerate flag set. Exactly (anti)collinear pairs return the
    subgradient 0; the atan2 form keeps the loss value exact there.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(3)
    g = np.asarray(gt.as_array() if hasattr(gt, "as_array") else gt, dtype=np.float64).reshape(3)
    pnorm = float(np.linalg.norm(p))
    if pnorm <= eps:
        return math.pi / 2.0, np.zeros(3), True
    ghat = g / np.linalg.norm(g)
    phat = p / pnorm
    c = float(np.clip(phat @ ghat, -1.0, 1.0))
    sin = float(np.linalg.norm(np.cross(phat, ghat)))
    loss = math.atan2(sin, c)
    if sin < 1e-12:
        return loss, np.zeros(3), False  # at the cone apex; subgradient 0
    grad = -(ghat - c * phat) / (sin * pnorm)
    return loss, grad, False


def mean_angular_loss_graph(pred: Tensor, gts: np.ndarray, eps: float = LOSS_EPS) -> Tensor:
    """Mean angular loss over the sample axis, as a differentiable graph node.

    ``pred`` is (..., N, 3); ``gts`` is a constant array of the same shape
    with positive-norm rows. Returns a (...)-shaped tensor: one mean loss
    per leading index (scalar for a plain (N, 3) batch, one value per task
    for (T, N, 3)). Degenerate rows (prediction norm <= eps) contribute pi/2
    with zero gradient.
    """
    dtype = pred.dtype
    gts = np.asarray(gts, dtype=dtype)
    gtn = gts / np.linalg.norm(gts, axis=-1, keepdims=True)

    dot = ag.tsum(pred * Tensor(gtn), axis=-1)
    sq = ag.tsum(pred * pred, axis=-1)
    valid = (sq.data > eps * eps).astype(dtype)
    # Shift degenerate squared norms to ~1 so the sqrt/div gradients stay
    # finite, then mask the cosine to 0 there: arccos(0) = pi/2 with no
    # gradient into pred.
    norm = (sq + Tensor(1.0 - valid)) ** 0.5
    cos = (dot / norm) * Tensor(valid)
    cos = ag.clip(cos, -1.0 + _COS_MARGIN, 1.0 - _COS_MARGIN)
    return ag.tmean(ag.arccos(cos), axis=-1)
