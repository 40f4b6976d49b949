"""Tensor engine and base learner: reverse-mode autodiff with double-backward
support, the conv/layernorm/dense layer vocabulary, angular loss, and
meta-gradients through unrolled inner SGD."""

from .autograd import Tensor, backward as graph_backward, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .metagrad import AlphaState, backward, meta_backward, meta_backward_multi
from .network import (
    NetworkParams,
    NetworkSpec,
    angular_loss,
    desk_spec,
    forward,
    forward_graph,
    init_params,
    layout,
    mean_angular_loss_graph,
    num_layers,
    paper_spec,
    param_count,
)

__all__ = [
    "AlphaState",
    "Checkpoint",
    "NetworkParams",
    "NetworkSpec",
    "Tensor",
    "angular_loss",
    "backward",
    "desk_spec",
    "forward",
    "forward_graph",
    "graph_backward",
    "init_params",
    "layout",
    "load_checkpoint",
    "mean_angular_loss_graph",
    "meta_backward",
    "meta_backward_multi",
    "no_grad",
    "num_layers",
    "paper_spec",
    "param_count",
    "save_checkpoint",
]
