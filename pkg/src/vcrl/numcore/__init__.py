from .tensor import Tensor, no_grad, backward
from .params import ParamSet, clip_grad_norm, global_grad_norm
from .mlp import LayerSpec, forward_mlp, init_mlp
from .optim import AdamState, adam_step
from .gradcheck import finite_diff_check

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "ParamSet",
    "clip_grad_norm",
    "global_grad_norm",
    "LayerSpec",
    "forward_mlp",
    "init_mlp",
    "AdamState",
    "adam_step",
    "finite_diff_check",
]
