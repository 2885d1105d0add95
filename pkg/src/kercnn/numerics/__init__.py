"""Dense-array kernels with hand-written backward passes and a gradient tape."""
from .container import load_tensors, save_tensors
from .gradcheck import GradCheckReport, grad_check
from .layers import init_linear, init_mlp, init_msa, mlp, msa
from .ops import (add, bce, concat, gather, layer_norm, linear, matmul, mean, mul, pointwise,
                  relu, reshape, scale, sigmoid, softmax, swapaxes, take, value)
from .tape import Tape, Var

__all__ = [
    "Tape", "Var", "GradCheckReport", "grad_check", "load_tensors", "save_tensors",
    "init_linear", "init_mlp", "init_msa", "mlp", "msa", "add", "bce", "concat", "gather",
    "layer_norm", "linear", "matmul", "mean", "mul", "pointwise", "relu", "reshape",
    "scale", "sigmoid", "softmax", "swapaxes", "take", "value",
]
