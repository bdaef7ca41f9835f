from . import ops
from .check import (
    REGISTRY,
    UnregisteredOpError,
    check_registered,
    grad_check,
    grad_check_leaves,
    numeric_grad,
    relative_error,
)
from .tensor import (
    Graph,
    GraphError,
    GradMap,
    NonFiniteError,
    Tensor,
    as_tensor,
    backward,
    backward_through_grad,
    enable_grad,
    grad,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "ops",
    "REGISTRY",
    "UnregisteredOpError",
    "check_registered",
    "grad_check",
    "grad_check_leaves",
    "numeric_grad",
    "relative_error",
    "Graph",
    "GraphError",
    "GradMap",
    "NonFiniteError",
    "Tensor",
    "as_tensor",
    "backward",
    "backward_through_grad",
    "enable_grad",
    "grad",
    "is_grad_enabled",
    "no_grad",
]
