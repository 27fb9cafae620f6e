from .tensor import Tensor, Tape, no_grad
from . import ops
from .optim import AdamState
from .linalg import sym_eig
from .gradcheck import finite_difference_check

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "ops",
    "AdamState",
    "sym_eig",
    "finite_difference_check",
]
