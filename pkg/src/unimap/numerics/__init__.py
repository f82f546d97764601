from . import autodiff, utns
from .autodiff import Tape, Var
from .rng import Rng, randn
from .tensor import DTYPE, as_tensor, check_finite, matmul, quantile, softmax_rows


def backward(tape: Tape, loss: Var) -> dict:
    return tape.backward(loss)


__all__ = [
    "DTYPE",
    "Rng",
    "Tape",
    "Var",
    "as_tensor",
    "autodiff",
    "backward",
    "check_finite",
    "matmul",
    "quantile",
    "randn",
    "softmax_rows",
    "utns",
]
