"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError
from .tensor import Tensor, backward, get_tape, no_grad


def _scalar(out: Tensor) -> float:
    value = out.item()
    if not np.isfinite(value):
        raise NumericError("grad_check: non-finite function value")
    return value


def grad_check_many(f: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and closes over ``tensors``, which must be leaves
    with ``requires_grad``. Each coordinate is perturbed in place and restored.
    Error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-8 < h < 1e-2:
        raise ParameterError(f"grad_check: step h={h} outside (1e-8, 1e-2)", module="tensor_core")
    get_tape().clear()
    for t in tensors:
        t.grad = None
    backward(f())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    if not all(np.all(np.isfinite(a)) for a in analytic):
        raise NumericError("grad_check: non-finite analytic gradient")
    worst = 0.0
    with no_grad():
        for t, ana in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                hi, lo = orig + h, orig - h
                flat[i] = hi
                up = _scalar(f())
                flat[i] = lo
                down = _scalar(f())
                flat[i] = orig
                # divide by the step actually taken, not the nominal 2h
                numeric = (up - down) / (hi - lo)
                err = abs(ana_flat[i] - numeric) / max(1.0, abs(ana_flat[i]))
                worst = max(worst, err)
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Gradient check of a scalar function of a single tensor ``x``."""
    leaf = Tensor(x.data, requires_grad=True)
    return grad_check_many(lambda: f(leaf), [leaf], h)
