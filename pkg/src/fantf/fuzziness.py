"""Membership functions and the additive fuzziness term of fuzzy attention.

The default mode scales fresh Gaussian noise by a learnable scalar ``delta``
and adds it to the attention scores during training. The membership modes
(Gaussian, scaled sigmoid, learnable sigmoid, uniform) are ablation options:
they map each raw score elementwise through the membership function and the
result is added to the scores. That mapping is a local construction, not part
of the default model.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError
from .rng import RngState
from .tensor import Tensor, _result, _stable_sigmoid, as_tensor, div, exp, scale, sigmoid, square, sub


class FuzzTag(str, enum.Enum):
    LEARNABLE_DELTA_GAUSSIAN = "learnable_delta_gaussian"
    GAUSSIAN_MEMBERSHIP = "gaussian_membership"
    SCALED_SIGMOID = "scaled_sigmoid"
    LEARNABLE_SIGMOID = "learnable_sigmoid"
    UNIFORM = "uniform"
    NONE = "none"


@dataclass(frozen=True)
class FuzzinessMode:
    """Fuzziness source plus its parameters.

    Only the fields relevant to ``tag`` are read. ``delta``, ``theta1`` and
    ``theta2`` are initial values; the attention layer owns the learnable
    tensors built from them.
    """

    tag: FuzzTag = FuzzTag.LEARNABLE_DELTA_GAUSSIAN
    delta: float = 0.1
    sigma: float = 1.0
    c: float = 0.0
    scale: float = 1.0
    slope: float = 1.0
    theta1: float = 0.0
    theta2: float = 1.0
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tag", FuzzTag(self.tag))
        self.validate()

    def validate(self):
        tag = self.tag
        if tag in (FuzzTag.LEARNABLE_DELTA_GAUSSIAN, FuzzTag.GAUSSIAN_MEMBERSHIP) and not self.sigma > 0:
            raise ParameterError(f"{tag.value}: sigma must be > 0, got {self.sigma}")
        if tag is FuzzTag.SCALED_SIGMOID and not 0.0 <= self.scale <= 1.0:
            raise ParameterError(f"scaled_sigmoid: scale must lie in [0, 1], got {self.scale}")
        if tag is FuzzTag.LEARNABLE_SIGMOID and self.theta2 == 0:
            raise ParameterError("learnable_sigmoid: theta2 must be nonzero")
        if tag is FuzzTag.UNIFORM and not self.a < self.b:
            raise ParameterError(f"uniform: need a < b, got a={self.a}, b={self.b}")

    def replace(self, **changes) -> "FuzzinessMode":
        fields = asdict(self)
        fields.update(changes)
        return FuzzinessMode(**fields)


def gaussian_membership(x, c: float, sigma: float):
    if not sigma > 0:
        raise ParameterError(f"gaussian_membership: sigma must be > 0, got {sigma}")
    if isinstance(x, Tensor):
        return exp(scale(square(sub(x, c)), -0.5 / (sigma * sigma)))
    out = np.exp(-((np.asarray(x, dtype=np.float64) - c) ** 2) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def scaled_sigmoid_membership(x, scale_: float, slope: float):
    if isinstance(x, Tensor):
        return scale(sigmoid(scale(x, slope)), scale_)
    z = np.asarray(x, dtype=np.float64) * slope
    out = scale_ * _stable_sigmoid(np.atleast_1d(z)).reshape(z.shape)
    return float(out) if out.ndim == 0 else out


def learnable_sigmoid_membership(x, theta1, theta2):
    """Sigmoid of ``(x - theta1) / theta2``.

    Any argument may be a Tensor, in which case the result is recorded on the
    tape and gradients reach ``theta1`` and ``theta2``.
    """
    t2 = theta2.data if isinstance(theta2, Tensor) else theta2
    if np.any(np.asarray(t2) == 0):
        raise ParameterError("learnable_sigmoid: theta2 must be nonzero")
    if any(isinstance(v, Tensor) for v in (x, theta1, theta2)):
        return sigmoid(div(sub(x, theta1), theta2))
    z = (np.asarray(x, dtype=np.float64) - theta1) / theta2
    out = _stable_sigmoid(np.atleast_1d(z)).reshape(np.shape(z))
    return float(out) if out.ndim == 0 else out


def uniform_pdf(x, a: float, b: float):
    if not a < b:
        raise ParameterError(f"uniform_pdf: need a < b, got a={a}, b={b}")
    xs = np.asarray(x, dtype=np.float64)
    out = np.where((xs >= a) & (xs <= b), 1.0 / (b - a), 0.0)
    return float(out) if out.ndim == 0 else out


def _delta_grad(noise: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.sum(noise * upstream).reshape(1)


def scaled_noise(delta: Tensor, noise: np.ndarray) -> Tensor:
    """``delta * noise`` where the noise is a constant for differentiation."""
    noise = np.asarray(noise, dtype=np.float64)
    d = float(delta.data.reshape(-1)[0])
    return _result(d * noise, (delta,), lambda g: (_delta_grad(noise, g).reshape(delta.shape),))


def fuzz_term(mode: FuzzinessMode, shape, rng: RngState | None, training: bool,
              scores: Tensor | None = None, params: dict | None = None) -> Tensor:
    """The additive fuzziness term for a score tensor of ``shape``.

    ``params`` holds the learnable tensors (``delta`` or ``theta1``/``theta2``)
    owned by the calling layer; when absent, scalars from ``mode`` are used as
    constants. Membership modes require the raw ``scores``.
    """
    shape = tuple(shape)
    params = params or {}
    tag = mode.tag
    if tag is FuzzTag.NONE:
        return Tensor(np.zeros(shape))
    if tag is FuzzTag.LEARNABLE_DELTA_GAUSSIAN:
        if not training:
            return Tensor(np.zeros(shape))
        if rng is None:
            raise ParameterError("fuzz_term: training-mode noise needs an RngState")
        delta = params.get("delta")
        if delta is None:
            delta = Tensor([mode.delta])
        return scaled_noise(delta, rng.normal(shape, 0.0, mode.sigma))
    if scores is None:
        raise ParameterError(f"fuzz_term: mode {tag.value} maps scores and needs them")
    scores = as_tensor(scores)
    if scores.shape != shape:
        raise ParameterError(f"fuzz_term: scores shape {scores.shape} != {shape}")
    if tag is FuzzTag.GAUSSIAN_MEMBERSHIP:
        return gaussian_membership(scores, mode.c, mode.sigma)
    if tag is FuzzTag.SCALED_SIGMOID:
        return scaled_sigmoid_membership(scores, mode.scale, mode.slope)
    if tag is FuzzTag.LEARNABLE_SIGMOID:
        t1 = params.get("theta1", mode.theta1)
        t2 = params.get("theta2", mode.theta2)
        return learnable_sigmoid_membership(scores, t1, t2)
    return Tensor(uniform_pdf(scores.data, mode.a, mode.b))
