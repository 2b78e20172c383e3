"""
Gradient-based optimizers operating in place on a ParameterSet.
"""

import logging
import math

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import ParameterSet

logger = logging.getLogger(__name__)


class Optimizer:
    """Base optimizer. ``step`` takes gradients keyed by parameter name."""

    def __init__(self, params: ParameterSet, lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, grad in grads.items():
            tensor = self.params[name]
            if grad.shape != tensor.shape:
                raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter has {tensor.shape}")
            # a zero gradient leaves the parameter and its optimizer state untouched
            if not np.any(grad):
                continue
            self._update(name, tensor.data, grad)

    def _update(self, name: str, value: np.ndarray, grad: np.ndarray) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {}


class SGD(Optimizer):
    """Plain stochastic gradient descent."""

    def _update(self, name, value, grad):
        value -= self.lr * grad


class Adam(Optimizer):
    """Adam with bias correction; moments persist across steps."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def _update(self, name, value, grad):
        m = self._m.get(name)
        if m is None:
            m = np.zeros_like(value)
            self._v[name] = np.zeros_like(value)
            self._t[name] = 0
        v = self._v[name]
        self._t[name] += 1
        t = self._t[name]

        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self._m[name] = m
        self._v[name] = v

        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"steps": dict(self._t)}


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``max_norm <= 0`` disables clipping.
    """
    total = math.sqrt(float(np.sum([np.sum(g * g) for g in grads.values()]))) if grads else 0.0
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = grads[name] * scale
        logger.debug("clipped gradient norm %.4f to %.4f", total, max_norm)
    return total


def build_optimizer(kind: str, params: ParameterSet, lr: float) -> Optimizer:
    """Create an optimizer by name (``adam`` or ``sgd``)."""
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ConfigError(f"unknown optimizer {kind!r}; expected 'adam' or 'sgd'")
