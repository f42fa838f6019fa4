# src/optim.py
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple, Union

import numpy as np

from .tensor import Tensor

ADAM_BETAS: Tuple[float, float] = (0.9, 0.999)
ADAM_EPS: float = 1e-8

Params = Union[Mapping[str, Tensor], Sequence[Tensor]]


class OptimizerError(RuntimeError): pass


def _named(params: Params) -> Dict[str, Tensor]:
    if isinstance(params, Mapping):
        return dict(params)
    return {f"param{i}": p for i, p in enumerate(params)}


def _require_grads(named: Dict[str, Tensor]):
    missing = [name for name, p in named.items() if p.grad is None]
    if missing:
        raise OptimizerError(f"parameters without gradient (run backward first): {missing}")


def sgd_step(params: Params, lr: float):
    """
    Plain stochastic gradient descent, ``w <- w - lr * grad``, applied in place.

    All gradients are checked before any parameter changes; gradients are zeroed afterwards.

    :param params: Parameters (named mapping or sequence) with populated gradients.
    :type params: Params
    :param lr: Learning rate.
    :type lr: float
    :raises OptimizerError: If a parameter has no gradient.
    """
    named = _named(params)
    _require_grads(named)
    for p in named.values():
        p.data -= (lr * p.grad).astype(p.dtype)
        p.grad.fill(0)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    betas: Tuple[float, float] = ADAM_BETAS
    eps: float = ADAM_EPS


def adam_step(params: Params, lr: float, state: AdamState):
    """
    One bias-corrected Adam update in place; first and second moments live in ``state``.

    :param params: Parameters (named mapping or sequence) with populated gradients.
    :type params: Params
    :param lr: Learning rate.
    :type lr: float
    :param state: Moment estimates and step counter, updated in place.
    :type state: AdamState
    :raises OptimizerError: If a parameter has no gradient.
    """
    named = _named(params)
    _require_grads(named)
    beta1, beta2 = state.betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, p in named.items():
        g = p.grad
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data -= update.astype(p.dtype)
        p.grad.fill(0)


class Optimizer:
    """Binds a named parameter set to an update rule so the training loop can call ``step()``."""

    def __init__(self, params: Params, lr: float):
        if lr <= 0:
            raise OptimizerError(f"learning rate must be positive, got {lr}")
        self.params: Dict[str, Tensor] = _named(params)
        self.lr = lr

    def step(self):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        pass

    def reset_rows(self, name: str, rows):
        """Forgets the update history of the given rows of parameter ``name``; stateless rules keep none."""


class SGD(Optimizer):
    def step(self):
        sgd_step(self.params, self.lr)


class Adam(Optimizer):
    def __init__(self, params: Params, lr: float, betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS):
        super().__init__(params, lr)
        self.state = AdamState(betas=betas, eps=eps)

    def step(self):
        adam_step(self.params, self.lr, self.state)

    def reset_rows(self, name: str, rows):
        if name in self.state.m:
            self.state.m[name][rows] = 0
            self.state.v[name][rows] = 0

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Flat arrays: ``step`` plus ``m.<name>`` / ``v.<name>`` for every parameter seen so far."""
        out: Dict[str, np.ndarray] = {"step": np.asarray(self.state.step, dtype=np.float32)}
        for name in self.params:
            if name in self.state.m:
                out[f"m.{name}"] = self.state.m[name]
                out[f"v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        self.state.step = int(np.asarray(state.get("step", 0)).reshape(()))
        for name, p in self.params.items():
            if f"m.{name}" in state:
                self.state.m[name] = np.asarray(state[f"m.{name}"], dtype=p.dtype).reshape(p.shape)
                self.state.v[name] = np.asarray(state[f"v.{name}"], dtype=p.dtype).reshape(p.shape)


def build_optimizer(name: str, params: Params, lr: float) -> Optimizer:
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise OptimizerError(f"unknown optimizer '{name}' (expected 'adam' or 'sgd')")
