"""Optimizers: AdaBound (Adam steps clipped into a bound funnel that tightens
toward a fixed SGD rate) and plain SGD as a fallback/oracle.

The per-coordinate step size is eta = clip(lr / (sqrt(v_hat) + eps), lb(t),
ub(t)) with lb(t) = final_lr * (1 - 1/(gamma*t + 1)) and ub(t) = final_lr *
(1 + 1/(gamma*t)); parameters move by -eta * m_hat followed by decoupled
weight decay. ``final_lr=None`` disables the bounds, which reproduces Adam
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class AdaBoundState:
    lr: float = 1e-4
    final_lr: float | None = None  # defaults to 0.1 * lr when unset
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    gamma: float = 1e-3
    weight_decay: float = 1e-4
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.final_lr is None:
            self.final_lr = 0.1 * self.lr


def bound_interval(state: AdaBoundState, t: int):
    """(lb, ub) of the step-size funnel at step t >= 1."""
    if not np.isfinite(state.final_lr):
        return 0.0, np.inf
    lb = state.final_lr * (1.0 - 1.0 / (state.gamma * t + 1.0))
    ub = state.final_lr * (1.0 + 1.0 / (state.gamma * t))
    return lb, ub


def adabound_step(params, grads, state: AdaBoundState, names=None):
    """Apply one update in place to a list of numpy parameter arrays."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.betas
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    lb, ub = bound_interval(state, state.t)
    assert lb <= ub
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise NumericError(f"non-finite gradient for {name}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        eta = np.clip(state.lr / (np.sqrt(v_hat) + state.eps), lb, ub)
        assert eta.min() >= lb and eta.max() <= ub
        p -= eta * m_hat
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
    return params


def sgd_step(params, grads, lr: float, names=None):
    """param <- param - lr * grad, in place."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise NumericError(f"non-finite gradient for {name}")
        p -= lr * g
    return params


class Adabound:
    """Tracks one AdaBound state over named tensors."""

    def __init__(self, named_params, lr=1e-4, final_lr=None, betas=(0.9, 0.999),
                 eps=1e-8, gamma=1e-3, weight_decay=1e-4):
        self.named_params = list(named_params)
        self.state = AdaBoundState(lr=lr, final_lr=final_lr, betas=betas, eps=eps,
                                   gamma=gamma, weight_decay=weight_decay)

    @property
    def params(self):
        return [p for _, p in self.named_params]

    def step(self):
        names = [n for n, _ in self.named_params]
        grads = [p.grad for p in self.params]
        adabound_step([p.data for p in self.params], grads, self.state, names=names)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_tensors(self):
        """Moment estimates and step counter for checkpointing."""
        if not self.state.m:
            self.state.m = [np.zeros_like(p.data) for p in self.params]
            self.state.v = [np.zeros_like(p.data) for p in self.params]
        for (name, _), m, v in zip(self.named_params, self.state.m, self.state.v):
            yield f"{name}.m", m
            yield f"{name}.v", v

    def load_state_arrays(self, arrays: dict, t: int):
        self.state.t = int(t)
        self.state.m = []
        self.state.v = []
        for name, p in self.named_params:
            m = arrays[f"{name}.m"].reshape(p.shape).astype(p.data.dtype)
            v = arrays[f"{name}.v"].reshape(p.shape).astype(p.data.dtype)
            self.state.m.append(m)
            self.state.v.append(v)


class SGD:
    def __init__(self, named_params, lr=1e-2):
        self.named_params = list(named_params)
        self.lr = lr

    def step(self):
        names = [n for n, _ in self.named_params]
        sgd_step([p.data for _, p in self.named_params],
                 [p.grad for _, p in self.named_params], self.lr, names=names)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None
