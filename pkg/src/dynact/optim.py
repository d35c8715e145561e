"""Optimizers, learning-rate schedule, and gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import ConfigError, NumericsError, Parameter

OPTIMIZER_KINDS = ("sgd", "adam", "rmsprop")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 0.001
    weight_decay: float = 5e-9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0       # sgd only
    rms_alpha: float = 0.99     # rmsprop smoothing
    scheduler: str = "none"     # none | step
    step_size: int = 10
    gamma: float = 0.1
    clip_norm: Optional[float] = 1.0

    def validate(self) -> "OptimizerConfig":
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"optimizer kind must be one of {OPTIMIZER_KINDS}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.scheduler not in ("none", "step"):
            raise ConfigError(f"scheduler must be 'none' or 'step', got '{self.scheduler}'")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive or null, got {self.clip_norm}")
        return self


def effective_lr(config: OptimizerConfig, epoch: int) -> float:
    """StepLR schedule: lr * gamma^floor(epoch / step_size)."""
    if config.scheduler == "step":
        return config.lr * config.gamma ** (epoch // config.step_size)
    return config.lr


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm; aborts on non-finite gradients per the
    NaN policy.
    """
    total = 0.0
    for p in params:
        total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericsError("gradient norm is non-finite")
    if norm > max_norm:
        s = max_norm / norm
        for p in params:
            p.grad *= s
    return norm


class Optimizer:
    def __init__(self, params: Sequence[Parameter], config: OptimizerConfig):
        self.params = [p for p in params if p.trainable]
        self.config = config.validate()
        self.lr = config.lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _decay(self) -> None:
        wd = self.config.weight_decay
        if wd == 0.0:
            return
        shrink = 1.0 - self.lr * wd
        for p in self.params:
            if not p.weight_decay_exempt:
                p.data *= shrink

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, config):
        super().__init__(params, config)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self._decay()
        mu = self.config.momentum
        for p, v in zip(self.params, self.velocity):
            if mu:
                v *= mu
                v += p.grad
                p.data -= self.lr * v
            else:
                p.data -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, config):
        super().__init__(params, config)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self._decay()
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * p.grad
            v *= c.beta2
            v += (1.0 - c.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


class RMSProp(Optimizer):
    def __init__(self, params, config):
        super().__init__(params, config)
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self._decay()
        c = self.config
        for p, v in zip(self.params, self.v):
            v *= c.rms_alpha
            v += (1.0 - c.rms_alpha) * p.grad * p.grad
            p.data -= self.lr * p.grad / (np.sqrt(v) + c.eps)


def make_optimizer(params: Sequence[Parameter], config: OptimizerConfig) -> Optimizer:
    cls = {"sgd": SGD, "adam": Adam, "rmsprop": RMSProp}[config.validate().kind]
    return cls(params, config)
