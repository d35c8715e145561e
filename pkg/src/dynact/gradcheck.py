"""Runtime gradient verification for the CLI gradcheck command.

Checks the analytic partials of the dyn wrapper and the backward rules of
every core op against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape, Tensor, backward
from .activations import (BASE_ACTIVATIONS, dyn_grad_alpha, dyn_grad_beta,
                          dyn_grad_x, dyn_value)
from .rng import DetRng

# bases whose derivative is one-sided at kink points; FD must not straddle them
KINKS = {"relu": (0.0,), "leaky_relu": (0.0,), "hardswish": (-3.0, 3.0)}


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-2) -> np.ndarray:
    # the floor keeps zero-crossings measured against the derivative's
    # natural O(1) scale instead of against FD roundoff
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _avoid_kinks(x: np.ndarray, base_name: str, h: float) -> np.ndarray:
    for k in KINKS.get(base_name, ()):
        near = np.abs(x - k) < 10 * h
        x = np.where(near, x + 20 * h, x)
    return x


def check_dyn_partials(n_trials: int = 1000, h: float = 1e-5, seed: int = 0,
                       threshold: float = 1e-7) -> list[GradCheckResult]:
    """Analytic d/dx, d/dalpha, d/dbeta vs central differences, every base."""
    results = []
    for name in sorted(BASE_ACTIVATIONS):
        rng = DetRng(seed)
        x = _avoid_kinks(rng.uniform(n_trials) * 10.0 - 5.0, name, h)
        a = rng.uniform(n_trials) * 4.0 - 2.0
        b = rng.uniform(n_trials) * 4.0 - 2.0
        fd_x = (dyn_value(name, a, b, x + h) - dyn_value(name, a, b, x - h)) / (2 * h)
        fd_a = (dyn_value(name, a + h, b, x) - dyn_value(name, a - h, b, x)) / (2 * h)
        fd_b = (dyn_value(name, a, b + h, x) - dyn_value(name, a, b - h, x)) / (2 * h)
        err = max(_rel_err(dyn_grad_x(name, a, b, x), fd_x).max(),
                  _rel_err(dyn_grad_alpha(name, x), fd_a).max(),
                  _rel_err(np.broadcast_to(dyn_grad_beta(name, x), x.shape), fd_b).max())
        results.append(GradCheckResult(f"dyn_{name}", float(err), threshold))
    return results


def _tape_grads(build_loss, params: list[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = build_loss()
        backward(loss, tape)
    return [p.grad.copy() for p in params]


def _fd_grads(build_loss, params: list[Tensor], h: float) -> list[np.ndarray]:
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            dn = float(build_loss().data)
            flat[i] = orig
            g.reshape(-1)[i] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def check_core_ops(seed: int = 0, h: float = 1e-5,
                   threshold: float = 1e-6) -> list[GradCheckResult]:
    """Backward rules of matmul / conv / batchnorm / dropout-free graph vs FD."""
    from .ops import batchnorm, conv2d, matmul, mul, softmax_cross_entropy, sum_all
    rng = DetRng(seed)
    results = []

    a = Parameter(rng.normal((4, 3)))
    b = Parameter(rng.normal((3, 5)))

    def loss_matmul():
        return sum_all(mul(matmul(a, b), matmul(a, b)))

    ana = _tape_grads(loss_matmul, [a, b])
    fd = _fd_grads(loss_matmul, [a, b], h)
    err = max(_rel_err(x, y).max() for x, y in zip(ana, fd))
    results.append(GradCheckResult("matmul", float(err), threshold))

    x = Parameter(rng.normal((2, 3, 6, 6)))
    k = Parameter(rng.normal((4, 3, 3, 3)))
    cb = Parameter(rng.normal(4))

    def loss_conv():
        out = conv2d(x, k, cb, stride=2, padding=1)
        return sum_all(mul(out, out))

    ana = _tape_grads(loss_conv, [x, k, cb])
    fd = _fd_grads(loss_conv, [x, k, cb], h)
    err = max(_rel_err(g1, g2).max() for g1, g2 in zip(ana, fd))
    results.append(GradCheckResult("conv2d", float(err), threshold))

    xb = Parameter(rng.normal((8, 5)))
    gamma = Parameter(rng.uniform(5) + 0.5)
    beta = Parameter(rng.normal(5))
    rm, rv = np.zeros(5), np.ones(5)

    def loss_bn():
        out = batchnorm(xb, gamma, beta, rm.copy(), rv.copy(), training=True)
        return sum_all(mul(out, out))

    ana = _tape_grads(loss_bn, [xb, gamma, beta])
    fd = _fd_grads(loss_bn, [xb, gamma, beta], h)
    err = max(_rel_err(g1, g2).max() for g1, g2 in zip(ana, fd))
    results.append(GradCheckResult("batchnorm", float(err), threshold))

    logits = Parameter(rng.normal((6, 4)))
    y = rng.integers(6, 0, 4)

    def loss_ce():
        return softmax_cross_entropy(logits, y)

    ana = _tape_grads(loss_ce, [logits])
    fd = _fd_grads(loss_ce, [logits], h)
    err = max(_rel_err(g1, g2).max() for g1, g2 in zip(ana, fd))
    results.append(GradCheckResult("softmax_cross_entropy", float(err), threshold))
    return results


def run_all_checks(seed: int = 0) -> list[GradCheckResult]:
    return check_dyn_partials(seed=seed) + check_core_ops(seed=seed)
