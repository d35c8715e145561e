"""Static base activations and the trainable dyn wrapper.

The dyn family is f(x) = base(x) * (alpha - beta) + beta * x with two
per-layer scalars: alpha scales the nonlinear contribution, beta opens an
explicit linear path. At (alpha, beta) = (1, 0) the wrapper evaluates the
base function through the identical floating-point expression; at
alpha == beta it is exactly beta * x.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import ConfigError, Parameter, Tensor, record

_SELU_LAMBDA = 1.0507009873554804934193349852946
_SELU_ALPHA = 1.6732632423543772848170429916717
_GELU_C = np.sqrt(2.0 / np.pi)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """Overflow-safe ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _mish(x):
    return x * np.tanh(softplus(x))


def _mish_d(x):
    # analytic form; avoids finite-difference noise in landscape scans
    t = np.tanh(softplus(x))
    return t + x * _sigmoid(x) * (1.0 - t * t)


def _mish_fd(x):
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(softplus(x))
    return x * t, t + x * _sigmoid(x) * (1.0 - t * t)


def _gelu(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        u = _GELU_C * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_d(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        u = _GELU_C * (x + 0.044715 * x ** 3)
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * _sigmoid(x)


def _silu_d(x):
    s = _sigmoid(x)
    return s * (1.0 + np.asarray(x) * (1.0 - s))


def _silu_fd(x):
    x = np.asarray(x, dtype=np.float64)
    s = _sigmoid(x)
    return x * s, s * (1.0 + x * (1.0 - s))


def _gelu_fd(x):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        u = _GELU_C * (x + 0.044715 * x ** 3)
        du = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def _tanh_fd(x):
    t = np.tanh(np.asarray(x, dtype=np.float64))
    return t, 1.0 - t ** 2


def _sigmoid_fd(x):
    s = _sigmoid(x)
    return s, s * (1.0 - s)


def _neg_branch(x, fneg, fpos=None):
    x = np.asarray(x, dtype=np.float64)
    out = x.copy() if fpos is None else fpos(x)
    m = x <= 0
    out[m] = fneg(x[m])
    return out


def _elu(x):
    return _neg_branch(x, np.expm1)


def _elu_d(x):
    return _neg_branch(x, np.exp, lambda v: np.ones_like(v))


def _selu(x):
    return _SELU_LAMBDA * _neg_branch(x, lambda v: _SELU_ALPHA * np.expm1(v))


def _selu_d(x):
    return _SELU_LAMBDA * _neg_branch(x, lambda v: _SELU_ALPHA * np.exp(v),
                                      lambda v: np.ones_like(v))


def _hardswish(x):
    x = np.asarray(x, dtype=np.float64)
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def _hardswish_d(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= -3.0, 0.0, np.where(x >= 3.0, 1.0, (2.0 * x + 3.0) / 6.0))


@dataclass(frozen=True)
class BaseActivation:
    """A fixed scalar nonlinearity with closed-form value and derivative.

    `fd`, when present, returns (f(x), f'(x)) sharing the transcendental
    work; it must evaluate the exact same expressions as `f` and `d`.
    """
    name: str
    f: Callable[[np.ndarray], np.ndarray]
    d: Callable[[np.ndarray], np.ndarray]
    fd: Callable[[np.ndarray], tuple] = None

    def value_and_derivative(self, x):
        if self.fd is not None:
            return self.fd(x)
        return self.f(x), self.d(x)


BASE_ACTIVATIONS: dict[str, BaseActivation] = {}


def _register(name, f, d, fd=None):
    BASE_ACTIVATIONS[name] = BaseActivation(name, f, d, fd)


_register("relu", lambda x: np.maximum(np.asarray(x, dtype=np.float64), 0.0),
          lambda x: (np.asarray(x) > 0).astype(np.float64))
_register("leaky_relu", lambda x: np.where(np.asarray(x, dtype=np.float64) > 0, x, 0.01 * np.asarray(x)),
          lambda x: np.where(np.asarray(x) > 0, 1.0, 0.01))
_register("gelu", _gelu, _gelu_d, _gelu_fd)
_register("silu", _silu, _silu_d, _silu_fd)
_register("swish", _silu, _silu_d, _silu_fd)
_register("mish", _mish, _mish_d, _mish_fd)
_register("softplus", softplus, _sigmoid)
_register("tanh", lambda x: np.tanh(np.asarray(x, dtype=np.float64)),
          lambda x: 1.0 - np.tanh(np.asarray(x, dtype=np.float64)) ** 2, _tanh_fd)
_register("elu", _elu, _elu_d)
_register("selu", _selu, _selu_d)
_register("celu", _elu, _elu_d)  # CELU(a=1) coincides with ELU(a=1)
_register("hardswish", _hardswish, _hardswish_d)
_register("sigmoid", _sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x)), _sigmoid_fd)


def get_base(kind) -> BaseActivation:
    if isinstance(kind, BaseActivation):
        return kind
    try:
        return BASE_ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown base activation '{kind}'; known: "
                          f"{sorted(BASE_ACTIVATIONS)}") from None


def base_forward(kind, x):
    return get_base(kind).f(x)


def base_derivative(kind, x):
    return get_base(kind).d(x)


def activation_names() -> list[str]:
    """Canonical config names: every base plus its dyn_ counterpart."""
    names = sorted(BASE_ACTIVATIONS)
    return names + [f"dyn_{n}" for n in names]


# -- dyn wrapper ---------------------------------------------------------------

def dyn_value(base, alpha: float, beta: float, x):
    """Closed-form value base(x)*(alpha-beta) + beta*x."""
    b = get_base(base)
    return b.f(x) * (alpha - beta) + beta * np.asarray(x, dtype=np.float64)


def dyn_grad_x(base, alpha: float, beta: float, x):
    """d/dx = base'(x)*(alpha-beta) + beta."""
    return get_base(base).d(x) * (alpha - beta) + beta


def dyn_grad_alpha(base, x):
    """d/dalpha = base(x)."""
    return get_base(base).f(x)


def dyn_grad_beta(base, x):
    """d/dbeta = x - base(x)."""
    return np.asarray(x, dtype=np.float64) - get_base(base).f(x)


def dyn_sigmoid_construction(x, alpha: float, beta: float):
    """sigma(x)*x*(alpha-beta) + beta*x, the sigmoid-gated construction that
    the wrapper generalizes; kept as an independent cross-check."""
    x = np.asarray(x, dtype=np.float64)
    return (_sigmoid(x) * x) * (alpha - beta) + beta * x


def dyn_apply(x: Tensor, alpha: Parameter, beta: Parameter, base) -> Tensor:
    """Tape op for the wrapper; backward uses the three analytic partials.

    When recording, value and derivative are computed in one fused pass so
    the backward rule reuses the derivative instead of re-deriving it.
    """
    from .autodiff import active_tape

    b = get_base(base)
    a = float(alpha.data)
    bt = float(beta.data)
    if active_tape() is not None:
        bx, dx = b.value_and_derivative(x.data)
    else:
        bx, dx = b.f(x.data), None
    out = bx * (a - bt) + bt * x.data

    def rule(g):
        d = dx if dx is not None else b.d(x.data)
        gx = g * (d * (a - bt) + bt)
        ga = np.asarray((g * bx).sum())
        gb = np.asarray((g * (x.data - bx)).sum())
        return (gx, ga, gb)

    return record(f"dyn_{b.name}", out, (x, alpha, beta), rule)


def static_apply(x: Tensor, base) -> Tensor:
    """Elementwise base activation with the same fused-derivative caching
    as dyn_apply."""
    from .autodiff import active_tape

    b = get_base(base)
    if active_tape() is not None:
        fx, dx = b.value_and_derivative(x.data)
    else:
        fx, dx = b.f(x.data), None

    def rule(g):
        return (g * (dx if dx is not None else b.d(x.data)),)

    return record(b.name, fx, (x,), rule)


class StaticActivation:
    """Fixed nonlinearity as a layer."""

    trainable_shape = False

    def __init__(self, base, name: str = ""):
        self.base = get_base(base)
        self.name = name or self.base.name

    def __call__(self, x: Tensor) -> Tensor:
        return static_apply(x, self.base)

    def parameters(self) -> list[Parameter]:
        return []


class DynActivation:
    """Trainable wrapper: one (alpha, beta) scalar pair per layer instance.

    Both scalars train at the regular learning rate but are exempt from
    weight decay, which would otherwise drift them toward the degenerate
    zero function.
    """

    trainable_shape = True

    def __init__(self, base, alpha_init: float = 1.0, beta_init: float = 0.0,
                 name: str = ""):
        self.base = get_base(base)
        self.name = name or f"dyn_{self.base.name}"
        self.alpha = Parameter(np.asarray(float(alpha_init)),
                               name=f"{self.name}.alpha", weight_decay_exempt=True)
        self.beta = Parameter(np.asarray(float(beta_init)),
                              name=f"{self.name}.beta", weight_decay_exempt=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dyn_apply(x, self.alpha, self.beta, self.base)

    def parameters(self) -> list[Parameter]:
        return [self.alpha, self.beta]


def make_activation(name: str, alpha_init: float = 1.0, beta_init: float = 0.0,
                    layer_name: str = ""):
    """Resolve a canonical config name ("mish", "dyn_gelu", ...) to a layer."""
    if name.startswith("dyn_"):
        return DynActivation(name[4:], alpha_init, beta_init, name=layer_name)
    return StaticActivation(name, name=layer_name)


def lipschitz_landscape(base, alpha_grid: Sequence[float], beta_grid: Sequence[float],
                        x_range=(-8.0, 8.0), x_step: float = 0.01) -> np.ndarray:
    """Empirical Lipschitz constant of the scalar map per (alpha, beta) cell.

    Entry (i, j) = max over sampled x of |base'(x)*(alpha_i - beta_j) + beta_j|.
    """
    alphas = np.asarray(list(alpha_grid), dtype=np.float64)
    betas = np.asarray(list(beta_grid), dtype=np.float64)
    if alphas.size == 0 or betas.size == 0:
        raise ConfigError("lipschitz_landscape needs non-empty grids")
    if x_step <= 0:
        raise ConfigError(f"x_step must be positive, got {x_step}")
    lo, hi = float(x_range[0]), float(x_range[1])
    xs = np.arange(lo, hi + 0.5 * x_step, x_step)
    d = get_base(base).d(xs)
    diff = alphas[:, None] - betas[None, :]
    slopes = d[None, None, :] * diff[:, :, None] + betas[None, :, None]
    return np.abs(slopes).max(axis=2)


def regularization_penalty(layers: Iterable[DynActivation], kind: str,
                           lam: float) -> Tensor:
    """L1 or L2 penalty on all (alpha, beta) scalars, recorded on the tape.

    The L1 subgradient at 0 is 0.
    """
    if lam < 0:
        raise ConfigError(f"regularization strength must be >= 0, got {lam}")
    kind = kind.lower()
    if kind not in ("l1", "l2"):
        raise ConfigError(f"regularization kind must be 'L1' or 'L2', got '{kind}'")
    params: list[Parameter] = []
    for layer in layers:
        params.extend([layer.alpha, layer.beta])
    vals = np.array([float(p.data) for p in params])
    if kind == "l1":
        total = lam * np.abs(vals).sum()

        def rule(g):
            return [np.asarray(float(g) * lam * np.sign(v)) for v in vals]
    else:
        total = lam * (vals ** 2).sum()

        def rule(g):
            return [np.asarray(float(g) * lam * 2.0 * v) for v in vals]

    return record(f"penalty_{kind}", np.asarray(total), params, rule)
