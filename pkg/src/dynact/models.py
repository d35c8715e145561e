"""Declarative model construction for the depth-scaling study.

A DepthNet is an optional two-conv front end followed by `depth` blocks of
[linear -> batchnorm -> activation -> dropout] at fixed width, ending in a
linear classifier head. Every activation site is a named layer instance so
its learned (alpha, beta) pair can be read back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .autodiff import ConfigError, Parameter, Tensor
from .activations import DynActivation, StaticActivation, activation_names, make_activation
from .ops import add, batchnorm, conv2d, dropout, matmul, reshape
from .rng import DetRng

INIT_SCHEMES = ("kaiming_normal", "xavier_uniform", "normal")


def _init_weight(rng: DetRng, shape, fan_in: int, fan_out: int, scheme: str) -> np.ndarray:
    if scheme == "kaiming_normal":
        return rng.normal(shape, std=np.sqrt(2.0 / fan_in))
    if scheme == "xavier_uniform":
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return (rng.uniform(shape) * 2.0 - 1.0) * a
    if scheme == "normal":
        return rng.normal(shape, std=0.02)
    raise ConfigError(f"unknown init scheme '{scheme}'; known: {INIT_SCHEMES}")


@dataclass
class ModelSpec:
    """Config-file view of a model; fields map 1:1 to config keys."""
    dataset_shape: Union[int, tuple]
    depth: int = 1
    width: int = 128
    activation: str = "dyn_mish"
    conv_frontend: bool = False
    dropout_p: float = 0.1
    use_batchnorm: bool = True
    num_classes: int = 10
    alpha_init: float = 1.0
    beta_init: float = 0.0
    init_scheme: str = "kaiming_normal"

    def validate(self) -> "ModelSpec":
        if not 1 <= self.depth <= 75:
            raise ConfigError(f"depth must be in [1, 75], got {self.depth}")
        if self.width < 1:
            raise ConfigError(f"width must be positive, got {self.width}")
        if self.activation not in activation_names():
            raise ConfigError(f"unknown activation '{self.activation}'")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme '{self.init_scheme}'")
        if self.conv_frontend and np.isscalar(self.dataset_shape):
            raise ConfigError("conv frontend needs a (C, H, W) dataset_shape")
        return self


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: DetRng, scheme: str, name: str):
        self.name = name
        self.W = Parameter(_init_weight(rng, (d_in, d_out), d_in, d_out, scheme),
                           name=f"{name}.W")
        self.b = Parameter(np.zeros(d_out), name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.W), self.b)

    def parameters(self):
        return [self.W, self.b]


class Conv2d:
    def __init__(self, c_in: int, c_out: int, ksize: int, stride: int, padding: int,
                 rng: DetRng, scheme: str, name: str):
        self.name = name
        self.stride, self.padding = stride, padding
        fan_in = c_in * ksize * ksize
        fan_out = c_out * ksize * ksize
        self.kernel = Parameter(
            _init_weight(rng, (c_out, c_in, ksize, ksize), fan_in, fan_out, scheme),
            name=f"{name}.kernel")
        self.b = Parameter(np.zeros(c_out), name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.b, self.stride, self.padding)

    def parameters(self):
        return [self.kernel, self.b]


class BatchNorm:
    def __init__(self, dim: int, name: str, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.gamma = Parameter(np.ones(dim), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), name=f"{name}.beta")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum, self.eps = momentum, eps
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm(x, self.gamma, self.beta, self.running_mean,
                         self.running_var, self.training, self.momentum, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]


class Dropout:
    def __init__(self, p: float, name: str):
        self.name = name
        self.p = p
        self.training = True
        self.rng: Optional[DetRng] = None

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        if self.rng is None:
            raise ConfigError("dropout layer used in train mode without an rng")
        return dropout(x, self.p, self.rng, self.training)

    def parameters(self):
        return []


class Flatten:
    def __init__(self, name: str = "flatten"):
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return reshape(x, (x.data.shape[0], -1))

    def parameters(self):
        return []


class DepthNet:
    """Ordered layer stack with a registry of its activation sites."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers: list = []
        self.activation_sites: dict[str, object] = {}
        self.training = True
        self.last_activations: list[tuple[str, Tensor]] = []

    def add(self, layer) -> None:
        self.layers.append(layer)
        if isinstance(layer, (DynActivation, StaticActivation)):
            self.activation_sites[layer.name] = layer

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def dyn_layers(self) -> list[DynActivation]:
        return [l for l in self.layers if isinstance(l, DynActivation)]

    def train(self) -> "DepthNet":
        self.training = True
        for layer in self.layers:
            if hasattr(layer, "training"):
                layer.training = True
        return self

    def eval(self) -> "DepthNet":
        self.training = False
        for layer in self.layers:
            if hasattr(layer, "training"):
                layer.training = False
        return self

    def set_dropout_rng(self, rng: DetRng) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def forward(self, x, capture_activations: bool = False) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        self.last_activations = []
        for layer in self.layers:
            h = layer(h)
            if capture_activations and isinstance(layer, (DynActivation, StaticActivation)):
                h.retain_grad = True
                self.last_activations.append((layer.name, h))
        return h

    __call__ = forward


def build_model(spec: ModelSpec, seed: int = 0, rng: Optional[DetRng] = None) -> DepthNet:
    """Instantiate the depth network described by `spec`.

    Front end (when enabled): conv 3x3/16 stride 1 -> act -> conv 3x3/32
    stride 2 -> act -> flatten. Then `depth` blocks of
    [linear -> batchnorm -> act -> dropout] and a linear head.
    """
    spec.validate()
    from .rng import STREAM_INIT
    rng = rng or DetRng(seed).substream(STREAM_INIT)
    net = DepthNet(spec)

    def act(site: str):
        return make_activation(spec.activation, spec.alpha_init, spec.beta_init,
                               layer_name=site)

    if spec.conv_frontend:
        c, h, w = spec.dataset_shape
        net.add(Conv2d(c, 16, 3, 1, 1, rng, spec.init_scheme, "conv_1"))
        net.add(act("conv_1"))
        net.add(Conv2d(16, 32, 3, 2, 1, rng, spec.init_scheme, "conv_2"))
        net.add(act("conv_2"))
        net.add(Flatten())
        h2 = (h + 2 - 3) // 2 + 1
        w2 = (w + 2 - 3) // 2 + 1
        in_dim = 32 * h2 * w2
    elif np.isscalar(spec.dataset_shape):
        in_dim = int(spec.dataset_shape)
    else:
        net.add(Flatten())
        in_dim = int(np.prod(spec.dataset_shape))

    for i in range(1, spec.depth + 1):
        net.add(Linear(in_dim, spec.width, rng, spec.init_scheme, f"fc_{i}"))
        if spec.use_batchnorm:
            net.add(BatchNorm(spec.width, f"bn_{i}"))
        net.add(act(f"fc_{i}"))
        net.add(Dropout(spec.dropout_p, f"drop_{i}"))
        in_dim = spec.width

    net.add(Linear(in_dim, spec.num_classes, rng, spec.init_scheme, "head"))
    return net


def refresh_batchnorm_stats(net: DepthNet, x: np.ndarray, batch_size: int = 128,
                            max_batches: int = 16) -> None:
    """Re-estimate batchnorm running statistics with forward passes.

    Deep stacks compound the lag of momentum-averaged statistics, which can
    understate a freshly trained net badly at eval time. This pass runs
    batchnorm in train mode with dropout inactive (matching the eval-time
    activation distribution) and consumes no random state, so the training
    trajectory is unaffected.
    """
    has_bn = any(isinstance(l, BatchNorm) for l in net.layers)
    if not has_bn:
        return
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.training = True
        elif hasattr(layer, "training"):
            layer.training = False
    n = min(x.shape[0], batch_size * max_batches)
    for lo in range(0, n - n % batch_size or min(n, batch_size), batch_size):
        net.forward(Tensor(x[lo:lo + batch_size]))
    net.eval()


def snapshot_activation_params(net: DepthNet) -> list[tuple[str, float, float]]:
    """Ordered (layer_name, alpha, beta) for every dyn site; [] on static nets."""
    return [(l.name, float(l.alpha.data), float(l.beta.data))
            for l in net.layers if isinstance(l, DynActivation)]


def count_parameters(net: DepthNet) -> int:
    return sum(p.size for p in net.parameters())
