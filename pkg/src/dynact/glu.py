"""Gated feed-forward blocks: the dyn gated variant and its SwiGLU baseline."""

from __future__ import annotations

import numpy as np

from .autodiff import ConfigError, Parameter, Tensor
from .activations import get_base, static_apply
from .ops import add, matmul, mul, sub
from .rng import DetRng

GLU_FORMS = ("literal", "gated")


def _init_matrix(rng: DetRng, d: int, h: int, name: str) -> Parameter:
    # Normal(0, 1/d): variance-preserving for the d-dim input
    return Parameter(rng.normal((d, h), std=1.0 / np.sqrt(d)), name=name)


class DynActGluBlock:
    """Feed-forward block gating base(xW1) between two learned projections.

    The default "literal" form is
        ((base(xW1) ⊙ (xVa - xVb) + xW1 ⊙ xVb) ⊙ xW1) W2
    evaluated left to right; "gated" drops the trailing ⊙ xW1 factor, which
    makes the block shape-match the usual GLU template.
    """

    def __init__(self, d: int, h: int, base="silu", rng: DetRng | None = None,
                 form: str = "literal"):
        if form not in GLU_FORMS:
            raise ConfigError(f"glu_form must be one of {GLU_FORMS}, got '{form}'")
        rng = rng or DetRng(0)
        self.base = get_base(base)
        self.form = form
        self.d, self.h = d, h
        self.W1 = _init_matrix(rng, d, h, "glu.W1")
        self.V_alpha = _init_matrix(rng, d, h, "glu.V_alpha")
        self.V_beta = _init_matrix(rng, d, h, "glu.V_beta")
        self.W2 = _init_matrix(rng, h, d, "glu.W2")

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.V_alpha, self.V_beta, self.W2]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.d:
            raise ConfigError(
                f"block expects input [N x {self.d}], got {x.data.shape}")
        xw1 = matmul(x, self.W1)
        xva = matmul(x, self.V_alpha)
        xvb = matmul(x, self.V_beta)
        bact = static_apply(xw1, self.base)
        inner = add(mul(bact, sub(xva, xvb)), mul(xw1, xvb))
        if self.form == "literal":
            inner = mul(inner, xw1)
        return matmul(inner, self.W2)


class SwiGluBlock:
    """Baseline gated FFN: (SiLU(xW1) ⊙ xV) W2."""

    def __init__(self, d: int, h: int, rng: DetRng | None = None):
        rng = rng or DetRng(0)
        self.base = get_base("silu")
        self.d, self.h = d, h
        self.W1 = _init_matrix(rng, d, h, "swiglu.W1")
        self.V = _init_matrix(rng, d, h, "swiglu.V")
        self.W2 = _init_matrix(rng, h, d, "swiglu.W2")

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.V, self.W2]

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.d:
            raise ConfigError(
                f"block expects input [N x {self.d}], got {x.data.shape}")
        gate = static_apply(matmul(x, self.W1), self.base)
        return matmul(mul(gate, matmul(x, self.V)), self.W2)


BLOCK_KINDS = ("dynact_glu", "swiglu")


def make_block(kind: str, d: int, h: int, base="silu",
               rng: DetRng | None = None, form: str = "literal"):
    """Config-name dispatch for the feed-forward block layer types."""
    if kind == "dynact_glu":
        return DynActGluBlock(d, h, base=base, rng=rng, form=form)
    if kind == "swiglu":
        return SwiGluBlock(d, h, rng=rng)
    raise ConfigError(f"block kind must be one of {BLOCK_KINDS}, got '{kind}'")
