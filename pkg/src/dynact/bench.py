"""Operator-level CPU runtime benchmark for static vs dyn activations."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import ConfigError
from .activations import get_base
from .rng import DetRng


@dataclass
class RuntimeBenchResult:
    op: str
    batch_size: int
    input_dim: int
    precision: str
    forward_ns_per_elem: float
    backward_ns_per_elem: float
    overhead_forward: Optional[float]   # vs static base; None for static rows
    overhead_backward: Optional[float]
    reps: int
    warmup: int


def _median_ns(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(np.median(samples))


def _time_pair(base, x, g, alpha: float, beta: float, dyn: bool,
               reps: int, warmup: int) -> tuple[float, float]:
    if dyn:
        def fwd():
            return base.f(x) * (alpha - beta) + beta * x

        def bwd():
            bx = base.f(x)
            gx = g * (base.d(x) * (alpha - beta) + beta)
            return gx, (g * bx).sum(), (g * (x - bx)).sum()
    else:
        def fwd():
            return base.f(x)

        def bwd():
            return g * base.d(x)
    return _median_ns(fwd, reps, warmup), _median_ns(bwd, reps, warmup)


def runtime_bench(activations: Sequence[str], batch_sizes: Sequence[int],
                  dims: Sequence[int], reps: int = 30, warmup: int = 5,
                  precision: str = "f64", seed: int = 0) -> list[RuntimeBenchResult]:
    """Median forward/backward ns-per-element for each (activation, batch, dim).

    Entries named dyn_<base> additionally report their overhead ratio
    against the static base measured on the identical input.
    """
    if not activations or not batch_sizes or not dims:
        raise ConfigError("runtime_bench needs non-empty activation/batch/dim lists")
    if reps < 30:
        raise ConfigError(f"reps must be >= 30, got {reps}")
    dtype = {"f64": np.float64, "f32": np.float32}.get(precision)
    if dtype is None:
        raise ConfigError(f"precision must be 'f64' or 'f32', got '{precision}'")
    rng = DetRng(seed)
    rows = []
    for name in activations:
        is_dyn = name.startswith("dyn_")
        base = get_base(name[4:] if is_dyn else name)
        for bsz in batch_sizes:
            for dim in dims:
                x = rng.normal((bsz, dim)).astype(dtype)
                g = rng.normal((bsz, dim)).astype(dtype)
                n = x.size
                fwd, bwd = _time_pair(base, x, g, 1.1, 0.2, is_dyn, reps, warmup)
                if is_dyn:
                    sf, sb = _time_pair(base, x, g, 1.0, 0.0, False, reps, warmup)
                    over_f, over_b = fwd / sf, bwd / sb
                else:
                    over_f = over_b = None
                rows.append(RuntimeBenchResult(
                    op=name, batch_size=bsz, input_dim=dim, precision=precision,
                    forward_ns_per_elem=fwd / n, backward_ns_per_elem=bwd / n,
                    overhead_forward=over_f, overhead_backward=over_b,
                    reps=reps, warmup=warmup))
    return rows


def write_bench_csv(rows: Sequence[RuntimeBenchResult], path) -> None:
    with open(path, "w") as fh:
        fh.write("op,batch_size,input_dim,precision,forward_ns_per_elem,"
                 "backward_ns_per_elem,overhead_forward,overhead_backward,reps,warmup\n")
        for r in rows:
            of = "" if r.overhead_forward is None else repr(r.overhead_forward)
            ob = "" if r.overhead_backward is None else repr(r.overhead_backward)
            fh.write(f"{r.op},{r.batch_size},{r.input_dim},{r.precision},"
                     f"{repr(r.forward_ns_per_elem)},{repr(r.backward_ns_per_elem)},"
                     f"{of},{ob},{r.reps},{r.warmup}\n")
