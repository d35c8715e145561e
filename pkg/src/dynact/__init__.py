"""dynact: trainable dynActivation family, dynActGLU block, and a desk-scale
benchmark harness on a from-scratch reverse-mode autodiff core."""

import os as _os

# pin BLAS threading before numpy loads so single runs stay deterministic
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .autodiff import (ConfigError, ContractError, DataError, DynactError,  # noqa: E402
                       FormatError, NumericsError, Parameter, ShapeError,
                       Tape, Tensor, backward, grad_wrt)
from .rng import DetRng  # noqa: E402
from .activations import (BASE_ACTIVATIONS, DynActivation, StaticActivation,  # noqa: E402
                          activation_names, base_derivative, base_forward,
                          dyn_grad_alpha, dyn_grad_beta, dyn_grad_x,
                          dyn_sigmoid_construction, dyn_value, lipschitz_landscape,
                          make_activation, regularization_penalty)
from .glu import DynActGluBlock, SwiGluBlock  # noqa: E402
from .models import (DepthNet, ModelSpec, build_model, count_parameters,  # noqa: E402
                     snapshot_activation_params)
from .optim import OptimizerConfig, clip_global_norm, effective_lr, make_optimizer  # noqa: E402
from .training import (ConvergenceStats, RunRecord, convergence_stats,  # noqa: E402
                    evaluate, param_trajectory_stats, sweep, train)
from .robustness import (AttackConfig, CorruptionConfig, corrupt, fgsm,  # noqa: E402
                         gradient_flow_probe, init_heatmap, pgd, robustness_report)
from .data import (Dataset, load_mnist_idx, locate_mnist, subset,  # noqa: E402
                   synth_blobs, synth_digits)
from .bench import RuntimeBenchResult, runtime_bench  # noqa: E402
