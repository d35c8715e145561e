"""White-box input attacks, corruption transforms, and stability probes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import ConfigError, NumericsError, Tape, Tensor, grad_wrt
from .data import Dataset, normalize
from .models import DepthNet, ModelSpec, build_model
from .ops import softmax_cross_entropy
from .optim import OptimizerConfig
from .rng import DetRng, STREAM_ATTACK
from .training import train

NOISE_SIGMA = (0.04, 0.08, 0.12, 0.16, 0.20)
BLUR_SIGMA = (0.4, 0.6, 0.9, 1.2, 1.6)
BRIGHTNESS_DELTA = (0.1, 0.2, 0.3, 0.4, 0.5)
CONTRAST_SCALE = (0.75, 0.6, 0.5, 0.4, 0.3)
CORRUPTION_KINDS = ("gaussian_noise", "gaussian_blur", "brightness", "contrast")


@dataclass
class AttackConfig:
    kind: str = "fgsm"                 # fgsm | pgd
    epsilon: float = 0.01              # L-inf budget in input units
    pgd_steps: int = 10
    pgd_step_size: Optional[float] = None   # defaults to epsilon / 4
    data_range: tuple = (0.0, 1.0)
    random_start: bool = True

    def validate(self) -> "AttackConfig":
        if self.kind not in ("fgsm", "pgd"):
            raise ConfigError(f"attack kind must be 'fgsm' or 'pgd', got '{self.kind}'")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind == "pgd" and self.pgd_steps < 1:
            raise ConfigError(f"pgd_steps must be >= 1, got {self.pgd_steps}")
        return self

    @property
    def step_size(self) -> float:
        return self.epsilon / 4.0 if self.pgd_step_size is None else self.pgd_step_size


@dataclass
class CorruptionConfig:
    kind: str
    severity: int

    def validate(self) -> "CorruptionConfig":
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"corruption kind must be one of {CORRUPTION_KINDS}")
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be in [1, 5], got {self.severity}")
        return self


def input_gradient(model: DepthNet, x: np.ndarray, y: np.ndarray,
                   normalization: Optional[tuple]) -> np.ndarray:
    """d(loss)/d(raw input) through the exact inference graph (eval mode).

    The affine normalization is recorded on the tape so the gradient is
    taken in raw input units. Model parameters and their gradient buffers
    are left untouched.
    """
    from .ops import add as _add, mul as _mul

    model.eval()
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        if normalization is not None:
            mean = np.asarray(normalization[0], dtype=np.float64)
            std = np.asarray(normalization[1], dtype=np.float64)
            if x.ndim == 4:
                mean = mean.reshape(1, -1, 1, 1)
                std = std.reshape(1, -1, 1, 1)
            xn = _mul(_add(xt, Tensor(-mean)), Tensor(1.0 / std))
        else:
            xn = xt
        logits = model.forward(xn)
        loss = softmax_cross_entropy(logits, y)
        (g,) = grad_wrt(loss, tape, [xt])
    return g


def fgsm(model: DepthNet, x: np.ndarray, y: np.ndarray, epsilon: float,
         data_range=(0.0, 1.0), normalization: Optional[tuple] = None) -> np.ndarray:
    """One-step sign attack: clamp(x + eps * sign(dL/dx)); sign(0) = 0."""
    g = input_gradient(model, x, y, normalization)
    return np.clip(x + epsilon * np.sign(g), data_range[0], data_range[1])


def pgd(model: DepthNet, x: np.ndarray, y: np.ndarray, config: AttackConfig,
        rng: Optional[DetRng] = None,
        normalization: Optional[tuple] = None) -> np.ndarray:
    """Iterative sign attack with random start and L-inf projection."""
    config.validate()
    eps = config.epsilon
    lo, hi = config.data_range
    if config.random_start and eps > 0:
        rng = rng or DetRng(0, STREAM_ATTACK)
        delta = (rng.uniform(x.shape) * 2.0 - 1.0) * eps
    else:
        delta = np.zeros_like(x)
    x_adv = np.clip(x + delta, lo, hi)
    for _ in range(config.pgd_steps):
        g = input_gradient(model, x_adv, y, normalization)
        x_adv = x_adv + config.step_size * np.sign(g)
        x_adv = np.clip(np.clip(x_adv, x - eps, x + eps), lo, hi)
    return x_adv


def corrupt(x: np.ndarray, config: CorruptionConfig, rng: DetRng) -> np.ndarray:
    """Apply one corruption at its severity-pinned strength; output in [0,1]."""
    config.validate()
    s = config.severity - 1
    if config.kind == "gaussian_noise":
        return np.clip(x + rng.normal(x.shape, std=NOISE_SIGMA[s]), 0.0, 1.0)
    if config.kind == "brightness":
        return np.clip(x + BRIGHTNESS_DELTA[s], 0.0, 1.0)
    if config.kind == "contrast":
        m = x.mean(axis=tuple(range(1, x.ndim)), keepdims=True)
        return np.clip(m + CONTRAST_SCALE[s] * (x - m), 0.0, 1.0)
    return np.clip(_gaussian_blur(x, BLUR_SIGMA[s]), 0.0, 1.0)


def _gaussian_blur(x: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter, kernel size 2*ceil(2*sigma)+1, reflect pad."""
    r = int(np.ceil(2.0 * sigma))
    taps = np.exp(-np.arange(-r, r + 1) ** 2 / (2.0 * sigma ** 2))
    taps /= taps.sum()

    def conv_axis(img, axis):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(img, pad, mode="reflect")
        out = np.zeros_like(img)
        for k, w in enumerate(taps):
            sl = [slice(None)] * img.ndim
            sl[axis] = slice(k, k + img.shape[axis])
            out += w * padded[tuple(sl)]
        return out

    return conv_axis(conv_axis(x, x.ndim - 2), x.ndim - 1)


def accuracy_on(model: DepthNet, x: np.ndarray, y: np.ndarray,
                normalization: Optional[tuple], batch_size: int = 256) -> float:
    model.eval()
    xn = normalize(x, *normalization) if normalization is not None else x
    correct = 0
    for lo in range(0, len(y), batch_size):
        logits = model.forward(Tensor(xn[lo:lo + batch_size]))
        correct += int((logits.data.argmax(axis=1) == y[lo:lo + batch_size]).sum())
    return correct / len(y)


@dataclass
class RobustnessRow:
    setting: str
    kind: str
    epsilon_or_severity: float
    accuracy: float
    drop_pp: float


def robustness_report(model: DepthNet, ds: Dataset,
                      attacks: Sequence[AttackConfig] = (),
                      corruptions: Sequence[CorruptionConfig] = (),
                      rng: Optional[DetRng] = None,
                      batch_size: int = 256) -> list[RobustnessRow]:
    """Clean accuracy plus per-attack / per-corruption accuracy and drop."""
    rng = rng or DetRng(0, STREAM_ATTACK)
    x, y = ds.x, ds.labels
    norm = ds.normalization
    clean = accuracy_on(model, x, y, norm, batch_size)
    rows = [RobustnessRow("clean", "clean", 0.0, clean, 0.0)]
    for cfg in attacks:
        cfg.validate()
        parts = []
        for lo in range(0, len(y), batch_size):
            xb, yb = x[lo:lo + batch_size], y[lo:lo + batch_size]
            if cfg.kind == "fgsm":
                parts.append(fgsm(model, xb, yb, cfg.epsilon, cfg.data_range, norm))
            else:
                parts.append(pgd(model, xb, yb, cfg, rng, norm))
        acc = accuracy_on(model, np.concatenate(parts), y, norm, batch_size)
        rows.append(RobustnessRow(f"{cfg.kind}_eps{cfg.epsilon:g}", cfg.kind,
                                  cfg.epsilon, acc, (clean - acc) * 100.0))
    for cfg in corruptions:
        cfg.validate()
        xc = corrupt(x, cfg, rng)
        acc = accuracy_on(model, xc, y, norm, batch_size)
        rows.append(RobustnessRow(f"{cfg.kind}_s{cfg.severity}", cfg.kind,
                                  float(cfg.severity), acc, (clean - acc) * 100.0))
    return rows


def write_robustness_csv(rows: Sequence[RobustnessRow], run_id: str, path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,setting,kind,epsilon_or_severity,accuracy,drop_pp\n")
        for r in rows:
            fh.write(f"{run_id},{r.setting},{r.kind},{repr(float(r.epsilon_or_severity))},"
                     f"{repr(float(r.accuracy))},{repr(float(r.drop_pp))}\n")


# -- initialization heatmap -------------------------------------------------------

@dataclass
class HeatmapResult:
    alpha_grid: list
    beta_grid: list
    mean_acc: np.ndarray
    std_acc: np.ndarray
    failed_cells: list = field(default_factory=list)


def init_heatmap(train_ds: Dataset, test_ds: Dataset, model_spec: ModelSpec,
                 opt_config: OptimizerConfig, alpha_grid: Sequence[float],
                 beta_grid: Sequence[float], seeds: Sequence[int],
                 epochs: int = 2, batch_size: int = 128) -> HeatmapResult:
    """Short training run per (alpha0, beta0) cell; mean/std accuracy over seeds.

    Cells that abort on NaN are recorded as failed and left NaN in the maps.
    """
    alphas, betas = list(alpha_grid), list(beta_grid)
    mean_acc = np.full((len(alphas), len(betas)), np.nan)
    std_acc = np.full((len(alphas), len(betas)), np.nan)
    failed = []
    for i, a0 in enumerate(alphas):
        for j, b0 in enumerate(betas):
            accs = []
            for seed in seeds:
                spec = ModelSpec(**{**model_spec.__dict__,
                                    "alpha_init": float(a0), "beta_init": float(b0)})
                model = build_model(spec, seed=seed)
                try:
                    rec = train(model, train_ds, test_ds, opt_config, epochs,
                                seed=seed, batch_size=batch_size,
                                run_id=f"heatmap_a{a0:g}_b{b0:g}_s{seed}")
                    accs.append(rec.final_accuracy)
                except NumericsError as e:
                    failed.append({"alpha": a0, "beta": b0, "seed": seed, "error": str(e)})
            if accs:
                mean_acc[i, j] = float(np.mean(accs))
                std_acc[i, j] = float(np.std(accs))
    return HeatmapResult(alphas, betas, mean_acc, std_acc, failed)


# -- gradient flow probe ----------------------------------------------------------

def gradient_flow_probe(depth: int, activation: str, n_batches: int = 3,
                        width: int = 128, batch_size: int = 64,
                        seed: int = 0) -> list[tuple[float, float]]:
    """Mean |dL/dh| per hidden activation output at init, depth-normalized.

    Uses a plain FC stack (no batchnorm, no dropout) on random inputs so the
    decay profile reflects the activation, not the normalizers.
    """
    if depth < 2:
        raise ConfigError(f"gradient_flow_probe needs depth >= 2, got {depth}")
    spec = ModelSpec(dataset_shape=width, depth=depth, width=width,
                     activation=activation, conv_frontend=False,
                     dropout_p=0.0, use_batchnorm=False, num_classes=10)
    model = build_model(spec, seed=seed)
    rng = DetRng(seed).substream(STREAM_ATTACK)
    sums = np.zeros(depth)
    for _ in range(n_batches):
        x = rng.normal((batch_size, width))
        y = rng.integers(batch_size, 0, 10)
        with Tape() as tape:
            logits = model.forward(Tensor(x), capture_activations=True)
            loss = softmax_cross_entropy(logits, y)
            acts = [t for _, t in model.last_activations]
            grads = grad_wrt(loss, tape, acts)
        sums += np.array([float(np.abs(g).mean()) for g in grads])
    return [((i + 1) / depth, float(sums[i] / n_batches)) for i in range(depth)]
