"""Training loop, run telemetry, and the convergence metrics."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import ContractError, NumericsError, Tape, Tensor, backward
from .activations import regularization_penalty
from .data import Dataset
from .models import DepthNet, refresh_batchnorm_stats, snapshot_activation_params
from .ops import add, softmax_cross_entropy, softmax
from .optim import OptimizerConfig, clip_global_norm, effective_lr, make_optimizer
from .rng import DetRng, STREAM_DROPOUT, STREAM_SHUFFLE


@dataclass
class RunRecord:
    """Everything one training run produced, convergence metrics excluded."""
    run_id: str
    seed: int
    config_hash: str
    config: dict
    steps: list = field(default_factory=list)          # (step, epoch, train_loss)
    epochs: list = field(default_factory=list)         # (epoch, test_loss, test_acc, lr, wall_ms)
    dyn_snapshots: list = field(default_factory=list)  # (epoch, [(layer, alpha, beta)])

    @property
    def final_accuracy(self) -> float:
        return self.epochs[-1][2] if self.epochs else float("nan")

    def to_json(self) -> str:
        return json.dumps({
            "run_id": self.run_id, "seed": self.seed, "config_hash": self.config_hash,
            "config": self.config, "steps": self.steps, "epochs": self.epochs,
            "dyn_snapshots": self.dyn_snapshots,
        }, indent=1)


@dataclass
class ConvergenceStats:
    auc_loss: float
    steps_to_1_0: Optional[int]
    steps_to_0_5: Optional[int]
    conv_rate: float


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def evaluate(model: DepthNet, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Mean test loss and accuracy in eval mode; consumes no random state."""
    model.eval()
    x = ds.normalized_x()
    total_loss = 0.0
    correct = 0
    for lo in range(0, ds.n, batch_size):
        xb = x[lo:lo + batch_size]
        yb = ds.labels[lo:lo + batch_size]
        logits = model.forward(Tensor(xb))
        p = softmax(logits.data)
        total_loss += float(-np.log(np.maximum(p[np.arange(len(yb)), yb], 1e-300)).sum())
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total_loss / ds.n, correct / ds.n


def train(model: DepthNet, train_ds: Dataset, test_ds: Dataset,
          opt_config: OptimizerConfig, epochs: int, seed: int,
          batch_size: int = 128, reg_kind: Optional[str] = None,
          reg_lambda: float = 0.0, run_id: Optional[str] = None,
          config: Optional[dict] = None) -> RunRecord:
    """Deterministic mini-batch training with per-step global-norm clipping.

    The whole training set is reshuffled each epoch from the run's shuffle
    sub-stream; dropout masks come from the dropout sub-stream. Any op
    producing NaN/Inf aborts the run with the failing step in the message.
    """
    if train_ds.n == 0 or epochs < 1:
        raise ContractError("train needs non-empty data and epochs >= 1")
    opt_config.validate()
    cfg = dict(config or {})
    cfg.setdefault("batch_size", batch_size)
    cfg.setdefault("epochs", epochs)
    chash = config_hash(cfg)
    rec = RunRecord(run_id=run_id or f"run_{chash}_s{seed}", seed=seed,
                    config_hash=chash, config=cfg)

    rng = DetRng(seed)
    shuffle_rng = rng.substream(STREAM_SHUFFLE)
    model.set_dropout_rng(rng.substream(STREAM_DROPOUT))
    opt = make_optimizer(model.parameters(), opt_config)
    dyn = model.dyn_layers()
    if dyn:
        rec.dyn_snapshots.append((0, snapshot_activation_params(model)))

    x_all = train_ds.normalized_x()
    y_all = train_ds.labels
    # trailing sub-batches are dropped: a handful of samples through the
    # batchnorm stack yields degenerate statistics that poison both the
    # update and the running stats; the reshuffle makes no sample
    # systematically excluded
    usable = max(train_ds.n - train_ds.n % batch_size, min(train_ds.n, batch_size))
    step = 0
    for epoch in range(epochs):
        t0 = time.monotonic()
        lr = effective_lr(opt_config, epoch)
        opt.lr = lr
        model.train()
        order = shuffle_rng.permutation(train_ds.n)
        for lo in range(0, usable, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            try:
                with Tape() as tape:
                    logits = model.forward(Tensor(xb))
                    loss = softmax_cross_entropy(logits, yb)
                    if reg_kind is not None and reg_lambda > 0.0 and dyn:
                        loss = add(loss, regularization_penalty(dyn, reg_kind, reg_lambda))
                    opt.zero_grad()
                    backward(loss, tape)
                if opt_config.clip_norm is not None:
                    clip_global_norm(opt.params, opt_config.clip_norm)
                opt.step()
            except NumericsError as e:
                raise NumericsError(f"run {rec.run_id} aborted at step {step}: {e}") from e
            rec.steps.append((step, epoch, float(loss.data)))
            step += 1
        refresh_batchnorm_stats(model, x_all, batch_size)
        test_loss, test_acc = evaluate(model, test_ds)
        wall_ms = (time.monotonic() - t0) * 1000.0
        rec.epochs.append((epoch, test_loss, test_acc, lr, wall_ms))
        if dyn:
            rec.dyn_snapshots.append((epoch + 1, snapshot_activation_params(model)))
    return rec


# -- convergence metrics ---------------------------------------------------------

def ema_smooth(values: np.ndarray, window: int) -> np.ndarray:
    alpha = 2.0 / (window + 1.0)
    out = np.empty_like(values, dtype=np.float64)
    acc = values[0]
    out[0] = acc
    for i in range(1, len(values)):
        acc = alpha * values[i] + (1.0 - alpha) * acc
        out[i] = acc
    return out


def convergence_stats(record: RunRecord, ema_window: int = 50) -> ConvergenceStats:
    """AUC over step index, EMA steps-to-threshold, and exponential-fit rate.

    The rate comes from a log-linear least-squares fit of (smoothed loss -
    floor) against the step index, restricted to steps where that gap
    exceeds 5% of its initial value; the floor is the minimum smoothed loss.
    """
    losses = np.array([s[2] for s in record.steps], dtype=np.float64)
    if len(losses) < 2:
        raise ContractError("convergence_stats needs at least 2 recorded steps")
    auc = float((0.5 * (losses[1:] + losses[:-1])).sum())
    sm = ema_smooth(losses, ema_window)

    def first_below(threshold: float) -> Optional[int]:
        hits = np.flatnonzero(sm < threshold)
        return int(hits[0]) if hits.size else None

    floor = float(sm.min())
    gap = sm - floor
    keep = gap > 0.05 * gap.max() if gap.max() > 0 else np.zeros(len(sm), dtype=bool)
    if keep.sum() >= 2:
        t = np.flatnonzero(keep).astype(np.float64)
        slope, _ = np.polyfit(t, np.log(gap[keep]), 1)
        rate = float(-slope)
    else:
        rate = 0.0
    return ConvergenceStats(auc_loss=auc, steps_to_1_0=first_below(1.0),
                            steps_to_0_5=first_below(0.5), conv_rate=rate)


def param_trajectory_stats(records) -> list[tuple[int, float, float, float, float]]:
    """Per-epoch (mean_alpha, std_alpha, mean_beta, std_beta) over all
    activation sites, pooled across the given records."""
    if isinstance(records, RunRecord):
        records = [records]
    by_epoch: dict[int, list[tuple[float, float]]] = {}
    for rec in records:
        for epoch, snap in rec.dyn_snapshots:
            by_epoch.setdefault(epoch, []).extend((a, b) for _, a, b in snap)
    out = []
    for epoch in sorted(by_epoch):
        arr = np.array(by_epoch[epoch])
        out.append((epoch, float(arr[:, 0].mean()), float(arr[:, 0].std()),
                    float(arr[:, 1].mean()), float(arr[:, 1].std())))
    return out


# -- sweeps ----------------------------------------------------------------------

@dataclass
class CellResult:
    cell: dict
    record: Optional[RunRecord]
    error: Optional[str] = None


def sweep(cells: Sequence[dict], run_cell: Callable[[dict], RunRecord],
          parallel_runs: int = 1) -> list[CellResult]:
    """Run isolated cells; a NaN abort marks the cell failed and the sweep
    continues. Results keep the input order regardless of scheduling."""
    if not cells:
        raise ContractError("sweep needs a non-empty grid")

    def one(cell: dict) -> CellResult:
        try:
            return CellResult(cell=cell, record=run_cell(cell))
        except NumericsError as e:
            return CellResult(cell=cell, record=None, error=str(e))

    if parallel_runs <= 1:
        return [one(c) for c in cells]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=parallel_runs) as pool:
        return list(pool.map(one, cells))


def aggregate_by(results: Sequence[CellResult], key: str) -> dict[str, tuple[float, float, int]]:
    """Mean/std of final accuracy grouped by a cell key; failed cells skipped."""
    groups: dict[str, list[float]] = {}
    for r in results:
        if r.record is None:
            continue
        groups.setdefault(str(r.cell.get(key)), []).append(r.record.final_accuracy)
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in groups.items()}


# -- serialization ----------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_steps_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,step,epoch,train_loss\n")
        for rec in records:
            for step, epoch, loss in rec.steps:
                fh.write(f"{rec.run_id},{step},{epoch},{_fmt(loss)}\n")


def write_epochs_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,epoch,test_loss,test_acc,lr,wall_ms\n")
        for rec in records:
            for epoch, tl, ta, lr, wall in rec.epochs:
                fh.write(f"{rec.run_id},{epoch},{_fmt(tl)},{_fmt(ta)},{_fmt(lr)},{_fmt(wall)}\n")


def write_dyn_params_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("run_id,epoch,layer,alpha,beta\n")
        for rec in records:
            for epoch, snap in rec.dyn_snapshots:
                for layer, a, b in snap:
                    fh.write(f"{rec.run_id},{epoch},{layer},{_fmt(a)},{_fmt(b)}\n")


def write_run_json(record: RunRecord, out_dir) -> str:
    path = os.path.join(out_dir, f"{record.run_id}.json")
    with open(path, "w") as fh:
        fh.write(record.to_json())
    return path
