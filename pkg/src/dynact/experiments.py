"""Experiment orchestration: configs to runs to artifacts on disk."""

from __future__ import annotations

import copy
import json
import os
import numpy as np

from . import __version__
from .autodiff import ConfigError, Tape, Tensor, backward
from .activations import lipschitz_landscape
from .bench import runtime_bench, write_bench_csv
from .data import Dataset, load_mnist_idx, locate_mnist, subset, synth_blobs, synth_digits
from .glu import SwiGluBlock
from .gradcheck import run_all_checks
from .models import ModelSpec, build_model
from .optim import OptimizerConfig
from .rng import DetRng, GENERATOR_ID, STREAM_ATTACK
from .robustness import (AttackConfig, CorruptionConfig, init_heatmap,
                         robustness_report, write_robustness_csv)
from .training import (convergence_stats, sweep, train,
                    write_dyn_params_csv, write_epochs_csv, write_run_json,
                    write_steps_csv)

EXPERIMENT_KINDS = ("train", "depth-sweep", "gradcheck", "landscape", "init-heatmap",
                    "attack", "corrupt", "convergence", "sweep", "runtime-bench",
                    "glu-demo")

DEFAULT_CONFIG = {
    "experiment": "train",
    "output_dir": "out",
    "seeds": [0],
    "epochs": 3,
    "batch_size": 128,
    "parallel_runs": 1,
    "ema_window": 50,
    "model": {
        "dataset_shape": [1, 28, 28], "depth": 3, "width": 128,
        "activation": "dyn_mish", "conv_frontend": True, "dropout_p": 0.1,
        "use_batchnorm": True, "num_classes": 10, "alpha_init": 1.0,
        "beta_init": 0.0, "init_scheme": "kaiming_normal",
    },
    "optimizer": {
        "kind": "adam", "lr": 0.001, "weight_decay": 5e-9, "beta1": 0.9,
        "beta2": 0.999, "eps": 1e-8, "momentum": 0.0, "rms_alpha": 0.99,
        "scheduler": "step", "step_size": 10, "gamma": 0.1, "clip_norm": 1.0,
    },
    "data": {
        "kind": "synth_digits", "n_train": 5000, "n_test": 1000, "seed": 1234,
        "mnist_dir": None, "subset_n": None, "test_subset_n": None,
        "classes": 3, "dim": 8, "separation": 8.0,
    },
    "regularization": {"kind": None, "lambda": 0.0},
    "activations": None,            # depth-sweep / convergence comparison set
    "depths": [1, 5, 10, 15, 20, 25, 30, 40, 50, 60, 75],
    "alpha_grid": [0.0, 0.5, 1.0, 2.0],
    "beta_grid": [-0.5, 0.0, 0.5],
    "landscape": {"base": "mish", "x_lo": -8.0, "x_hi": 8.0, "x_step": 0.01,
                  "alpha_grid": None, "beta_grid": None},
    "attack": {"kind": "fgsm", "epsilons": [0.01, 0.08], "pgd_steps": 10,
               "pgd_step_size": None},
    "corruptions": {"kinds": ["gaussian_noise", "gaussian_blur", "brightness",
                              "contrast"], "severities": [1, 3, 5]},
    "sweep": {"init_schemes": ["kaiming_normal", "xavier_uniform", "normal"],
              "optimizers": ["adam", "sgd", "rmsprop"], "lrs": [0.01, 0.001, 0.0001]},
    "bench": {"activations": ["mish", "dyn_mish", "relu", "dyn_relu"],
              "batch_sizes": [32, 256], "dims": [128, 1024], "reps": 30,
              "warmup": 5, "precision": "f64"},
    "glu": {"block": "dynact_glu", "d": 8, "h": 16, "base": "silu",
            "form": "literal", "n": 64},
}


def merge_config(user: dict) -> dict:
    """Defaults overlaid with the user document; unknown keys rejected."""
    def merge(base, over, path=""):
        out = copy.deepcopy(base)
        for k, v in over.items():
            if k not in base:
                raise ConfigError(f"unknown config key '{path}{k}'")
            if isinstance(base[k], dict) and isinstance(v, dict):
                out[k] = merge(base[k], v, f"{path}{k}.")
            else:
                out[k] = copy.deepcopy(v)
        return out

    cfg = merge(DEFAULT_CONFIG, user)
    if cfg["experiment"] not in EXPERIMENT_KINDS:
        raise ConfigError(f"experiment must be one of {EXPERIMENT_KINDS}, "
                          f"got '{cfg['experiment']}'")
    if not cfg["seeds"]:
        raise ConfigError("seeds must be non-empty")
    if os.environ.get("DYNACT_OUT"):
        cfg["output_dir"] = os.environ["DYNACT_OUT"]
    return cfg


def apply_override(cfg: dict, dotted: str, raw: str) -> None:
    """Set one dot-path key, JSON-parsing the value when possible."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config path '{dotted}'")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key '{dotted}'")
    node[parts[-1]] = value


def model_spec_from(cfg: dict, **overrides) -> ModelSpec:
    raw = dict(cfg["model"])
    raw.update(overrides)
    shape = raw["dataset_shape"]
    raw["dataset_shape"] = tuple(shape) if isinstance(shape, (list, tuple)) else shape
    return ModelSpec(**raw).validate()


def optimizer_config_from(cfg: dict, **overrides) -> OptimizerConfig:
    raw = dict(cfg["optimizer"])
    raw.update(overrides)
    return OptimizerConfig(**raw).validate()


def load_datasets(cfg: dict) -> tuple[Dataset, Dataset]:
    """Resolve the data section; file existence is validated here, before
    any compute."""
    d = cfg["data"]
    kind = d["kind"]
    if kind == "mnist":
        paths = locate_mnist(d.get("mnist_dir"))
        if paths is None:
            raise ConfigError(
                "data.kind=mnist but no IDX files found (set data.mnist_dir, "
                "DYNACT_MNIST, or place files under ./data/mnist; "
                "scripts/fetch_mnist.py downloads them)")
        train_ds = load_mnist_idx(paths["train_images"], paths["train_labels"], "train")
        test_ds = load_mnist_idx(paths["test_images"], paths["test_labels"], "test")
    elif kind == "synth_digits":
        train_ds = synth_digits(d["n_train"], d["seed"], "train")
        test_ds = synth_digits(d["n_test"], d["seed"], "test")
    elif kind == "blobs":
        train_ds = synth_blobs(d["n_train"], d["classes"], d["dim"], d["separation"],
                               d["seed"])
        test_ds = synth_blobs(d["n_test"], d["classes"], d["dim"], d["separation"],
                              d["seed"] + 1)
    else:
        raise ConfigError(f"data.kind must be mnist|synth_digits|blobs, got '{kind}'")
    if d.get("subset_n"):
        train_ds = subset(train_ds, d["subset_n"], d["seed"])
    if d.get("test_subset_n"):
        test_ds = subset(test_ds, d["test_subset_n"], d["seed"] + 1)
    return train_ds, test_ds


def dataset_shape_of(ds: Dataset):
    return ds.x.shape[1:] if ds.x.ndim == 4 else int(ds.x.shape[1])


def write_manifest(cfg: dict, out_dir: str) -> str:
    manifest = {"config": cfg, "library_version": __version__, "prng": GENERATOR_ID,
                "seeds": cfg["seeds"]}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _prepare_out(cfg: dict) -> str:
    out = cfg["output_dir"]
    os.makedirs(os.path.join(out, "runs"), exist_ok=True)
    write_manifest(cfg, out)
    return out


def _train_cell(cfg: dict, train_ds: Dataset, test_ds: Dataset, seed: int,
                run_tag: str, **spec_overrides):
    spec = model_spec_from(cfg, dataset_shape=dataset_shape_of(train_ds),
                           **spec_overrides)
    model = build_model(spec, seed=seed)
    reg = cfg["regularization"]
    rec = train(model, train_ds, test_ds, optimizer_config_from(cfg),
                epochs=cfg["epochs"], seed=seed, batch_size=cfg["batch_size"],
                reg_kind=reg.get("kind"), reg_lambda=float(reg.get("lambda") or 0.0),
                run_id=run_tag,
                config={"model": {**cfg["model"], **spec_overrides},
                        "optimizer": cfg["optimizer"], "seed": seed,
                        "batch_size": cfg["batch_size"], "epochs": cfg["epochs"],
                        "regularization": reg, "data": cfg["data"]})
    return model, rec


def _emit_runs(records, out: str) -> None:
    for rec in records:
        run_dir = os.path.join(out, "runs", rec.run_id)
        os.makedirs(run_dir, exist_ok=True)
        write_run_json(rec, run_dir)
    write_steps_csv(records, os.path.join(out, "steps.csv"))
    write_epochs_csv(records, os.path.join(out, "epochs.csv"))
    write_dyn_params_csv(records, os.path.join(out, "dyn_params.csv"))


def exp_train(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    records = []
    for seed in cfg["seeds"]:
        _, rec = _train_cell(cfg, train_ds, test_ds, seed,
                             f"train_{cfg['model']['activation']}_s{seed}")
        records.append(rec)
    _emit_runs(records, out)
    accs = [r.final_accuracy for r in records]
    return {"experiment": "train", "runs": len(records),
            "mean_test_acc": float(np.mean(accs)), "std_test_acc": float(np.std(accs)),
            "output_dir": out}


def exp_depth_sweep(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    activations = cfg["activations"] or [cfg["model"]["activation"]]
    cells = [{"depth": depth, "activation": act, "seed": seed}
             for act in activations for depth in cfg["depths"] for seed in cfg["seeds"]]

    def run_cell(cell):
        _, rec = _train_cell(cfg, train_ds, test_ds, cell["seed"],
                             f"depth{cell['depth']}_{cell['activation']}_s{cell['seed']}",
                             depth=cell["depth"], activation=cell["activation"])
        return rec

    results = sweep(cells, run_cell, cfg["parallel_runs"])
    records = [r.record for r in results if r.record]
    _emit_runs(records, out)
    table = {}
    for r in results:
        key = (r.cell["activation"], r.cell["depth"])
        table.setdefault(key, []).append(
            r.record.final_accuracy if r.record else float("nan"))
    summary = [{"activation": a, "depth": d,
                "mean_acc": float(np.nanmean(v)), "std_acc": float(np.nanstd(v))}
               for (a, d), v in sorted(table.items())]
    with open(os.path.join(out, "depth_sweep.csv"), "w") as fh:
        fh.write("activation,depth,mean_acc,std_acc\n")
        for row in summary:
            fh.write(f"{row['activation']},{row['depth']},"
                     f"{repr(row['mean_acc'])},{repr(row['std_acc'])}\n")
    return {"experiment": "depth-sweep", "cells": len(cells),
            "failed": sum(1 for r in results if r.record is None),
            "summary": summary, "output_dir": out}


def exp_gradcheck(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    results = run_all_checks(seed=cfg["seeds"][0])
    rows = [{"name": r.name, "max_rel_err": r.max_rel_err,
             "threshold": r.threshold, "passed": r.passed} for r in results]
    with open(os.path.join(out, "gradcheck.json"), "w") as fh:
        json.dump(rows, fh, indent=1)
    return {"experiment": "gradcheck", "checks": rows,
            "all_passed": all(r.passed for r in results), "output_dir": out}


def exp_landscape(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    ls = cfg["landscape"]
    alphas = ls["alpha_grid"] or cfg["alpha_grid"]
    betas = ls["beta_grid"] or cfg["beta_grid"]
    mat = lipschitz_landscape(ls["base"], alphas, betas,
                              (ls["x_lo"], ls["x_hi"]), ls["x_step"])
    with open(os.path.join(out, "landscape.csv"), "w") as fh:
        fh.write("alpha,beta,lipschitz\n")
        for i, a in enumerate(alphas):
            for j, b in enumerate(betas):
                fh.write(f"{repr(float(a))},{repr(float(b))},{repr(float(mat[i, j]))}\n")
    return {"experiment": "landscape", "base": ls["base"],
            "shape": list(mat.shape), "max": float(mat.max()), "output_dir": out}


def exp_init_heatmap(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    spec = model_spec_from(cfg, dataset_shape=dataset_shape_of(train_ds))
    res = init_heatmap(train_ds, test_ds, spec, optimizer_config_from(cfg),
                       cfg["alpha_grid"], cfg["beta_grid"], cfg["seeds"],
                       epochs=cfg["epochs"], batch_size=cfg["batch_size"])
    with open(os.path.join(out, "init_heatmap.csv"), "w") as fh:
        fh.write("alpha_init,beta_init,mean_acc,std_acc\n")
        for i, a in enumerate(res.alpha_grid):
            for j, b in enumerate(res.beta_grid):
                fh.write(f"{repr(float(a))},{repr(float(b))},"
                         f"{repr(float(res.mean_acc[i, j]))},{repr(float(res.std_acc[i, j]))}\n")
    return {"experiment": "init-heatmap", "cells": res.mean_acc.size,
            "failed": len(res.failed_cells),
            "best_acc": float(np.nanmax(res.mean_acc)), "output_dir": out}


def _attack_configs(cfg: dict) -> list[AttackConfig]:
    a = cfg["attack"]
    return [AttackConfig(kind=a["kind"], epsilon=float(e), pgd_steps=a["pgd_steps"],
                         pgd_step_size=a["pgd_step_size"]).validate()
            for e in a["epsilons"]]


def exp_attack(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    seed = cfg["seeds"][0]
    model, rec = _train_cell(cfg, train_ds, test_ds, seed, f"attack_base_s{seed}")
    rows = robustness_report(model, test_ds, attacks=_attack_configs(cfg),
                             rng=DetRng(seed, STREAM_ATTACK))
    write_robustness_csv(rows, rec.run_id, os.path.join(out, "robustness.csv"))
    _emit_runs([rec], out)
    return {"experiment": "attack",
            "rows": [{"setting": r.setting, "accuracy": r.accuracy,
                      "drop_pp": r.drop_pp} for r in rows], "output_dir": out}


def exp_corrupt(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    seed = cfg["seeds"][0]
    model, rec = _train_cell(cfg, train_ds, test_ds, seed, f"corrupt_base_s{seed}")
    cors = [CorruptionConfig(kind=k, severity=s).validate()
            for k in cfg["corruptions"]["kinds"] for s in cfg["corruptions"]["severities"]]
    rows = robustness_report(model, test_ds, corruptions=cors,
                             rng=DetRng(seed, STREAM_ATTACK))
    write_robustness_csv(rows, rec.run_id, os.path.join(out, "robustness.csv"))
    _emit_runs([rec], out)
    return {"experiment": "corrupt",
            "rows": [{"setting": r.setting, "accuracy": r.accuracy,
                      "drop_pp": r.drop_pp} for r in rows], "output_dir": out}


def exp_convergence(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    activations = cfg["activations"] or [cfg["model"]["activation"]]
    records, rows = [], []
    for act in activations:
        for seed in cfg["seeds"]:
            _, rec = _train_cell(cfg, train_ds, test_ds, seed,
                                 f"conv_{act}_s{seed}", activation=act)
            stats = convergence_stats(rec, cfg["ema_window"])
            records.append(rec)
            rows.append({"activation": act, "seed": seed, "auc_loss": stats.auc_loss,
                         "steps_to_1_0": stats.steps_to_1_0,
                         "steps_to_0_5": stats.steps_to_0_5,
                         "conv_rate": stats.conv_rate})
    _emit_runs(records, out)
    with open(os.path.join(out, "convergence.csv"), "w") as fh:
        fh.write("activation,seed,auc_loss,steps_to_1_0,steps_to_0_5,conv_rate\n")
        for r in rows:
            fh.write(f"{r['activation']},{r['seed']},{repr(r['auc_loss'])},"
                     f"{r['steps_to_1_0']},{r['steps_to_0_5']},{repr(r['conv_rate'])}\n")
    return {"experiment": "convergence", "rows": rows, "output_dir": out}


def exp_sweep(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    train_ds, test_ds = load_datasets(cfg)
    sw = cfg["sweep"]
    activations = cfg["activations"] or [cfg["model"]["activation"]]
    cells = [{"activation": act, "init_scheme": sch, "optimizer": okind,
              "lr": lr, "seed": seed}
             for act in activations for sch in sw["init_schemes"]
             for okind in sw["optimizers"] for lr in sw["lrs"]
             for seed in cfg["seeds"]]

    def run_cell(cell):
        spec_over = {"activation": cell["activation"], "init_scheme": cell["init_scheme"]}
        spec = model_spec_from(cfg, dataset_shape=dataset_shape_of(train_ds), **spec_over)
        model = build_model(spec, seed=cell["seed"])
        opt = optimizer_config_from(cfg, kind=cell["optimizer"], lr=cell["lr"])
        return train(model, train_ds, test_ds, opt, cfg["epochs"], cell["seed"],
                     batch_size=cfg["batch_size"],
                     run_id=(f"sweep_{cell['activation']}_{cell['init_scheme']}_"
                             f"{cell['optimizer']}_lr{cell['lr']:g}_s{cell['seed']}"),
                     config={"cell": {k: cell[k] for k in sorted(cell)},
                             "base_optimizer": cfg["optimizer"]})

    results = sweep(cells, run_cell, cfg["parallel_runs"])
    records = [r.record for r in results if r.record]
    _emit_runs(records, out)
    from .training import aggregate_by
    agg = aggregate_by(results, "activation")
    with open(os.path.join(out, "sweep.csv"), "w") as fh:
        fh.write("activation,init_scheme,optimizer,lr,seed,final_acc,error\n")
        for r in results:
            acc = repr(r.record.final_accuracy) if r.record else ""
            fh.write(f"{r.cell['activation']},{r.cell['init_scheme']},"
                     f"{r.cell['optimizer']},{repr(float(r.cell['lr']))},"
                     f"{r.cell['seed']},{acc},{r.error or ''}\n")
    return {"experiment": "sweep", "cells": len(cells),
            "failed": sum(1 for r in results if r.record is None),
            "per_activation": {k: {"mean_acc": v[0], "std_acc": v[1], "n": v[2]}
                               for k, v in agg.items()}, "output_dir": out}


def exp_runtime_bench(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    b = cfg["bench"]
    rows = runtime_bench(b["activations"], b["batch_sizes"], b["dims"],
                         reps=b["reps"], warmup=b["warmup"],
                         precision=b["precision"], seed=cfg["seeds"][0])
    write_bench_csv(rows, os.path.join(out, "runtime_bench.csv"))
    return {"experiment": "runtime-bench", "rows": len(rows),
            "output_dir": out,
            "max_dyn_overhead_fwd": max((r.overhead_forward or 0.0) for r in rows)}


def exp_glu_demo(cfg: dict) -> dict:
    out = _prepare_out(cfg)
    g = cfg["glu"]
    seed = cfg["seeds"][0]
    rng = DetRng(seed)
    from .glu import make_block
    block = make_block(g["block"], g["d"], g["h"], base=g["base"],
                       rng=rng.substream(1), form=g["form"])
    baseline = SwiGluBlock(g["d"], g["h"], rng=rng.substream(2))
    x = Tensor(rng.normal((g["n"], g["d"])))
    from .ops import mul, sum_all
    with Tape() as tape:
        out_dyn = block(x)
        loss = sum_all(mul(out_dyn, out_dyn))
        backward(loss, tape)
    grad_norms = {p.name: float(np.linalg.norm(p.grad)) for p in block.parameters()}
    out_base = baseline(x)
    digest = {"experiment": "glu-demo", "block": g["block"], "form": g["form"],
              "dyn_out_shape": list(out_dyn.data.shape),
              "swiglu_out_shape": list(out_base.data.shape),
              "dyn_grad_norms": grad_norms, "output_dir": out}
    with open(os.path.join(out, "glu_demo.json"), "w") as fh:
        json.dump(digest, fh, indent=1)
    return digest


RUNNERS = {
    "train": exp_train,
    "depth-sweep": exp_depth_sweep,
    "gradcheck": exp_gradcheck,
    "landscape": exp_landscape,
    "init-heatmap": exp_init_heatmap,
    "attack": exp_attack,
    "corrupt": exp_corrupt,
    "convergence": exp_convergence,
    "sweep": exp_sweep,
    "runtime-bench": exp_runtime_bench,
    "glu-demo": exp_glu_demo,
}


def run_experiment(cfg: dict) -> dict:
    return RUNNERS[cfg["experiment"]](cfg)
