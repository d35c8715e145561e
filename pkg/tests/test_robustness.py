import hashlib

import numpy as np
import pytest

from dynact.autodiff import ConfigError, Parameter, Tape, Tensor
from dynact.data import synth_blobs, synth_digits
from dynact.models import ModelSpec, build_model
from dynact.ops import matmul, mul, sum_all
from dynact.optim import OptimizerConfig
from dynact.rng import DetRng
from dynact.robustness import (AttackConfig, CorruptionConfig, corrupt, fgsm,
                               gradient_flow_probe, init_heatmap, input_gradient,
                               pgd, robustness_report)
from dynact.training import train


@pytest.fixture(scope="module")
def small_trained():
    train_ds = synth_digits(600, seed=0, split="train")
    test_ds = synth_digits(200, seed=0, split="test")
    spec = ModelSpec(dataset_shape=(1, 28, 28), depth=1, width=32,
                     activation="dyn_mish", conv_frontend=True, dropout_p=0.0,
                     use_batchnorm=True, num_classes=10)
    model = build_model(spec, seed=0)
    train(model, train_ds, test_ds,
          OptimizerConfig(kind="adam", lr=0.002, clip_norm=1.0), epochs=2,
          seed=0, batch_size=64)
    return model, test_ds


def param_hash(model):
    h = hashlib.sha256()
    for p in model.parameters():
        h.update(p.data.tobytes())
    return h.hexdigest()


def test_fgsm_eps0_identity(small_trained):
    model, ds = small_trained
    x, y = ds.x[:32], ds.labels[:32]
    x_adv = fgsm(model, x, y, 0.0, normalization=ds.normalization)
    assert np.array_equal(x_adv, x)


def test_fgsm_scalar_toy_hand_gradient():
    # L = (w*x - 0)^2 with w=1: dL/dx = 2x > 0 at x=0.3, so fgsm adds eps
    w = Parameter(np.array([[1.0]]))
    x = Tensor(np.array([[0.3]]), requires_grad=True)
    with Tape() as t:
        out = matmul(x, w)
        loss = sum_all(mul(out, out))
        from dynact.autodiff import grad_wrt
        (g,) = grad_wrt(loss, t, [x])
    x_adv = np.clip(x.data + 0.1 * np.sign(g), 0.0, 1.0)
    assert x_adv[0, 0] == pytest.approx(0.4)


def test_sign_zero_convention():
    assert np.sign(0.0) == 0.0


def test_fgsm_budget_invariant(small_trained):
    model, ds = small_trained
    x, y = ds.x[:64], ds.labels[:64]
    for eps in (0.01, 0.08):
        x_adv = fgsm(model, x, y, eps, normalization=ds.normalization)
        assert np.abs(x_adv - x).max() <= eps + 1e-9
        assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


def test_pgd_budget_invariant_and_range(small_trained):
    model, ds = small_trained
    x, y = ds.x[:48], ds.labels[:48]
    cfg = AttackConfig(kind="pgd", epsilon=0.03, pgd_steps=5)
    x_adv = pgd(model, x, y, cfg, rng=DetRng(1))
    assert np.abs(x_adv - x).max() <= 0.03 + 1e-9
    assert x_adv.min() >= 0.0 and x_adv.max() <= 1.0


def test_pgd_eps0_identity(small_trained):
    model, ds = small_trained
    x, y = ds.x[:16], ds.labels[:16]
    cfg = AttackConfig(kind="pgd", epsilon=0.0, pgd_steps=3)
    assert np.array_equal(pgd(model, x, y, cfg, rng=DetRng(2)), x)


def test_pgd_one_step_no_start_equals_fgsm(small_trained):
    model, ds = small_trained
    x, y = ds.x[:16], ds.labels[:16]
    eps = 0.02
    cfg = AttackConfig(kind="pgd", epsilon=eps, pgd_steps=1,
                       pgd_step_size=eps, random_start=False)
    a = pgd(model, x, y, cfg, normalization=ds.normalization)
    b = fgsm(model, x, y, eps, normalization=ds.normalization)
    assert np.array_equal(a, b)


def test_attacks_do_not_mutate_parameters(small_trained):
    model, ds = small_trained
    before = param_hash(model)
    fgsm(model, ds.x[:32], ds.labels[:32], 0.05, normalization=ds.normalization)
    pgd(model, ds.x[:32], ds.labels[:32],
        AttackConfig(kind="pgd", epsilon=0.05, pgd_steps=3), rng=DetRng(3),
        normalization=ds.normalization)
    assert param_hash(model) == before


def test_input_gradient_folds_normalization(small_trained):
    model, ds = small_trained
    x, y = ds.x[:8], ds.labels[:8]
    g_norm = input_gradient(model, x, y, ds.normalization)
    g_raw = input_gradient(model, x, y, None)
    assert not np.allclose(g_norm, g_raw)


# -- corruptions ---------------------------------------------------------------

def test_brightness_additive():
    x = np.full((2, 1, 4, 4), 0.5)
    out = corrupt(x, CorruptionConfig("brightness", 1), DetRng(0))
    assert np.allclose(out, 0.6)


def test_contrast_constant_image_unchanged():
    x = np.full((2, 1, 4, 4), 0.37)
    out = corrupt(x, CorruptionConfig("contrast", 5), DetRng(0))
    assert np.allclose(out, 0.37)


def test_contrast_shrinks_toward_mean():
    x = np.zeros((1, 1, 2, 2))
    x[0, 0] = [[0.0, 1.0], [0.0, 1.0]]
    out = corrupt(x, CorruptionConfig("contrast", 1), DetRng(0))
    assert np.allclose(out[0, 0], [[0.125, 0.875], [0.125, 0.875]])


def test_noise_sigma_statistical_oracle():
    x = np.full((10, 1, 100, 100), 0.5)
    out = corrupt(x, CorruptionConfig("gaussian_noise", 5), DetRng(4))
    delta = out - x  # clipping at +-2.5 sigma trims ~1% of mass
    assert abs(delta.std() - 0.20) <= 0.005


def test_noise_severity_table():
    x = np.full((4, 1, 50, 50), 0.5)
    stds = [(corrupt(x, CorruptionConfig("gaussian_noise", s), DetRng(5)) - x).std()
            for s in (1, 3, 5)]
    assert stds[0] < stds[1] < stds[2]
    assert abs(stds[0] - 0.04) < 0.003


def test_blur_preserves_mean_and_smooths():
    rng = DetRng(6)
    x = rng.uniform((2, 1, 28, 28))
    out = corrupt(x, CorruptionConfig("gaussian_blur", 3), DetRng(7))
    assert abs(out.mean() - x.mean()) < 0.01
    assert out.var() < x.var()


def test_blur_severity_monotone_smoothing():
    rng = DetRng(8)
    x = rng.uniform((1, 1, 28, 28))
    variances = [corrupt(x, CorruptionConfig("gaussian_blur", s), DetRng(9)).var()
                 for s in (1, 5)]
    assert variances[1] < variances[0]


def test_corruption_determinism():
    x = DetRng(10).uniform((3, 1, 8, 8))
    a = corrupt(x, CorruptionConfig("gaussian_noise", 2), DetRng(11))
    b = corrupt(x, CorruptionConfig("gaussian_noise", 2), DetRng(11))
    assert np.array_equal(a, b)


def test_severity_bounds_enforced():
    x = np.zeros((1, 1, 4, 4))
    with pytest.raises(ConfigError):
        corrupt(x, CorruptionConfig("gaussian_noise", 0), DetRng(0))
    with pytest.raises(ConfigError):
        corrupt(x, CorruptionConfig("gaussian_noise", 6), DetRng(0))
    with pytest.raises(ConfigError):
        corrupt(x, CorruptionConfig("fog", 1), DetRng(0))


# -- report -------------------------------------------------------------------

def test_report_clean_only(small_trained):
    model, ds = small_trained
    rows = robustness_report(model, ds)
    assert len(rows) == 1
    assert rows[0].setting == "clean" and rows[0].drop_pp == 0.0


def test_report_eps0_drop_exactly_zero(small_trained):
    model, ds = small_trained
    rows = robustness_report(model, ds, attacks=[AttackConfig("fgsm", 0.0)])
    assert rows[1].drop_pp == 0.0


def test_report_rows_and_drops(small_trained):
    model, ds = small_trained
    rows = robustness_report(
        model, ds,
        attacks=[AttackConfig("fgsm", 0.01), AttackConfig("fgsm", 0.08)],
        corruptions=[CorruptionConfig("gaussian_noise", 3)], rng=DetRng(12))
    assert len(rows) == 4
    clean = rows[0].accuracy
    for r in rows[1:]:
        assert r.drop_pp == pytest.approx((clean - r.accuracy) * 100.0)


# -- init heatmap ----------------------------------------------------------------

def test_init_heatmap_grid_shape_and_default_cell():
    train_ds = synth_blobs(400, 3, 6, 9.0, seed=20)
    test_ds = synth_blobs(150, 3, 6, 9.0, seed=21)
    spec = ModelSpec(dataset_shape=6, depth=1, width=16, activation="dyn_mish",
                     conv_frontend=False, dropout_p=0.0, use_batchnorm=True,
                     num_classes=3)
    res = init_heatmap(train_ds, test_ds, spec,
                       OptimizerConfig(kind="adam", lr=0.01, clip_norm=1.0),
                       alpha_grid=[0.0, 1.0], beta_grid=[0.0], seeds=[0, 1],
                       epochs=2, batch_size=64)
    assert res.mean_acc.shape == (2, 1)
    assert np.isfinite(res.mean_acc).all()
    # (1, 0) trains fine on separable blobs; (0, 0) starts from the zero map
    assert res.mean_acc[1, 0] > 0.9
    assert res.failed_cells == []


# -- gradient flow probe ------------------------------------------------------------

def test_probe_output_length_and_abscissa():
    rows = gradient_flow_probe(depth=4, activation="dyn_mish", n_batches=1,
                               width=16, batch_size=8, seed=0)
    assert len(rows) == 4
    assert [r[0] for r in rows] == pytest.approx([0.25, 0.5, 0.75, 1.0])
    assert all(g >= 0 for _, g in rows)


def test_probe_relu_decays_toward_input_at_depth():
    # majority vote over 3 seeds: shallow-layer grads smaller than deep-layer
    votes = 0
    for seed in range(3):
        rows = gradient_flow_probe(depth=30, activation="relu", n_batches=2,
                                   width=32, batch_size=32, seed=seed)
        shallow = np.mean([g for t, g in rows if t <= 0.2])
        deep = np.mean([g for t, g in rows if t >= 0.8])
        votes += shallow < deep
    assert votes >= 2


def test_probe_depth_bound():
    with pytest.raises(ConfigError):
        gradient_flow_probe(depth=1, activation="relu")
