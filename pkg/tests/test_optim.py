import numpy as np
import pytest

from dynact.autodiff import ConfigError, NumericsError, Parameter
from dynact.optim import (Adam, OptimizerConfig, RMSProp, SGD, clip_global_norm,
                          effective_lr, make_optimizer)


def cfg(**kw):
    base = dict(kind="sgd", lr=0.1, weight_decay=0.0, clip_norm=None)
    base.update(kw)
    return OptimizerConfig(**base)


def test_sgd_one_step_arithmetic():
    w = Parameter(np.array([1.0]))
    opt = SGD([w], cfg())
    w.grad[:] = 2.0
    opt.step()
    assert w.data[0] == pytest.approx(0.8)


def test_adam_zero_grad_no_motion():
    w = Parameter(np.array([1.0, -2.0]))
    opt = Adam([w], cfg(kind="adam", lr=0.001))
    for _ in range(5):
        w.grad[:] = 0.0
        opt.step()
    assert np.array_equal(w.data, [1.0, -2.0])


def test_adam_constant_grad_unit_steps():
    # scalar recurrence oracle: with g identically 1, bias-corrected update
    # is lr/(1+eps) ~ lr every step
    w = Parameter(np.array([0.0]))
    opt = Adam([w], cfg(kind="adam", lr=0.001))
    prev = 0.0
    for t in range(3):
        w.grad[:] = 1.0
        opt.step()
        delta = prev - w.data[0]
        assert delta == pytest.approx(0.001, rel=1e-6)
        prev = w.data[0]


def test_adam_matches_scalar_recurrence_oracle():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=8)
    w = Parameter(np.array([0.5]))
    opt = Adam([w], cfg(kind="adam", lr=0.01))
    m = v = 0.0
    ref = 0.5
    for t, g in enumerate(grads, start=1):
        w.grad[:] = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w.data[0] == pytest.approx(ref, rel=1e-12)


def test_rmsprop_matches_scalar_recurrence_oracle():
    w = Parameter(np.array([1.0]))
    opt = RMSProp([w], cfg(kind="rmsprop", lr=0.01))
    v = 0.0
    ref = 1.0
    for g in [1.0, -2.0, 0.5]:
        w.grad[:] = g
        opt.step()
        v = 0.99 * v + 0.01 * g * g
        ref -= 0.01 * g / (np.sqrt(v) + 1e-8)
        assert w.data[0] == pytest.approx(ref, rel=1e-12)


def test_sgd_momentum():
    w = Parameter(np.array([0.0]))
    opt = SGD([w], cfg(momentum=0.9, lr=1.0))
    w.grad[:] = 1.0
    opt.step()   # v=1, w=-1
    w.grad[:] = 1.0
    opt.step()   # v=1.9, w=-2.9
    assert w.data[0] == pytest.approx(-2.9)


def test_weight_decay_decoupled_and_exempt():
    w = Parameter(np.array([1.0]))
    e = Parameter(np.array([1.0]), weight_decay_exempt=True)
    opt = SGD([w, e], cfg(lr=0.1, weight_decay=0.5))
    w.grad[:] = 0.0
    e.grad[:] = 0.0
    opt.step()
    assert w.data[0] == pytest.approx(1.0 * (1 - 0.1 * 0.5))
    assert e.data[0] == 1.0


def test_clip_definition():
    # gradient of norm 10 clipped to norm 1; direction unchanged
    w = Parameter(np.zeros(2))
    w.grad[:] = [6.0, 8.0]
    pre = clip_global_norm([w], 1.0)
    assert pre == pytest.approx(10.0)
    assert np.linalg.norm(w.grad) == pytest.approx(1.0, abs=1e-9)
    assert w.grad[0] / w.grad[1] == pytest.approx(6.0 / 8.0)


def test_clip_noop_below_budget():
    w = Parameter(np.zeros(2))
    w.grad[:] = [0.3, 0.4]
    clip_global_norm([w], 1.0)
    assert np.allclose(w.grad, [0.3, 0.4])


def test_clip_rejects_nonfinite():
    w = Parameter(np.zeros(1))
    w.grad[:] = np.nan
    with pytest.raises(NumericsError):
        clip_global_norm([w], 1.0)


def test_scheduler_lr_formula():
    c = cfg(kind="adam", lr=0.001, scheduler="step", step_size=10, gamma=0.1)
    for epoch in range(35):
        assert effective_lr(c, epoch) == pytest.approx(0.001 * 0.1 ** (epoch // 10))


def test_scheduler_none_constant():
    c = cfg(lr=0.05)
    assert effective_lr(c, 29) == 0.05


def test_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(kind="adamw").validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(lr=0.0).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(gamma=0.0).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(clip_norm=-1.0).validate()
    with pytest.raises(ConfigError):
        OptimizerConfig(weight_decay=-1e-9).validate()


def test_make_optimizer_dispatch():
    w = Parameter(np.zeros(1))
    assert isinstance(make_optimizer([w], cfg(kind="adam")), Adam)
    assert isinstance(make_optimizer([w], cfg(kind="rmsprop")), RMSProp)
    assert isinstance(make_optimizer([w], cfg(kind="sgd")), SGD)


def test_non_trainable_params_skipped():
    w = Parameter(np.array([1.0]))
    w.trainable = False
    opt = SGD([w], cfg())
    assert opt.params == []
