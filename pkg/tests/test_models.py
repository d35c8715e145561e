import numpy as np
import pytest

from dynact.activations import DynActivation, StaticActivation
from dynact.autodiff import ConfigError, Tensor
from dynact.models import (ModelSpec, build_model, count_parameters,
                           snapshot_activation_params)
from dynact.rng import DetRng


def fc_spec(**kw):
    base = dict(dataset_shape=784, depth=1, width=128, activation="dyn_mish",
                conv_frontend=False, dropout_p=0.1, use_batchnorm=True,
                num_classes=10)
    base.update(kw)
    return ModelSpec(**base)


def test_parameter_count_oracle():
    # 784*128+128 weights+bias, head 128*10+10, BN gamma+beta 2*128
    expected = 784 * 128 + 128 + 128 * 10 + 10 + 2 * 128
    static_net = build_model(fc_spec(activation="mish"), seed=0)
    assert count_parameters(static_net) == expected
    # the dyn wrapper adds exactly one (alpha, beta) pair per site
    dyn_net = build_model(fc_spec(activation="dyn_mish"), seed=0)
    assert count_parameters(dyn_net) == expected + 2


def test_depth_zero_rejected():
    with pytest.raises(ConfigError):
        build_model(fc_spec(depth=0), seed=0)


def test_depth_76_rejected():
    with pytest.raises(ConfigError):
        build_model(fc_spec(depth=76), seed=0)


def test_activation_site_count_with_frontend():
    spec = fc_spec(dataset_shape=(1, 28, 28), conv_frontend=True, depth=50)
    net = build_model(spec, seed=0)
    assert len(net.dyn_layers()) == 52
    snap = snapshot_activation_params(net)
    assert len(snap) == 52
    assert snap[0][0] == "conv_1" and snap[1][0] == "conv_2"
    assert snap[-1][0] == "fc_50"


def test_snapshot_default_init_values():
    net = build_model(fc_spec(depth=3), seed=0)
    for name, a, b in snapshot_activation_params(net):
        assert (a, b) == (1.0, 0.0)


def test_snapshot_empty_for_static_net():
    net = build_model(fc_spec(activation="relu"), seed=0)
    assert snapshot_activation_params(net) == []


def test_unresolvable_activation_name():
    with pytest.raises(ConfigError):
        build_model(fc_spec(activation="dyn_unknown"), seed=0)


@pytest.mark.parametrize("depth", [1, 5, 25, 50, 75])
def test_forward_shape_across_depths(depth):
    spec = fc_spec(depth=depth, width=32)
    net = build_model(spec, seed=0).eval()
    out = net.forward(Tensor(DetRng(1).normal((4, 784))))
    assert out.data.shape == (4, 10)


def test_conv_frontend_shapes():
    spec = fc_spec(dataset_shape=(1, 28, 28), conv_frontend=True, depth=2, width=64)
    net = build_model(spec, seed=0).eval()
    out = net.forward(Tensor(DetRng(2).normal((3, 1, 28, 28))))
    assert out.data.shape == (3, 10)


def test_dyn_at_default_init_bit_matches_static():
    # same weights, alpha=1/beta=0, dropout off -> logits identical
    for base in ("mish", "relu", "gelu"):
        dyn_net = build_model(fc_spec(activation=f"dyn_{base}", depth=3,
                                      dropout_p=0.0), seed=7)
        static_net = build_model(fc_spec(activation=base, depth=3,
                                         dropout_p=0.0), seed=7)
        x = Tensor(DetRng(3).normal((5, 784)))
        dyn_net.eval()
        static_net.eval()
        out_d = dyn_net.forward(x)
        out_s = static_net.forward(x)
        assert np.array_equal(out_d.data, out_s.data), base


def test_same_seed_same_weights_across_activation_choice():
    # layer construction consumes the init stream identically for dyn/static
    a = build_model(fc_spec(activation="dyn_mish"), seed=9)
    b = build_model(fc_spec(activation="mish"), seed=9)
    pa = [p for p in a.parameters() if p.name.endswith(".W")]
    pb = [p for p in b.parameters() if p.name.endswith(".W")]
    for x, y in zip(pa, pb):
        assert np.array_equal(x.data, y.data)


def test_train_eval_mode_propagates():
    net = build_model(fc_spec(depth=2), seed=0)
    net.eval()
    assert all(not l.training for l in net.layers if hasattr(l, "training"))
    net.train()
    assert all(l.training for l in net.layers if hasattr(l, "training"))


def test_dropout_needs_rng_in_train_mode():
    net = build_model(fc_spec(depth=1, dropout_p=0.5), seed=0)
    net.train()
    with pytest.raises(ConfigError):
        net.forward(Tensor(DetRng(4).normal((2, 784))))
    net.set_dropout_rng(DetRng(0))
    net.forward(Tensor(DetRng(4).normal((2, 784))))


def test_capture_activations_records_sites():
    net = build_model(fc_spec(depth=4, dropout_p=0.0), seed=0).eval()
    net.forward(Tensor(DetRng(5).normal((2, 784))), capture_activations=True)
    names = [n for n, _ in net.last_activations]
    assert names == ["fc_1", "fc_2", "fc_3", "fc_4"]


def test_init_schemes_differ():
    ka = build_model(fc_spec(init_scheme="kaiming_normal"), seed=1)
    xa = build_model(fc_spec(init_scheme="xavier_uniform"), seed=1)
    nn = build_model(fc_spec(init_scheme="normal"), seed=1)
    w = lambda net: net.parameters()[0].data
    assert not np.array_equal(w(ka), w(xa))
    assert abs(w(nn).std() - 0.02) < 0.001


def test_kaiming_scale():
    net = build_model(fc_spec(width=256), seed=2)
    w = net.parameters()[0].data  # 784 x 256
    assert abs(w.std() - np.sqrt(2.0 / 784)) < 0.002


def test_heatmap_symmetry_linear_start():
    # alpha=beta=c nets forward exactly like scalar-multiplication activations
    from dynact.activations import BaseActivation

    c = 0.6
    spec = fc_spec(depth=2, dropout_p=0.0, alpha_init=c, beta_init=c)
    net = build_model(spec, seed=3).eval()
    ref = build_model(fc_spec(depth=2, dropout_p=0.0), seed=3).eval()
    scale_by_c = BaseActivation(
        name=f"scale_{c}", f=lambda v: c * np.asarray(v, dtype=np.float64),
        d=lambda v: np.full_like(np.asarray(v, dtype=np.float64), c))
    swapped = []
    for layer in ref.layers:
        if isinstance(layer, DynActivation):
            swapped.append(StaticActivation(scale_by_c, name=layer.name))
        else:
            swapped.append(layer)
    ref.layers = swapped
    x = Tensor(DetRng(6).normal((4, 784)))
    assert np.allclose(net.forward(x).data, ref.forward(x).data, atol=1e-12)
