import numpy as np
import pytest

from dynact.autodiff import ConfigError, Tensor
from dynact.glu import DynActGluBlock, SwiGluBlock
from dynact.ops import mul, sum_all
from dynact.rng import DetRng

from conftest import assert_gradients_match


def make_block(**kw):
    kw.setdefault("rng", DetRng(5))
    return DynActGluBlock(4, 8, **kw)


def test_zero_input_zero_output():
    block = make_block()
    out = block(Tensor(np.zeros((3, 4))))
    assert np.all(out.data == 0.0)
    swi = SwiGluBlock(4, 8, rng=DetRng(6))
    assert np.all(swi(Tensor(np.zeros((3, 4)))).data == 0.0)


def test_scalar_hand_evaluation_literal_form():
    # d=h=1, x=1, W1=1, Va=2, Vb=0, W2=1, base silu:
    # inner = sigma(1)*1*2 + 1*0 = 2*sigma(1); literal multiplies by xW1=1
    block = DynActGluBlock(1, 1, base="silu", rng=DetRng(0), form="literal")
    block.W1.data[:] = 1.0
    block.V_alpha.data[:] = 2.0
    block.V_beta.data[:] = 0.0
    block.W2.data[:] = 1.0
    out = block(Tensor(np.array([[1.0]])))
    assert out.data[0, 0] == pytest.approx(1.4621171572600098, abs=1e-15)


def test_swiglu_scalar_hand_evaluation():
    swi = SwiGluBlock(1, 1, rng=DetRng(0))
    swi.W1.data[:] = 1.0
    swi.V.data[:] = 1.0
    swi.W2.data[:] = 1.0
    out = swi(Tensor(np.array([[1.0]])))
    assert out.data[0, 0] == pytest.approx(0.7310585786300049, abs=1e-15)


def test_swiglu_zero_gate():
    swi = SwiGluBlock(4, 8, rng=DetRng(7))
    swi.V.data[:] = 0.0
    out = swi(Tensor(DetRng(8).normal((5, 4))))
    assert np.all(out.data == 0.0)


def test_base_independence_when_gates_equal_bitwise():
    # Va == Vb cancels the base term; mish and relu blocks agree bit for bit
    rng = DetRng(9)
    x = Tensor(rng.normal((6, 4)))
    blocks = []
    for base in ("mish", "relu"):
        b = DynActGluBlock(4, 8, base=base, rng=DetRng(10))
        b.V_beta.data[:] = b.V_alpha.data
        blocks.append(b(x).data)
    assert np.array_equal(blocks[0], blocks[1])


def test_base_matters_when_gates_differ():
    rng = DetRng(11)
    x = Tensor(rng.normal((6, 4)))
    outs = [DynActGluBlock(4, 8, base=base, rng=DetRng(12))(x).data
            for base in ("mish", "relu")]
    assert not np.allclose(outs[0], outs[1])


@pytest.mark.parametrize("form", ["literal", "gated"])
def test_output_shape_matches_input(form):
    block = make_block(form=form)
    for n in (1, 3, 17):
        out = block(Tensor(DetRng(13).normal((n, 4))))
        assert out.data.shape == (n, 4)


@pytest.mark.parametrize("form", ["literal", "gated"])
def test_glu_gradients_match_fd(form):
    rng = DetRng(14)
    block = DynActGluBlock(8, 4, base="silu", rng=rng, form=form)
    x = Tensor(rng.normal((4, 8)))

    def build():
        out = block(x)
        return sum_all(mul(out, out))

    assert_gradients_match(build, block.parameters(), tol=1e-6)


def test_swiglu_gradients_match_fd():
    rng = DetRng(15)
    block = SwiGluBlock(8, 4, rng=rng)
    x = Tensor(rng.normal((4, 8)))

    def build():
        out = block(x)
        return sum_all(mul(out, out))

    assert_gradients_match(build, block.parameters(), tol=1e-6)


def test_dimension_mismatch_is_config_error():
    block = make_block()
    with pytest.raises(ConfigError):
        block(Tensor(np.zeros((2, 5))))
    with pytest.raises(ConfigError):
        DynActGluBlock(4, 8, form="beside")


def test_literal_and_gated_differ():
    rng = DetRng(16)
    x = Tensor(rng.normal((5, 4)))
    lit = DynActGluBlock(4, 8, rng=DetRng(17), form="literal")(x).data
    gat = DynActGluBlock(4, 8, rng=DetRng(17), form="gated")(x).data
    assert not np.allclose(lit, gat)


def test_init_distribution_scale():
    block = DynActGluBlock(256, 512, rng=DetRng(18))
    assert abs(block.W1.data.std() - 1 / np.sqrt(256)) < 0.005


def test_make_block_config_names():
    from dynact.glu import make_block
    assert isinstance(make_block("dynact_glu", 4, 8, rng=DetRng(19)), DynActGluBlock)
    assert isinstance(make_block("swiglu", 4, 8, rng=DetRng(19)), SwiGluBlock)
    with pytest.raises(ConfigError):
        make_block("glu", 4, 8)
