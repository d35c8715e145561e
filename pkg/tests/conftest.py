import os

# pin BLAS threads before numpy loads anywhere; keeps runs bit-reproducible
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from dynact.autodiff import Tape, backward


def numerical_gradient(build_loss, param, h=1e-5):
    """Central finite differences of a scalar loss wrt one tensor, elementwise.

    Independent oracle: re-runs the full forward per perturbed entry and
    never touches the tape's backward rules.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(build_loss().data)
        flat[i] = orig - h
        down = float(build_loss().data)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.data.shape)


def analytic_gradients(build_loss, params):
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = build_loss()
        backward(loss, tape)
    return [p.grad.copy() for p in params]


def rel_err(a, b, floor=1e-2):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def assert_gradients_match(build_loss, params, tol=1e-6, h=1e-5):
    ana = analytic_gradients(build_loss, params)
    for p, g in zip(params, ana):
        fd = numerical_gradient(build_loss, p, h=h)
        worst = rel_err(g, fd).max()
        assert worst < tol, f"{p} grad mismatch: rel err {worst:.3e} >= {tol}"


@pytest.fixture(scope="session")
def mnist_or_stand_in():
    """Real MNIST when the user supplied it, else the deterministic
    digit-glyph stand-in (clearly labeled in test output)."""
    from dynact.data import locate_mnist, load_mnist_idx, synth_digits

    paths = locate_mnist()
    if paths is not None:
        train = load_mnist_idx(paths["train_images"], paths["train_labels"], "train")
        test = load_mnist_idx(paths["test_images"], paths["test_labels"], "test")
        return train, test, "mnist"
    return (synth_digits(7000, seed=1234, split="train"),
            synth_digits(2000, seed=1234, split="test"), "synthetic-digits")
