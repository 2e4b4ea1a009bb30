import numpy as np
import pytest

from dpcc import autodiff as ad
from dpcc.autodiff import (
    MLP, ParamStore, Tensor, clamp, concat, gather, grad_check, l2norm,
    matmul, relu, reshape, sigmoid, softmax, softplus, tabs, tanh, texp,
    tlog, tmean, transpose, tsqrt, tsum,
)


def rand_away_from_kinks(rng, shape, kinks=(0.0,), margin=1e-3):
    """Uniform in [-2, 2], nudged off kink points so central FD stays valid."""
    x = rng.uniform(-2.0, 2.0, size=shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x[near] = k + margin * np.sign(x[near] - k + 0.5)
    return x


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = Tensor(np.eye(2))
    out = matmul(a, eye)
    assert np.allclose(out.data, a.data)


def test_softmax_symmetry():
    out = softmax(Tensor([[0.0, 0.0, 0.0]]))
    assert np.allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])


def test_relu_definition():
    out = relu(Tensor([-1.0, 2.0, -3.0]))
    assert np.allclose(out.data, [0.0, 2.0, 0.0])


def test_backward_sum_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    tsum(x).backward()
    assert np.allclose(x.grad, [1.0, 1.0, 1.0])


def test_backward_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    tsum(x * x).backward()
    assert np.allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_softmax_sums_to_one():
    x = Tensor([0.3, -1.2, 0.7], requires_grad=True)
    tsum(softmax(x, axis=0)).backward()
    assert np.max(np.abs(x.grad)) < 1e-10


def test_backward_accumulates_on_repeat():
    x = Tensor([1.0, 1.0], requires_grad=True)
    out = tsum(x * 2.0)
    out.backward()
    g1 = x.grad.copy()
    out2 = tsum(x * 2.0)
    out2.backward()
    assert np.allclose(x.grad, 2 * g1)


def test_non_scalar_root_raises():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeError):
        (x * 2.0).backward()


def test_shape_mismatch_named():
    with pytest.raises(ad.ShapeError) as ei:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "matmul" in str(ei.value)


def test_diamond_graph_accumulates_both_paths():
    # y = sum((x*2) * (x*3)) = 6*sum(x^2), dy/dx = 12x
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    a = x * 2.0
    b = x * 3.0
    tsum(a * b).backward()
    assert np.allclose(x.grad, 12.0 * x.data)


def test_row_broadcast_add_backward():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
    tsum((x + b) * (x + b)).backward()
    assert b.grad.shape == (1, 3)
    assert np.allclose(b.grad, (2 * (x.data + b.data)).sum(axis=0, keepdims=True))


PRIMITIVE_CASES = [
    ("add", lambda x: tsum((x + x) * 1.7), ()),
    ("sub", lambda x: tsum((x - 0.3) * (x - 0.3)), ()),
    ("mul", lambda x: tsum(x * x * x), ()),
    ("div", lambda x: tsum(ad.div(x, x * x + 3.0)), ()),
    ("scalar_mul", lambda x: tsum(x * -2.5), ()),
    ("relu", lambda x: tsum(relu(x)), (0.0,)),
    ("sigmoid", lambda x: tsum(sigmoid(x) * sigmoid(x)), ()),
    ("tanh", lambda x: tsum(tanh(x)), ()),
    ("exp", lambda x: tsum(texp(x)), ()),
    ("log", lambda x: tsum(tlog(x * x + 0.5)), ()),
    ("sqrt", lambda x: tsum(tsqrt(x * x + 0.1)), ()),
    ("softplus", lambda x: tsum(softplus(x)), ()),
    ("abs", lambda x: tsum(tabs(x)), (0.0,)),
    ("clamp", lambda x: tsum(clamp(x, -1.0, 1.0) * x), (-1.0, 1.0)),
    ("softmax", lambda x: tsum(softmax(x, axis=1) * x), ()),
    ("sum_axis", lambda x: tsum(tsum(x, axis=0) * 2.0), ()),
    ("mean_axis", lambda x: tsum(tmean(x, axis=1) * 3.0), ()),
    ("reshape", lambda x: tsum(reshape(x, (2, 6)) * reshape(x, (2, 6))), ()),
    ("transpose", lambda x: tsum(matmul(transpose(x), x)), ()),
    ("l2norm", lambda x: tsum(l2norm(x, axis=1)), ()),
    ("concat", lambda x: tsum(concat([x, x * 2.0], axis=1)), ()),
    ("gather", lambda x: tsum(gather(x, np.array([0, 2, 2, 1]))), ()),
    ("matmul", lambda x: tsum(matmul(x, transpose(x))), ()),
]


@pytest.mark.parametrize("name,f,kinks", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, f, kinks):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = Tensor(rand_away_from_kinks(rng, (3, 4), kinks=kinks or (0.0,)))
        report = grad_check(f, x, eps=1e-5, tol=1e-5)
        assert report.passed, f"{name} seed {seed}: {report}"


def test_grad_check_matmul_example():
    rng = np.random.default_rng(7)
    w = rng.standard_normal((4, 3))
    x = Tensor(rng.standard_normal((3, 2)))
    report = grad_check(lambda t: tsum(matmul(Tensor(w), t)), x, eps=1e-4, tol=1e-6)
    assert report.passed


def test_forward_determinism():
    def run():
        rng = np.random.default_rng(42)
        store = ParamStore()
        mlp = MLP(store, "m", [4, 8, 8], rng=rng)
        x = Tensor(np.linspace(-1, 1, 12).reshape(3, 4))
        return mlp(x).data
    a, b = run(), run()
    assert np.array_equal(a, b)


def test_mlp_zero_weights_gives_bias():
    store = ParamStore()
    rng = np.random.default_rng(0)
    mlp = MLP(store, "m", [4, 8], activations=["linear"], rng=rng)
    store["m.w0"].tensor.data[:] = 0.0
    store["m.b0"].tensor.data[:] = 1.5
    out = mlp(Tensor(np.ones((3, 4))))
    assert np.allclose(out.data, 1.5)


def test_mlp_identity():
    store = ParamStore()
    rng = np.random.default_rng(0)
    mlp = MLP(store, "m", [4, 4], activations=["linear"], rng=rng)
    store["m.w0"].tensor.data[:] = np.eye(4)
    store["m.b0"].tensor.data[:] = 0.0
    x = np.arange(8.0).reshape(2, 4)
    assert np.allclose(mlp(Tensor(x)).data, x)


def test_mlp_shape_contract():
    store = ParamStore()
    mlp = MLP(store, "m", [4, 8, 8], rng=np.random.default_rng(1))
    out = mlp(Tensor(np.zeros((5, 4))))
    assert out.shape == (5, 8)


def test_mlp_gradients():
    store = ParamStore()
    rng = np.random.default_rng(3)
    mlp = MLP(store, "m", [3, 6, 2], rng=rng)
    x0 = rng.standard_normal((4, 3))

    def f(t):
        return tsum(mlp(t) * mlp(t))

    report = grad_check(f, Tensor(x0), eps=1e-5, tol=1e-5)
    assert report.passed, str(report)


def test_param_store_duplicate_rejected():
    store = ParamStore()
    store.add("p", np.zeros(3))
    with pytest.raises(ValueError):
        store.add("p", np.zeros(3))
