"""Graph execution, forward_backward contract, and the finite-difference
gradient checker across every layer kind."""

import numpy as np
import pytest

from ganlab import tensor as T
from ganlab.graph import Graph, GraphError, NodeExecutionError, forward_backward, grad_check
from ganlab.tensor import Tensor


def test_sum_graph_gradient_is_ones():
    g = Graph()
    g.add_input("x")
    g.add("loss", "sum", ["x"])
    x = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    loss, grads = forward_backward(g, {"x": x}, "loss")
    np.testing.assert_allclose(grads["x"], np.ones((3, 4)))


def test_half_squared_norm_gradient_is_x():
    g = Graph()
    g.add_input("x")
    g.add_const("half", 0.5)
    g.add("n", "l2-norm", ["x"])
    g.add("n2", "mul", ["n", "n"])
    g.add("loss", "mul", ["n2", "half"])
    x_np = np.random.default_rng(1).standard_normal((3, 4))
    x = Tensor(x_np.copy(), requires_grad=True)
    loss, grads = forward_backward(g, {"x": x}, "loss")
    np.testing.assert_allclose(loss, 0.5 * np.sum(x_np ** 2), rtol=1e-6)
    np.testing.assert_allclose(grads["x"], x_np, rtol=1e-5, atol=1e-7)


def test_cycle_detection():
    g = Graph()
    g.add_input("x")
    g.add("a", "relu", ["b"])
    g.add("b", "relu", ["a"])
    with pytest.raises(GraphError, match="cycle"):
        g.run({"x": np.ones(3)}, outputs="a")


def test_shape_error_names_node():
    g = Graph()
    g.add_input("x")
    g.add_param("w", np.ones((4, 2, 3, 3), dtype=np.float32))
    g.add("bad_conv", "conv2d", ["x", "w"])
    with pytest.raises(NodeExecutionError, match="bad_conv"):
        g.run({"x": np.ones((1, 3, 8, 8), dtype=np.float32)}, outputs="bad_conv")


def test_nonfinite_loss_raises_with_diagnostics():
    g = Graph()
    g.add_input("x")
    g.add("lg", "sum", ["x"])
    with pytest.raises(T.NonFiniteError, match="lg"):
        forward_backward(g, {"x": np.array([np.inf, 1.0])}, "lg")


def test_deterministic_with_seed():
    g = Graph()
    g.add_input("x")
    g.add_param("w", np.random.default_rng(2).standard_normal((8, 4)).astype(np.float32))
    g.add("h", "dense", ["x", "w"])
    g.add("d", "dropout", ["h"], rate=0.3)
    g.add("loss", "sum", ["d"])
    x = np.random.default_rng(3).standard_normal((2, 8)).astype(np.float32)
    l1, _ = forward_backward(g, {"x": x}, "loss", rng=np.random.default_rng(7))
    l2, _ = forward_backward(g, {"x": x}, "loss", rng=np.random.default_rng(7))
    assert l1 == l2


def small_conv_net(rng, dims=2):
    """Three-layer conv net on an 8x8 (or 6^3) input, scalar loss at the end."""
    g = Graph()
    g.add_input("x")
    conv = "conv2d" if dims == 2 else "conv3d"
    c = [2, 3, 3, 2]
    k = 3
    for i in range(3):
        shape = (c[i + 1], c[i]) + (k,) * dims
        fan_in = c[i] * k ** dims
        g.add_param(f"w{i}", T.he_normal(rng, shape, fan_in, dtype=np.float32))
        g.add_param(f"b{i}", np.zeros(c[i + 1], dtype=np.float32))
        src = "x" if i == 0 else f"a{i - 1}"
        g.add(f"c{i}", conv, [src, f"w{i}", f"b{i}"], stride=1, pad=1)
        g.add(f"a{i}", "leaky-relu", [f"c{i}"], slope=0.2)
    g.add("sq", "mul", ["a2", "a2"])
    g.add("loss", "sum", ["sq"])
    return g


def test_gradcheck_conv_net_2d():
    rng = np.random.default_rng(5)
    g = small_conv_net(rng, dims=2)
    x = rng.standard_normal((2, 2, 8, 8))
    report = grad_check(g, {"x": x}, "loss", tolerance=1e-4)
    assert report.passed, report.per_param


def test_gradcheck_batchnorm_training_mode():
    rng = np.random.default_rng(6)
    g = Graph()
    g.add_input("x")
    g.add_param("gamma", rng.standard_normal(3).astype(np.float32))
    g.add_param("beta", rng.standard_normal(3).astype(np.float32))
    g.add("bn", "batch-norm", ["x", "gamma", "beta"])
    g.add("sq", "mul", ["bn", "bn"])
    g.add("loss", "sum", ["sq"])
    report = grad_check(g, {"x": rng.standard_normal((4, 3, 5, 5))}, "loss")
    assert report.passed and report.worst() < 1e-4


def test_gradcheck_tanh_chain_depth5():
    rng = np.random.default_rng(7)
    g = Graph()
    g.add_input("x")
    g.add_param("w", rng.standard_normal((6, 6)).astype(np.float32) * 0.5)
    src = "x"
    for i in range(5):
        g.add(f"h{i}", "dense", [src, "w"])
        g.add(f"t{i}", "tanh", [f"h{i}"])
        src = f"t{i}"
    g.add("loss", "sum", [src])
    report = grad_check(g, {"x": rng.standard_normal((3, 6))}, "loss")
    assert report.passed and report.worst() < 1e-4


def test_gradcheck_linear_exact_zero():
    # Dyadic weights and inputs make central differences exact for w.x.
    g = Graph()
    g.add_input("x")
    g.add_param("w", np.array([[0.5], [-0.25]], dtype=np.float32))
    g.add("h", "dense", ["x", "w"])
    g.add("loss", "sum", ["h"])
    report = grad_check(g, {"x": np.array([[1.0, 2.0]])}, "loss", epsilon=0.5)
    assert report.per_param["w"] == 0.0


def test_gradcheck_rejects_active_dropout():
    g = Graph()
    g.add_input("x")
    g.add_param("w", np.ones((3, 3), dtype=np.float32))
    g.add("h", "dense", ["x", "w"])
    g.add("d", "dropout", ["h"], rate=0.5)
    g.add("loss", "sum", ["d"])
    with pytest.raises(GraphError, match="deterministic|stochastic"):
        grad_check(g, {"x": np.ones((2, 3))}, "loss")


@pytest.mark.parametrize("kind,attrs,pshape,xshape", [
    ("conv2d", {"stride": 1, "pad": 1}, (3, 2, 3, 3), (2, 2, 6, 6)),
    ("conv3d", {"stride": 1, "pad": 1}, (2, 2, 3, 3, 3), (1, 2, 4, 4, 4)),
    ("transposed-conv", {"stride": 2, "pad": 1}, (2, 3, 4, 4), (1, 2, 4, 4)),
    ("dense", {}, (8, 3), (2, 8)),
])
def test_gradcheck_parameterized_kinds(kind, attrs, pshape, xshape):
    rng = np.random.default_rng(11)
    g = Graph()
    g.add_input("x")
    g.add_param("w", (rng.standard_normal(pshape) * 0.3).astype(np.float32))
    g.add("op", kind, ["x", "w"], **attrs)
    g.add("sq", "mul", ["op", "op"])
    g.add("loss", "sum", ["sq"])
    report = grad_check(g, {"x": rng.standard_normal(xshape)}, "loss")
    assert report.passed, report.per_param


@pytest.mark.parametrize("kind,attrs", [
    ("nearest-upsample", {}), ("average-downsample", {}),
    ("pixelwise-feature-norm", {}), ("minibatch-stddev", {}),
    ("relu", {}), ("leaky-relu", {"slope": 0.2}), ("elu", {}), ("tanh", {}), ("sigmoid", {}),
    ("mean", {}), ("l1", {}), ("l2-norm", {}),
])
def test_gradcheck_unary_kinds(kind, attrs):
    rng = np.random.default_rng(13)
    g = Graph()
    g.add_input("x")
    g.add_param("w", (rng.standard_normal((3, 2, 3, 3)) * 0.4).astype(np.float32))
    g.add("c", "conv2d", ["x", "w"], stride=1, pad=1)
    g.add("op", kind, ["c"], **attrs)
    g.add("l", "l2-norm", ["op"]) if kind in ("mean", "l1", "l2-norm") else g.add("l", "l1", ["op"])
    g.add("loss", "sum", ["l"])
    report = grad_check(g, {"x": rng.standard_normal((2, 2, 4, 4))}, "loss")
    assert report.passed, report.per_param


def test_param_checksum_changes_on_mutation():
    g = Graph()
    g.add_param("w", np.ones(3, dtype=np.float32))
    before = g.param_checksum()
    g.params["w"].data[0] = 2.0
    assert g.param_checksum() != before
