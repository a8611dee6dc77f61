"""Gradient and contract checks for the full layer catalog and the graph
executor."""

import numpy as np
import pytest

from inkline import tensor as T
from inkline.layers import (LAYER_KINDS, GraphNode, LayerGraph, LayerSpec, build_layer)
from inkline.tensor import Tensor

from gradcheck import check_gradients

rng = np.random.default_rng(7)


def _away_from_kinks(shape):
    """Random values bounded away from 0 so relu/leaky subgradients are clean."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.05, x + 0.2 * np.sign(x) + 0.1, x)


def layer_case(kind: str):
    """(spec, input arrays, call adapter) per layer kind, on small shapes."""
    if kind == "conv1d":
        return LayerSpec(kind, {"cin": 3, "cout": 4}), [rng.standard_normal((3, 7))], None
    if kind == "conv2d":
        return LayerSpec(kind, {"cin": 2, "cout": 3}), [rng.standard_normal((2, 5, 6))], None
    if kind == "linear":
        return LayerSpec(kind, {"cin": 5, "cout": 3}), [rng.standard_normal(5)], None
    if kind == "relu":
        return LayerSpec(kind), [_away_from_kinks((3, 4))], None
    if kind == "leaky-relu":
        return LayerSpec(kind, {"alpha": 0.2}), [_away_from_kinks((3, 4))], None
    if kind == "avg-pool":
        return LayerSpec(kind, {"v_factor": 2, "h_factor": 2}), [rng.standard_normal((2, 4, 6))], None
    if kind == "nearest-upsample":
        return LayerSpec(kind, {"v_factor": 2, "h_factor": 3}), [rng.standard_normal((2, 3, 4))], None
    if kind == "blur":
        return LayerSpec(kind), [rng.standard_normal((2, 4, 5))], None
    if kind == "adain":
        return LayerSpec(kind), [rng.standard_normal((2, 4, 5)),
                                 rng.uniform(0.5, 2, size=2), rng.standard_normal(2)], None
    if kind == "additive-noise":
        return LayerSpec(kind, {"channels": 3}), [rng.standard_normal((3, 4, 5))], "noise"
    if kind == "concat":
        return LayerSpec(kind, {"axis": 0}), [rng.standard_normal((2, 4)),
                                              rng.standard_normal((3, 4))], None
    if kind == "global-avg-pool":
        return LayerSpec(kind), [rng.standard_normal((3, 4, 5))], None
    if kind in ("softmax", "log-softmax"):
        return LayerSpec(kind, {"axis": -1}), [rng.standard_normal((4, 5))], None
    raise AssertionError(kind)


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_every_layer_kind_passes_finite_differences(kind):
    spec, arrays, mode = layer_case(kind)
    layer = build_layer(spec, f"t/{kind}", rng=np.random.default_rng(3), dtype=np.float64)
    call_rng = [np.random.default_rng(11)]

    def make_loss(*tensors):
        if mode == "noise":
            out = layer(*tensors, rng=np.random.default_rng(11))
        else:
            out = layer(*tensors)
        proj = np.random.default_rng(5).standard_normal(out.data.shape)
        return T.tsum(out * Tensor(proj))

    check_gradients(make_loss, arrays)
    # parameters of the layer itself must also pass
    if layer.params:
        for p in layer.params:
            p.grad = None  # clear residue from the input-gradient phase
        if mode == "noise":
            # noise scales start at zero; give them a value so grads are non-trivial
            layer.params[0].data = rng.standard_normal(layer.params[0].data.shape)
        inputs = [Tensor(a) for a in arrays]

        def param_loss():
            if mode == "noise":
                out = layer(*inputs, rng=np.random.default_rng(11))
            else:
                out = layer(*inputs)
            proj = np.random.default_rng(5).standard_normal(out.data.shape)
            return T.tsum(out * Tensor(proj))

        loss = param_loss()
        loss.backward()
        from gradcheck import fd_gradient, max_rel_error
        for p in layer.params:
            fd = fd_gradient(lambda: float(param_loss().data), p.data)
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            assert max_rel_error(analytic, fd) < 1e-4, f"{kind} param {p.id}"
            p.grad = None


def test_additive_noise_is_seed_deterministic():
    layer = build_layer(LayerSpec("additive-noise", {"channels": 2}), "t/n",
                        rng=np.random.default_rng(0), dtype=np.float64)
    layer.params[0].data = np.array([0.5, -0.3])
    x = Tensor(rng.standard_normal((2, 3, 4)))
    a = layer(x, rng=np.random.default_rng(9)).data
    b = layer(x, rng=np.random.default_rng(9)).data
    c = layer(x, rng=np.random.default_rng(10)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_unknown_layer_kind_rejected():
    with pytest.raises(ValueError):
        LayerSpec("transformer")


# -- graph executor -------------------------------------------------------------


def test_graph_identity_case():
    g = LayerGraph([], dtype=np.float64)
    x = np.array([1.0, -2.0, 3.0])
    out = g.forward({"x": x})
    assert np.array_equal(out["x"].data, x)


def test_graph_relu_example():
    g = LayerGraph([GraphNode("y", LayerSpec("relu"), ("x",))], dtype=np.float64)
    out = g.forward({"x": np.array([-1.0, 0.0, 2.0])})
    assert np.array_equal(out["y"].data, [0.0, 0.0, 2.0])


def test_graph_determinism_with_noise():
    nodes = [
        GraphNode("c", LayerSpec("conv2d", {"cin": 1, "cout": 2}), ("x",)),
        GraphNode("n", LayerSpec("additive-noise", {"channels": 2}), ("c",)),
        GraphNode("r", LayerSpec("relu"), ("n",)),
    ]
    g = LayerGraph(nodes, seed=3, dtype=np.float64)
    g.layers["n"].params[0].data = np.array([0.3, -0.2])
    x = rng.standard_normal((1, 4, 4))
    a = g.forward({"x": x}, noise_seed=5)["r"].data
    b = g.forward({"x": x}, noise_seed=5)["r"].data
    c = g.forward({"x": x}, noise_seed=6)["r"].data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_graph_backward_populates_param_grads():
    nodes = [GraphNode("c", LayerSpec("conv1d", {"cin": 2, "cout": 3}), ("x",))]
    g = LayerGraph(nodes, seed=1, dtype=np.float64)
    out = g.forward({"x": rng.standard_normal((2, 6))})
    loss = T.tsum(out["c"])
    g.backward(loss)
    assert all(p.grad is not None for p in g.parameters())


def test_graph_rejects_unknown_input():
    g = LayerGraph([GraphNode("y", LayerSpec("relu"), ("missing",))], dtype=np.float64)
    with pytest.raises(ValueError):
        g.forward({"x": np.ones(2)})


def test_graph_shape_mismatch_errors():
    g = LayerGraph([GraphNode("y", LayerSpec("conv1d", {"cin": 3, "cout": 2}), ("x",))],
                   dtype=np.float64)
    with pytest.raises(ValueError):
        g.forward({"x": np.ones((2, 5))})
