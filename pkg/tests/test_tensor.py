import numpy as np
import pytest

from inkline import tensor as T
from inkline.tensor import NonFiniteError, Parameter, Tensor

from gradcheck import check_gradients

rng = np.random.default_rng(42)


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2).backward()


def test_backward_before_forward_is_structural():
    # a leaf has no graph; backward on it is legal but a no-op beyond seeding
    p = Parameter("p", np.array(1.0))
    loss = p * 3.0
    loss.backward()
    assert p.grad == pytest.approx(3.0)


def test_linear_matches_finite_differences():
    w = rng.standard_normal((4, 6))
    x = rng.standard_normal(6)
    check_gradients(lambda wt: T.tsum(T.matmul(wt, Tensor(x))), [w])


def test_chain_of_two_linear_layers():
    w1 = rng.standard_normal((5, 4))
    w2 = rng.standard_normal((3, 5))
    x = rng.standard_normal(4)
    check_gradients(
        lambda a, b: T.tsum(T.matmul(b, T.relu(T.matmul(a, Tensor(x)) + 0.3))),
        [w1, w2],
    )


def test_unreachable_parameter_has_absent_grad():
    p = Parameter("used", np.array([1.0, 2.0]))
    q = Parameter("unused", np.array([3.0]))
    loss = T.tsum(p * p)
    loss.backward()
    assert p.grad is not None
    assert q.grad is None


def test_grad_accumulates_across_uses():
    p = Parameter("p", np.array(2.0))
    loss = p * p + p  # dl/dp = 2p + 1 = 5
    loss.backward()
    assert p.grad == pytest.approx(5.0)


def test_no_grad_blocks_recording():
    p = Parameter("p", np.array(1.5))
    with T.no_grad():
        out = p * 3.0
    assert not out.requires_grad
    assert out._backward is None


def test_detach_breaks_graph():
    p = Parameter("p", np.array(2.0))
    loss = T.tsum(p.detach() * p)
    loss.backward()
    assert p.grad == pytest.approx(2.0)  # only the non-detached use


def test_broadcast_add_unbroadcasts_grad():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((1, 4))
    proj = rng.standard_normal((3, 4))
    check_gradients(lambda x, y: T.tsum((x + y) * Tensor(proj)), [a, b])


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 1), False)])
def test_mean_axes(axis, keepdims):
    x = rng.standard_normal((3, 5))
    proj = rng.standard_normal(np.mean(x, axis=axis, keepdims=keepdims).shape)
    check_gradients(lambda t: T.tsum(T.tmean(t, axis=axis, keepdims=keepdims) * Tensor(proj)), [x])


def test_getitem_and_concat_roundtrip():
    x = rng.standard_normal((4, 6))
    proj = rng.standard_normal((4, 6))

    def loss(t):
        parts = [t[:, :2], t[:, 2:5], t[:, 5:]]
        return T.tsum(T.concat(parts, axis=1) * Tensor(proj))

    check_gradients(loss, [x])


def test_pad_gradient():
    x = rng.standard_normal((2, 3, 4))
    proj = rng.standard_normal((2, 5, 8))
    check_gradients(
        lambda t: T.tsum(T.pad(t, ((0, 0), (1, 1), (2, 2)), value=1.0) * Tensor(proj)), [x])


# -- adain spec examples -----------------------------------------------------


def test_adain_normalizes_channel():
    x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    out = T.adain(x, np.array([1.0]), np.array([0.0])).data
    assert abs(out.mean()) < 1e-6
    assert abs(np.sqrt((out ** 2).mean()) - 1.0) < 1e-3


def test_adain_constant_channel_gives_shift():
    x = Tensor(np.full((1, 6), 2.5))
    out = T.adain(x, np.array([3.0]), np.array([0.7])).data
    assert np.allclose(out, 0.7, atol=1e-3)


def test_adain_derived_values():
    # population std of [1,2,3,4] is sqrt(1.25); scale 2, shift 1
    x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    out = T.adain(x, np.array([2.0]), np.array([1.0])).data
    expect = np.array([-1.6833, 0.1056, 1.8944, 3.6833])
    assert np.allclose(out[0], expect, atol=1e-3)


def test_adain_channel_mismatch_errors():
    with pytest.raises(ValueError):
        T.adain(Tensor(np.ones((2, 3))), np.ones(3), np.ones(3))


def test_adain_statistics_property():
    for _ in range(20):
        c, h, w = 3, 4, 5
        x = rng.standard_normal((c, h, w)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
        scale = rng.uniform(-2, 2, size=c)
        shift = rng.uniform(-2, 2, size=c)
        eps = 1e-5
        if min(x[i].var() for i in range(c)) <= 10 * eps:
            continue
        out = T.adain(Tensor(x), scale, shift, eps=eps).data
        for i in range(c):
            assert abs(out[i].mean() - shift[i]) < 1e-3
            assert abs(out[i].std() - abs(scale[i])) < 1e-2


# -- upsample spec examples ----------------------------------------------------


def test_upsample_vertical():
    out = T.upsample_nearest(Tensor(np.array([[1.0, 2.0]])), 2, 1).data
    assert np.array_equal(out, [[1, 2], [1, 2]])


def test_upsample_horizontal():
    out = T.upsample_nearest(Tensor(np.array([[1.0, 2.0]])), 1, 2).data
    assert np.array_equal(out, [[1, 1, 2, 2]])


def test_upsample_shape_contract():
    out = T.upsample_nearest(Tensor(rng.standard_normal((3, 4, 5))), 2, 2)
    assert out.data.shape == (3, 8, 10)


def test_upsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        T.upsample_nearest(Tensor(np.ones((1, 2, 2))), 0, 1)


def test_upsample_then_avgpool_is_identity():
    for _ in range(10):
        v, h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.standard_normal((2, 3, 4))
        y = T.avg_pool(T.upsample_nearest(Tensor(x), v, h), v, h).data
        assert np.allclose(y, x, atol=1e-12)


def test_check_finite_raises():
    with pytest.raises(NonFiniteError):
        T.check_finite(Tensor(np.array([1.0, np.nan])), "probe")
