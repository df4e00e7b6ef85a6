import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from uvit import (ContractError, DimensionError, NumericError, Tensor, backward,
                  bilinear_resize, concat_cols, concat_rows, gather, gelu,
                  layernorm, matmul, reshape, slice_cols, softmax_rows,
                  take_rows, trace, transpose)


def test_tensor_promotes_to_float64():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.dims == (2, 2)


def test_zero_extent_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.empty((0, 3)))


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 3))
    out = matmul(Tensor(a), Tensor(b)).data
    # scalar-loop reference, no numpy linear algebra
    expect = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            acc = 0.0
            for k in range(5):
                acc += a[i, k] * b[k, j]
            expect[i, j] = acc
    assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_softmax_rows_is_row_stochastic():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((7, 11)) * 30.0   # large logits: stability matters
    s = softmax_rows(Tensor(x)).data
    assert_allclose(s.sum(axis=1), np.ones(7), rtol=0, atol=1e-9)
    assert (s >= 0).all()


def test_softmax_matches_direct_formula():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 5))
    s = softmax_rows(Tensor(x)).data
    e = np.exp(x)
    assert_allclose(s, e / e.sum(axis=1, keepdims=True), rtol=1e-12, atol=0)


def test_softmax_rejects_nan():
    bad = np.ones((2, 2))
    bad[0, 1] = np.nan
    with pytest.raises(NumericError):
        softmax_rows(Tensor(bad))


def test_layernorm_two_point_example():
    # variance of [1, 3] is 1, so the normalized row is [-1, 1] as eps -> 0
    x = Tensor(np.array([[1.0, 3.0]]))
    out = layernorm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    assert_allclose(out.data, [[-1.0, 1.0]], rtol=0, atol=1e-6)


def test_layernorm_uses_population_variance():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6))
    gamma = rng.standard_normal(6)
    beta = rng.standard_normal(6)
    eps = 1e-6
    out = layernorm(Tensor(x), Tensor(gamma), Tensor(beta), eps=eps).data
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)   # ddof=0
    expect = (x - mu) / np.sqrt(var + eps) * gamma + beta
    assert_allclose(out, expect, rtol=1e-12, atol=1e-12)


def test_layernorm_validates_inputs():
    x = Tensor(np.ones((2, 4)))
    with pytest.raises(DimensionError):
        layernorm(x, Tensor(np.ones(3)), Tensor(np.zeros(4)))
    with pytest.raises(ContractError):
        layernorm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0.0)


def test_gelu_matches_quadrature_oracle():
    # Phi(x) integrated numerically, independent of the erf implementation
    for x in (-2.0, -0.3, 0.0, 0.7, 1.0, 2.5):
        phi, _ = integrate.quad(
            lambda t: np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi), -12.0, x)
        expect = x * phi
        got = gelu(Tensor(np.array([x]))).data[0]
        assert abs(got - expect) < 1e-8


def test_gelu_known_values():
    out = gelu(Tensor(np.array([0.0]))).data
    assert out[0] == 0.0
    # gelu(x) - gelu(-x) = x exactly, since Phi(x) + Phi(-x) = 1
    x = 1.3
    a = gelu(Tensor(np.array([x]))).data[0]
    b = gelu(Tensor(np.array([-x]))).data[0]
    assert_allclose(a - b, x, rtol=1e-12)


def _bilinear_oracle(grid: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Independent align-corners reference with product weights."""
    h, w, c = grid.shape
    out = np.zeros((th, tw, c))
    for i in range(th):
        y = 0.0 if th == 1 or h == 1 else i * (h - 1) / (th - 1)
        y0 = min(int(np.floor(y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(tw):
            x = 0.0 if tw == 1 or w == 1 else j * (w - 1) / (tw - 1)
            x0 = min(int(np.floor(x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * grid[y0, x0]
                         + (1 - fy) * fx * grid[y0, x1]
                         + fy * (1 - fx) * grid[y1, x0]
                         + fy * fx * grid[y1, x1])
    return out


def test_bilinear_matches_oracle():
    rng = np.random.default_rng(4)
    for (h, w), (th, tw) in [((4, 4), (7, 7)), ((14, 14), (112, 112)),
                             ((5, 9), (3, 4)), ((1, 6), (4, 2)), ((3, 3), (1, 1))]:
        grid = rng.standard_normal((h, w, 2))
        got = bilinear_resize(Tensor(grid), th, tw).data
        assert_allclose(got, _bilinear_oracle(grid, th, tw), rtol=0, atol=1e-12)


def test_bilinear_constant_exact():
    grid = np.full((6, 5, 3), np.pi)
    out = bilinear_resize(Tensor(grid), 13, 2).data
    assert (out == np.pi).all()


def test_bilinear_corners_exact():
    rng = np.random.default_rng(5)
    grid = rng.standard_normal((9, 7, 4))
    out = bilinear_resize(Tensor(grid), 31, 17).data
    assert (out[0, 0] == grid[0, 0]).all()
    assert (out[0, -1] == grid[0, -1]).all()
    assert (out[-1, 0] == grid[-1, 0]).all()
    assert (out[-1, -1] == grid[-1, -1]).all()


def test_bilinear_reproduces_affine_ramp():
    # align-corners bilinear is exact on functions linear in the coordinates
    h, w = 5, 9
    th, tw = 11, 3
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    grid = (2.0 * ys / (h - 1) - 0.7 * xs / (w - 1) + 0.25)[..., None]
    out = bilinear_resize(Tensor(grid), th, tw).data
    tys, txs = np.meshgrid(np.arange(th), np.arange(tw), indexing="ij")
    expect = (2.0 * tys / (th - 1) - 0.7 * txs / (tw - 1) + 0.25)[..., None]
    assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_bilinear_identity_when_same_size():
    rng = np.random.default_rng(6)
    grid = rng.standard_normal((8, 8, 5))
    out = bilinear_resize(Tensor(grid), 8, 8).data
    assert (out == grid).all()


def test_movement_ops():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 6))
    t = Tensor(x)
    assert (take_rows(t, [2, 0, 2]).data == x[[2, 0, 2]]).all()
    assert (slice_cols(t, 1, 4).data == x[:, 1:4]).all()
    assert (transpose(t).data == x.T).all()
    assert (reshape(t, (2, 12)).data == x.reshape(2, 12)).all()
    stacked = concat_rows([t, t]).data
    assert (stacked == np.concatenate([x, x], axis=0)).all()
    side = concat_cols([t, t]).data
    assert (side == np.concatenate([x, x], axis=1)).all()
    flat_idx = np.array([[0, 5], [7, 23]])
    assert (gather(t, flat_idx).data == x.reshape(-1)[flat_idx]).all()


def test_movement_errors():
    t = Tensor(np.ones((3, 3)))
    with pytest.raises(DimensionError):
        take_rows(t, [3])
    with pytest.raises(DimensionError):
        slice_cols(t, 2, 2)
    with pytest.raises(DimensionError):
        reshape(t, (2, 4))
    with pytest.raises(DimensionError):
        gather(t, [9])
    with pytest.raises(DimensionError):
        concat_rows([t, Tensor(np.ones((2, 4)))])


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(t + t)


def test_backward_accumulates_shared_node():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = x + x   # dy/dx = 2
    out = (y * y).sum()   # d/dx (2x)^2 = 8x = 16
    backward(out)
    assert_allclose(x.grad, [[16.0]], rtol=1e-12)


def test_backward_overwrites_stale_grads():
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    backward((x * x).sum())
    first = x.grad.copy()
    backward((x * x).sum())
    assert (x.grad == first).all()


def test_trace_orders_parents_before_consumers():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    y = x * 3.0
    z = (y + x).sum()
    order = trace(z)
    position = {id(t): i for i, t in enumerate(order)}
    for node in order:
        for parent in node._parents:
            assert position[id(parent)] < position[id(node)]
    assert order[-1] is z


def test_no_graph_retained_without_grad():
    a = Tensor(np.ones((64, 64)))
    b = Tensor(np.ones((64, 64)))
    out = matmul(a, b)
    assert out._parents == () and out._vjp is None and not out.requires_grad
    tracked = matmul(Tensor(np.ones((2, 2)), requires_grad=True), Tensor(np.eye(2)))
    assert len(tracked._parents) == 2


def test_broadcast_add_bias():
    x = Tensor(np.zeros((3, 4)), requires_grad=True)
    bias = Tensor(np.arange(4.0), requires_grad=True)
    out = (x + bias).sum()
    backward(out)
    assert (x.grad == 1.0).all()
    assert (bias.grad == 3.0).all()   # summed over the broadcast rows
