import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stftdet.tensor import (
    DimensionError,
    GradTape,
    NonFiniteError,
    Tensor,
    TensorFileError,
    add,
    bilinear_sample,
    concat,
    conv2d,
    decode_tensor,
    encode_tensor,
    exp,
    grad_check,
    group_norm,
    load_tensor,
    log,
    matmul,
    mul,
    no_grad,
    relu,
    reshape,
    save_tensor,
    softmax,
    sum_,
    transpose,
)


# ---------------------------------------------------------------------------
# naive oracles
# ---------------------------------------------------------------------------

def conv_loops(x, w, b, stride, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[n, c, i * stride + u, j * stride + v]
                    out[n, o, i, j] = acc
    return out


def matmul_loops(a, b):
    n, m = a.shape
    p = b.shape[1]
    out = np.zeros((n, p))
    for i in range(n):
        for j in range(p):
            out[i, j] = sum(a[i, k] * b[k, j] for k in range(m))
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_identity_kernel(rng):
    x = rng.normal(size=(3, 5, 6)).astype(np.float32)
    w = np.zeros((3, 3, 1, 1), np.float32)
    w[np.arange(3), np.arange(3)] = 1
    out = conv2d(x, w, np.zeros(3, np.float32))
    np.testing.assert_array_equal(out.data, x)


def test_conv_zero_weight_gives_bias(rng):
    x = rng.normal(size=(2, 4, 4)).astype(np.float32)
    out = conv2d(x, np.zeros((3, 2, 3, 3), np.float32), np.array([1.0, -2.0, 0.5], np.float32))
    np.testing.assert_array_equal(out.data, np.broadcast_to(np.array([1, -2, 0.5])[:, None, None], (3, 4, 4)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop_oracle(rng, stride):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = conv2d(x, w, b, stride=stride)
    np.testing.assert_allclose(out.data, conv_loops(x, w, b, stride, 1), atol=1e-5)


def test_conv_rejects_bad_shapes(rng):
    with pytest.raises(DimensionError):
        conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(DimensionError):
        conv2d(np.zeros((3, 4, 4)), np.zeros((1, 3, 5, 5)))


def test_conv_gradient(rng):
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    proj = rng.normal(size=(1, 3, 5, 5))
    err = grad_check(lambda t: sum_(mul(conv2d(t, w), proj)), x)
    assert err < 1e-3


# ---------------------------------------------------------------------------
# matmul / softmax
# ---------------------------------------------------------------------------

def test_matmul_hand_values():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_identity(rng):
    a = rng.normal(size=(4, 4))
    np.testing.assert_allclose(matmul(np.eye(4), a).data, a)


def test_matmul_loop_oracle(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    np.testing.assert_allclose(matmul(a, b).data, matmul_loops(a, b), atol=1e-6)


def test_softmax_constant_row_uniform():
    np.testing.assert_allclose(softmax(np.full((2, 5), 3.0)).data, 0.2)


def test_softmax_saturates():
    np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])).data, [1.0, 0.0], atol=1e-9)


def test_softmax_direct_oracle(rng):
    x = rng.normal(size=9)
    ref = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(softmax(x).data, ref, atol=1e-7)


@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = softmax(x, axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


def test_softmax_cross_entropy_gradient(rng):
    x = rng.normal(size=(4, 5)).astype(np.float32)
    onehot = np.eye(5)[rng.integers(0, 5, size=4)]
    err = grad_check(lambda t: -sum_(mul(log(softmax(t, axis=-1)), onehot)), x)
    assert err < 1e-3


# ---------------------------------------------------------------------------
# bilinear sampling
# ---------------------------------------------------------------------------

def test_bilinear_integer_coords(rng):
    f = rng.normal(size=(2, 4, 5))
    out = bilinear_sample(f, np.array([1.0, 3.0]), np.array([2.0, 0.0]))
    np.testing.assert_array_equal(out.data, f[:, [1, 3], [2, 0]])


def test_bilinear_linear_ramp():
    ramp = np.tile(np.arange(4.0), (1, 4, 1))
    assert float(bilinear_sample(ramp, 0.5, 0.5).data.squeeze()) == pytest.approx(0.5)


def test_bilinear_out_of_bounds_is_zero(rng):
    f = rng.normal(size=(3, 4, 4))
    np.testing.assert_array_equal(bilinear_sample(f, -5.0, -5.0).data, 0.0)


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------

def test_known_derivative_square():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    sum_(mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)
    assert grad_check(lambda t: sum_(mul(t, t)), np.array([1.0, 2.0])) < 1e-6


def test_shared_input_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = add(mul(x, x), mul(x, 2.0))     # x^2 + 2x
    GradTape.from_output(sum_(y)).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_broadcast_gradient_is_reduced(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)), requires_grad=True)
    sum_(add(a, b)).backward()
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = exp(x)
    assert not y.requires_grad


def test_non_scalar_backward_needs_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(RuntimeError):
        relu(x).backward()


def test_reshape_transpose_concat_grads(rng):
    x = rng.normal(size=(2, 3)).astype(np.float32)
    proj = rng.normal(size=(3, 4))
    f = lambda t: sum_(mul(concat([transpose(t, (1, 0)), reshape(t, (3, 2))], axis=1), proj))
    assert grad_check(f, x) < 1e-3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_flags_non_finite():
    with pytest.raises(NonFiniteError):
        grad_check(lambda t: sum_(log(t)), np.array([-1.0, 1.0]))


# ---------------------------------------------------------------------------
# group norm
# ---------------------------------------------------------------------------

def test_group_norm_statistics(rng):
    x = rng.normal(3.0, 2.0, size=(2, 8, 4, 4))
    y = group_norm(x, 4, np.ones(8), np.zeros(8)).data.reshape(2, 4, -1)
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-6)
    np.testing.assert_allclose(y.std(axis=-1), 1, atol=1e-3)


def test_group_norm_gradient(rng):
    x = rng.normal(size=(1, 4, 3, 3)).astype(np.float32)
    proj = rng.normal(size=(1, 4, 3, 3))
    g, b = rng.normal(size=4), rng.normal(size=4)
    assert grad_check(lambda t: sum_(mul(group_norm(t, 2, g, b), proj)), x) < 1e-3


# ---------------------------------------------------------------------------
# tensor files
# ---------------------------------------------------------------------------

@given(arrays(st.sampled_from([np.float32, np.float64]),
              st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_bytes_round_trip(arr):
    back = decode_tensor(encode_tensor(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_tensor_file_round_trip(tmp_path, rng):
    a = rng.normal(size=(3, 2, 5)).astype(np.float32)
    save_tensor(tmp_path / "a.tensor", a)
    np.testing.assert_array_equal(load_tensor(tmp_path / "a.tensor"), a)


@pytest.mark.parametrize("damage", ["truncate", "extra", "magic", "dtype", "dims"])
def test_corrupt_tensor_files_rejected(tmp_path, damage):
    buf = bytearray(encode_tensor(np.arange(12, dtype=np.float32).reshape(3, 4)))
    if damage == "truncate":
        buf = buf[:-5]
    elif damage == "extra":
        buf += b"\0"
    elif damage == "magic":
        buf[0:4] = b"NOPE"
    elif damage == "dtype":
        buf[4] = 9
    else:
        buf[6:10] = (2 ** 31).to_bytes(4, "little")
    path = tmp_path / "bad.tensor"
    path.write_bytes(bytes(buf))
    with pytest.raises(TensorFileError):
        load_tensor(path)


def test_missing_tensor_file(tmp_path):
    with pytest.raises(TensorFileError):
        load_tensor(tmp_path / "missing.tensor")
