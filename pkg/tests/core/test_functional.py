"""Gradient and value checks for the differentiable primitives."""
import numpy as np
import pytest

from latxgen.core import functional as F
from latxgen.core.errors import ShapeError, SpectralSizeError
from latxgen.core.tensor import ComplexTensor, Tensor

from .gradcheck import check_gradients


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection so every output element reaches the loss with its own weight."""
    return F.sum(F.mul(out, weights))


# ---------------------------------------------------------------------------
# Elementwise and reductions
# ---------------------------------------------------------------------------


def test_elementwise_ops_gradcheck(rng: np.random.Generator) -> None:
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4))
    w = rng.normal(size=(3, 4))
    check_gradients(lambda x, y: weighted(F.div(F.mul(x, y), y + 1.0), w), a, b)
    check_gradients(lambda x: weighted(F.exp(F.scale(x, 0.5)), w), a)
    check_gradients(lambda y: weighted(F.log(y), w), b)
    check_gradients(lambda x: weighted(F.sigmoid(x), w), a)
    check_gradients(lambda x: weighted(F.leaky_relu(x, 0.2), w), a)


def test_softmax_rows_sum_to_one_and_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(2, 5, 3))
    out = F.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), np.ones((2, 5)))
    w = rng.normal(size=(2, 5, 3))
    check_gradients(lambda t: weighted(F.softmax(t, axis=1), w), x)


def test_softmax_rejects_bad_axis() -> None:
    with pytest.raises(ShapeError):
        F.softmax(Tensor(np.zeros((2, 2))), axis=2)


def test_reductions_and_shape_ops_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(2, 3, 4))
    w = rng.normal(size=(3,))
    check_gradients(lambda t: weighted(F.mean(t, axis=(0, 2)), w), x)
    w2 = rng.normal(size=(4, 6))
    check_gradients(lambda t: weighted(F.reshape(F.transpose(t, (2, 0, 1)), (4, 6)), w2), x)
    w3 = rng.normal(size=(2, 1, 4))
    check_gradients(lambda t: weighted(F.getitem(t, (slice(None), slice(1, 2))), w3), x)


def test_concat_pad_and_split(rng: np.random.Generator) -> None:
    a = rng.normal(size=(1, 2, 3, 3))
    b = rng.normal(size=(1, 1, 3, 3))
    w = rng.normal(size=(1, 3, 5, 6))
    check_gradients(lambda x, y: weighted(F.pad2d(F.concat([x, y], axis=1), 1, 1, 0, 3), w), a, b)
    parts = F.split_channels(Tensor(np.concatenate([a, b], axis=1)), [2, 1])
    np.testing.assert_array_equal(parts[1].data, b)
    with pytest.raises(ShapeError):
        F.split_channels(Tensor(a), [1, 2])


def test_matmul_and_linear(rng: np.random.Generator) -> None:
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))
    w = rng.normal(size=(2, 3, 5))
    check_gradients(lambda x, y: weighted(F.matmul(x, y), w), a, b)
    weight = rng.normal(size=(6, 4))
    bias = rng.normal(size=(6,))
    w2 = rng.normal(size=(2, 3, 6))
    check_gradients(lambda x, k, c: weighted(F.linear(x, k, c), w2), a, weight, bias)
    with pytest.raises(ShapeError, match="inner dimension"):
        F.matmul(Tensor(a), Tensor(a))


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def test_conv2d_matches_direct_sum() -> None:
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    k = np.array([[[[1.0, 0.0], [0.0, -1.0]]]])
    out = F.conv2d(Tensor(x), Tensor(k)).data
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(out, np.full((1, 1, 3, 3), -5.0))


def test_conv2d_is_linear_in_its_input(rng: np.random.Generator) -> None:
    a, b = rng.normal(size=(2, 1, 2, 5, 5))
    w = Tensor(rng.normal(size=(3, 2, 3, 3)))
    combined = F.conv2d(Tensor(2.0 * a - 3.0 * b), w, padding=1).data
    separate = 2.0 * F.conv2d(Tensor(a), w, padding=1).data - 3.0 * F.conv2d(Tensor(b), w, padding=1).data
    np.testing.assert_allclose(combined, separate, atol=1e-10)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (2, 0)])
def test_conv2d_gradcheck(rng: np.random.Generator, stride: int, padding: int) -> None:
    x = rng.normal(size=(2, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    out_shape = F.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=padding).shape
    w = rng.normal(size=out_shape)
    check_gradients(lambda a, c, d: weighted(F.conv2d(a, c, d, stride=stride, padding=padding), w), x, k, b)


def test_conv2d_shape_errors_name_the_dimension() -> None:
    with pytest.raises(ShapeError, match="C_in"):
        F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError, match="rank"):
        F.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))
    with pytest.raises(ShapeError, match="height"):
        F.conv2d(Tensor(np.zeros((1, 1, 2, 8))), Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_transpose2d_doubles_resolution_and_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(1, 2, 3, 3))
    k = rng.normal(size=(2, 3, 4, 4))
    b = rng.normal(size=(3,))
    out = F.conv_transpose2d(Tensor(x), Tensor(k), Tensor(b), stride=2, padding=1)
    assert out.shape == (1, 3, 6, 6)
    w = rng.normal(size=out.shape)
    check_gradients(lambda a, c, d: weighted(F.conv_transpose2d(a, c, d, stride=2, padding=1), w), x, k, b)


def test_conv_transpose2d_is_adjoint_of_conv2d(rng: np.random.Generator) -> None:
    x = rng.normal(size=(1, 2, 6, 6))
    y = rng.normal(size=(1, 3, 3, 3))
    k = rng.normal(size=(3, 2, 4, 4))
    lhs = np.sum(F.conv2d(Tensor(x), Tensor(k), stride=2, padding=1).data * y)
    rhs = np.sum(x * F.conv_transpose2d(Tensor(y), Tensor(k), stride=2, padding=1).data)
    assert lhs == pytest.approx(rhs)


# ---------------------------------------------------------------------------
# Sampling and deformable convolution
# ---------------------------------------------------------------------------


def test_identity_affine_grid_reproduces_input(rng: np.random.Generator) -> None:
    x = rng.normal(size=(2, 3, 5, 7))
    theta = np.tile(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), (2, 1, 1))
    grid = F.affine_grid(Tensor(theta), 5, 7)
    np.testing.assert_allclose(F.grid_sample(Tensor(x), grid).data, x, atol=1e-12)


def test_grid_sample_outside_image_is_zero() -> None:
    x = np.ones((1, 1, 4, 4))
    grid = np.full((1, 2, 2, 2), 3.0)
    np.testing.assert_array_equal(F.grid_sample(Tensor(x), Tensor(grid)).data, np.zeros((1, 1, 2, 2)))


def test_grid_sample_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(1, 2, 4, 5))
    grid = rng.uniform(-0.8, 0.8, size=(1, 3, 3, 2))
    w = rng.normal(size=(1, 2, 3, 3))
    check_gradients(lambda a, g: weighted(F.grid_sample(a, g), w), x, grid)


def test_affine_grid_gradcheck(rng: np.random.Generator) -> None:
    theta = rng.normal(size=(2, 2, 3))
    w = rng.normal(size=(2, 3, 4, 2))
    check_gradients(lambda t: weighted(F.affine_grid(t, 3, 4), w), theta)


def test_deform_conv_with_zero_offsets_equals_conv2d(rng: np.random.Generator) -> None:
    x = rng.normal(size=(2, 3, 6, 5))
    k = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=(4,))
    offsets = np.zeros((2, 18, 6, 5))
    deform = F.deform_conv2d(Tensor(x), Tensor(k), Tensor(offsets), Tensor(b), padding=1).data
    plain = F.conv2d(Tensor(x), Tensor(k), Tensor(b), padding=1).data
    np.testing.assert_allclose(deform, plain, atol=1e-12)


def test_deform_conv_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(1, 2, 4, 4))
    k = rng.normal(size=(2, 2, 3, 3))
    b = rng.normal(size=(2,))
    offsets = rng.uniform(0.1, 0.4, size=(1, 18, 4, 4)) * rng.choice([-1.0, 1.0], size=(1, 18, 4, 4))
    w = rng.normal(size=(1, 2, 4, 4))
    check_gradients(
        lambda a, c, o, d: weighted(F.deform_conv2d(a, c, o, d, padding=1), w), x, k, offsets, b
    )


def test_deform_conv_rejects_wrong_offset_channels() -> None:
    with pytest.raises(ShapeError, match="2\\*kH\\*kW"):
        F.deform_conv2d(
            Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 9, 4, 4))), padding=1
        )


# ---------------------------------------------------------------------------
# Batch norm
# ---------------------------------------------------------------------------


def test_batchnorm_normalises_per_channel_and_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(loc=3.0, scale=2.0, size=(4, 2, 3, 3))
    out, mean, var = F.batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), [0.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(mean, x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(var, x.var(axis=(0, 2, 3)))
    gamma = rng.uniform(0.5, 1.5, size=(2,))
    beta = rng.normal(size=(2,))
    w = rng.normal(size=x.shape)
    check_gradients(lambda a, g, b: weighted(F.batchnorm2d(a, g, b)[0], w), x, gamma, beta)


# ---------------------------------------------------------------------------
# Spectral transforms
# ---------------------------------------------------------------------------


def naive_dft2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fh @ x @ fw.T


def test_fft2_matches_naive_dft(rng: np.random.Generator) -> None:
    x = rng.normal(size=(4, 8))
    z = F.fft2(Tensor(x))
    np.testing.assert_allclose(z.numpy(), naive_dft2(x), atol=1e-10)


def test_ifft2_inverts_fft2(rng: np.random.Generator) -> None:
    x = rng.normal(size=(2, 3, 8, 4))
    back = F.ifft2_real(F.fft2(Tensor(x)))
    np.testing.assert_allclose(back.data, x, atol=1e-12)


def test_fft2_preserves_energy(rng: np.random.Generator) -> None:
    x = rng.normal(size=(8, 4))
    z = F.fft2(Tensor(x))
    energy = (np.square(z.real.data) + np.square(z.imag.data)).sum() / x.size
    assert energy == pytest.approx(np.square(x).sum(), rel=1e-10)


def test_fft2_rejects_non_power_of_two_size() -> None:
    with pytest.raises(SpectralSizeError, match="H=6"):
        F.fft2(Tensor(np.zeros((6, 8))))
    with pytest.raises(SpectralSizeError, match="W=5"):
        F.fft2(Tensor(np.zeros((4, 5))))


def test_spectral_round_trip_gradcheck(rng: np.random.Generator) -> None:
    x = rng.normal(size=(1, 2, 4, 4))
    w_re = rng.normal(size=(1, 2, 4, 4))
    w_im = rng.normal(size=(1, 2, 4, 4))
    check_gradients(
        lambda t: F.add(weighted(F.fft2(t).real, w_re), weighted(F.fft2(t).imag, w_im)), x
    )
    check_gradients(lambda t: weighted(F.ifft2_real(ComplexTensor(t, F.scale(t, 0.5))), w_re), x)


def test_next_power_of_two() -> None:
    assert [F.next_power_of_two(n) for n in (1, 2, 3, 24, 32, 33)] == [1, 2, 4, 32, 32, 64]


# ---------------------------------------------------------------------------
# Loss primitives
# ---------------------------------------------------------------------------


def test_bce_with_logits_value_and_gradcheck(rng: np.random.Generator) -> None:
    assert F.bce_with_logits(Tensor(np.zeros(4)), 1.0).item() == pytest.approx(np.log(2.0))
    z = rng.normal(size=(2, 3))
    check_gradients(lambda t: F.bce_with_logits(t, 0.0), z)
    check_gradients(lambda t: F.bce_with_logits(t, 1.0), z)
