"""Forward kernels against naive references and hand-worked values."""

import math

import numpy as np
import pytest

from ainet import tensor
from ainet.errors import ConfigurationError, FormatError


def naive_conv2d(x, w, b, stride, pad):
    """Quadruple-loop cross-correlation, the oracle for the fast kernel."""
    B, H, W, ci = x.shape
    kh, kw, _, co = w.shape
    ph, pw = pad
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = (H + 2 * ph - kh) // stride + 1
    wo = (W + 2 * pw - kw) // stride + 1
    out = np.zeros((B, ho, wo, co), dtype=np.float64)
    for n in range(B):
        for i in range(ho):
            for j in range(wo):
                patch = xp[n, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
                for k in range(co):
                    out[n, i, j, k] = (patch * w[:, :, :, k]).sum() + b[k]
    return out


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (7, 2)])
def test_conv2d_matches_naive_reference(k, stride):
    rng = np.random.default_rng(100 + k + stride)
    x = rng.normal(size=(2, 9, 11, 3)).astype(np.float64)
    w = rng.normal(size=(k, k, 3, 4)).astype(np.float64)
    b = rng.normal(size=4).astype(np.float64)
    kern = tensor.ConvKernel(w, b, stride)
    got = tensor.conv2d(x, kern)
    want = naive_conv2d(x, w, b, stride, kern.pad_amounts())
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 6, 5, 3)).astype(np.float32)
    w = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
    out = tensor.conv2d(x, tensor.ConvKernel(w, np.zeros(3, np.float32), 1))
    np.testing.assert_allclose(out, x, rtol=1e-6)


def test_conv2d_output_extent_is_ceil_of_stride_division():
    rng = np.random.default_rng(8)
    for H, W in [(1, 1), (2, 3), (7, 7), (16, 9), (31, 14)]:
        for k in (1, 3, 7):
            for s in (1, 2):
                x = rng.normal(size=(1, H, W, 2)).astype(np.float32)
                w = rng.normal(size=(k, k, 2, 2)).astype(np.float32)
                out = tensor.conv2d(x, tensor.ConvKernel(w, np.zeros(2, np.float32), s))
                assert out.shape[1:3] == (math.ceil(H / s), math.ceil(W / s)), (H, W, k, s)


def test_conv1d_hand_example():
    # [1,2,3,4] against an all-ones window of 3, zero padding 1
    x = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 4, 1)
    w = np.ones((3, 1, 1), dtype=np.float32)
    out = tensor.conv1d(x, tensor.ConvKernel(w, np.zeros(1, np.float32), 1))
    np.testing.assert_allclose(out.reshape(-1), [3.0, 6.0, 9.0, 7.0])


def test_conv1d_matches_flattened_conv2d():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 10, 3)).astype(np.float64)
    w = rng.normal(size=(5, 3, 4)).astype(np.float64)
    b = rng.normal(size=4)
    got = tensor.conv1d(x, tensor.ConvKernel(w, b, 2))
    via2d = tensor.conv2d(
        x[:, :, None, :], tensor.ConvKernel(w[:, None, :, :], b, 2, padding=(2, 0))
    )[:, :, 0, :]
    np.testing.assert_allclose(got, via2d, rtol=1e-12)


def test_relu_and_sigmoid_values():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(tensor.relu(x), [0.0, 0.0, 3.0])
    # sigmoid(4) = 1/(1+e^-4)
    assert tensor.sigmoid(np.array(4.0)) == pytest.approx(0.9820137900379085, abs=1e-12)
    assert tensor.sigmoid(np.array(0.0)) == pytest.approx(0.5)
    s = tensor.sigmoid(np.linspace(-30, 30, 101))
    assert np.all(s > 0) and np.all(s < 1)
    # far tails saturate to the representable bound without overflow
    assert np.isfinite(tensor.sigmoid(np.array([-500.0, 500.0]))).all()


def test_maxpool2d_ramp():
    x = np.arange(1.0, 17.0, dtype=np.float32).reshape(1, 4, 4, 1)
    out, idx = tensor.maxpool2d_with_indices(x, 2, 2)
    np.testing.assert_array_equal(out.reshape(2, 2), [[6.0, 8.0], [14.0, 16.0]])
    assert idx.shape == out.shape


def test_maxpool2d_ceil_mode_covers_odd_edge():
    x = np.arange(25.0, dtype=np.float32).reshape(1, 5, 5, 1)
    out, _ = tensor.maxpool2d_with_indices(x, 2, 2, ceil_mode=True)
    assert out.shape == (1, 3, 3, 1)
    # last row/column windows see only the in-bounds cells
    assert out[0, 2, 2, 0] == 24.0
    assert out[0, 0, 2, 0] == 9.0


def test_maxpool1d_values():
    x = np.array([3.0, 1.0, 4.0, 1.0, 5.0], dtype=np.float32).reshape(1, 5, 1)
    out, _ = tensor.maxpool1d_with_indices(x, 2, 2, ceil_mode=True)
    np.testing.assert_array_equal(out.reshape(-1), [3.0, 4.0, 5.0])


def test_softmax_hand_value():
    z = np.array([0.0, np.log(3.0)])
    np.testing.assert_allclose(tensor.softmax(z, axis=-1), [0.25, 0.75], rtol=1e-12)


def test_softmax_shift_invariance_and_overflow():
    z = np.array([1000.0, 1001.0, 999.0])
    p = tensor.softmax(z, axis=-1)
    assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(p, tensor.softmax(z - 1000.0, axis=-1), rtol=1e-12)


def test_kernels_produce_finite_outputs():
    rng = np.random.default_rng(10)
    x = (rng.normal(size=(2, 8, 8, 3)) * 100).astype(np.float32)
    w = rng.normal(size=(3, 3, 3, 8)).astype(np.float32)
    out = tensor.conv2d(x, tensor.ConvKernel(w, np.zeros(8, np.float32), 2))
    assert np.isfinite(out).all()
    assert np.isfinite(tensor.sigmoid(x)).all()


class TestTensorSerialization:
    def test_round_trip_preserves_bits_and_dtype(self, tmp_path):
        rng = np.random.default_rng(11)
        for arr in [
            rng.normal(size=(3, 4, 5)).astype(np.float32),
            rng.normal(size=(2, 2)).astype(np.float64),
            np.array(3.25, dtype=np.float32),
        ]:
            p = tmp_path / "t.aint"
            tensor.save_tensor(str(p), arr)
            back = tensor.load_tensor(str(p))
            assert back.dtype == arr.dtype
            assert back.shape == arr.shape
            assert np.array_equal(back, arr)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.aint"
        p.write_bytes(b"NOPE" + b"\x00" * 28)
        with pytest.raises(FormatError):
            tensor.load_tensor(str(p))

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "t.aint"
        tensor.save_tensor(str(p), np.ones((4, 4), dtype=np.float32))
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(FormatError):
            tensor.load_tensor(str(p))


def test_conv_kernel_validates_channels():
    x = np.zeros((1, 4, 4, 3), dtype=np.float32)
    w = np.zeros((3, 3, 2, 4), dtype=np.float32)  # c_in mismatch
    with pytest.raises(ConfigurationError):
        tensor.conv2d(x, tensor.ConvKernel(w, np.zeros(4, np.float32), 1))
