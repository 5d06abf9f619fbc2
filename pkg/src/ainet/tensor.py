"""Dense tensor conventions and the primitive forward kernels.

Tensors are plain numpy arrays, row-major, channels-last:
images (H, W, C) or batched (B, H, W, C); sequences (L, C) or (B, L, C).
Two precisions are supported: STANDARD (float32) for training and
EXTENDED (float64) for gradient checking. Kernels preserve input dtype.

Convolutions are cross-correlations (no kernel flip) with zero padding of
floor(k/2) per spatial side by default, so output extents are ceil(extent/stride)
for odd kernel sizes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, FormatError

STANDARD = np.float32
EXTENDED = np.float64

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {"f4": 1, "f8": 2}


@dataclass
class ConvKernel:
    """Weights and geometry of one convolution.

    weights: (kh, kw, c_in, c_out) for 2-D, (k, c_in, c_out) for 1-D.
    padding: zero padding per spatial axis; None means floor(k/2) ("same"
    up to the stride, which makes strided convs emit ceil(extent/stride)).
    """

    weights: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: tuple[int, ...] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim not in (3, 4):
            raise ConfigurationError(f"conv weights must be 3-D or 4-D, got shape {w.shape}")
        if any(e < 1 for e in w.shape):
            raise ConfigurationError(f"conv weight extents must be >= 1, got {w.shape}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        b = np.asarray(self.bias)
        if b.shape != (w.shape[-1],):
            raise ConfigurationError(
                f"bias shape {b.shape} does not match c_out={w.shape[-1]}"
            )
        if self.padding is not None:
            pads = tuple(self.padding)
            if len(pads) != w.ndim - 2 or any(p < 0 for p in pads):
                raise ConfigurationError(f"bad padding {self.padding} for weights {w.shape}")
            self.padding = pads

    @property
    def spatial_ndim(self) -> int:
        return self.weights.ndim - 2

    @property
    def c_in(self) -> int:
        return self.weights.shape[-2]

    @property
    def c_out(self) -> int:
        return self.weights.shape[-1]

    def pad_amounts(self) -> tuple[int, ...]:
        if self.padding is not None:
            return self.padding
        return tuple(k // 2 for k in self.weights.shape[: self.spatial_ndim])


def _as_batched(x: np.ndarray, spatial_ndim: int) -> tuple[np.ndarray, bool]:
    want = spatial_ndim + 2  # batch + spatial + channels
    if x.ndim == want:
        return x, False
    if x.ndim == want - 1:
        return x[None], True
    raise ConfigurationError(f"expected {want - 1}-D or {want}-D input, got shape {x.shape}")


def im2col2d(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    """Window-patch matrix of a padded (B, H', W', C) map.

    Rows follow (b, oy, ox), columns (ki, kj, c) — the same flattening as
    weights.reshape(kh*kw*ci, co), so conv is a single matmul.
    """
    if kh == 1 and kw == 1 and s == 1:
        return xp.reshape(-1, xp.shape[-1])
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::s, ::s][:, :ho, :wo]  # (B, ho, wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(
        -1, kh * kw * xp.shape[-1]
    )


def im2col1d(xp: np.ndarray, k: int, s: int, lo: int) -> np.ndarray:
    """1-D analogue of im2col2d on (B, L', C); columns ordered (ki, c)."""
    if k == 1 and s == 1:
        return xp.reshape(-1, xp.shape[-1])
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)
    win = win[:, ::s][:, :lo]  # (B, lo, C, k)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(-1, k * xp.shape[-1])


def conv2d_with_cols(x: np.ndarray, kernel: ConvKernel) -> tuple[np.ndarray, np.ndarray]:
    """conv2d that also returns the patch matrix it used, so a backward
    pass can compute the weight gradient without rebuilding it."""
    x = np.asarray(x)
    xb, squeeze = _as_batched(x, 2)
    w, b, s = np.asarray(kernel.weights), np.asarray(kernel.bias), kernel.stride
    kh, kw, ci, co = w.shape
    ph, pw = kernel.pad_amounts()
    B, H, W, C = xb.shape
    if C != ci:
        raise ConfigurationError(f"input has {C} channels, kernel expects {ci}")
    if H < 1 or W < 1:
        raise DomainError(f"zero-sized spatial input {xb.shape}")
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise DomainError(
            f"kernel {kh}x{kw} exceeds padded input {H + 2 * ph}x{W + 2 * pw}"
        )
    ho = (H + 2 * ph - kh) // s + 1
    wo = (W + 2 * pw - kw) // s + 1
    xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else xb
    cols = im2col2d(xp, kh, kw, s, ho, wo)
    acc = cols @ w.reshape(-1, co).astype(xb.dtype, copy=False)
    acc += b.astype(xb.dtype, copy=False)
    out = acc.reshape(B, ho, wo, co)
    return (out[0] if squeeze else out), cols


def conv2d(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Strided 2-D cross-correlation with zero padding.

    x: (H, W, c_in) or (B, H, W, c_in); output spatial extents are
    ((H + 2p - kh) // s) + 1, which equals ceil(H / s) for odd kh with
    default padding. Implemented as im2col plus one matmul.
    """
    return conv2d_with_cols(x, kernel)[0]


def conv1d_with_cols(x: np.ndarray, kernel: ConvKernel) -> tuple[np.ndarray, np.ndarray]:
    """conv1d that also returns its patch matrix; see conv2d_with_cols."""
    x = np.asarray(x)
    xb, squeeze = _as_batched(x, 1)
    w, b, s = np.asarray(kernel.weights), np.asarray(kernel.bias), kernel.stride
    k, ci, co = w.shape
    (p,) = kernel.pad_amounts()
    B, L, C = xb.shape
    if C != ci:
        raise ConfigurationError(f"input has {C} channels, kernel expects {ci}")
    if L < 1:
        raise DomainError(f"zero-sized input {xb.shape}")
    if L + 2 * p < k:
        raise DomainError(f"kernel {k} exceeds padded input {L + 2 * p}")
    lo = (L + 2 * p - k) // s + 1
    xp = np.pad(xb, ((0, 0), (p, p), (0, 0))) if p else xb
    cols = im2col1d(xp, k, s, lo)
    acc = cols @ w.reshape(-1, co).astype(xb.dtype, copy=False)
    acc += b.astype(xb.dtype, copy=False)
    out = acc.reshape(B, lo, co)
    return (out[0] if squeeze else out), cols


def conv1d(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Strided 1-D cross-correlation; x: (L, c_in) or (B, L, c_in)."""
    return conv1d_with_cols(x, kernel)[0]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x), 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic; outputs lie strictly inside (0, 1)."""
    x = np.asarray(x)
    dt = x.dtype if x.dtype.kind == "f" else EXTENDED
    # exp(-|x|) never overflows: 1/(1+e) for x >= 0, e/(1+e) below
    e = x.astype(dt, copy=True)
    np.abs(e, out=e)
    np.negative(e, out=e)
    np.exp(e, out=e)
    num = np.where(x >= 0, 1.0, e)
    e += 1.0
    num /= e
    return num


def maxpool2d_with_indices(
    x: np.ndarray, window: int, stride: int, ceil_mode: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window, per-channel maximum plus flat argmax indices.

    Indices address the (possibly right/bottom extended) window in row-major
    (ki, kw + kj) order; ties go to the first occurrence. With ceil_mode the
    right/bottom border may use partial windows so output extents are
    ceil(extent / stride) when window == stride.
    """
    x = np.asarray(x)
    xb, squeeze = _as_batched(x, 2)
    k, s = window, stride
    if k < 1 or s < 1:
        raise ConfigurationError(f"window and stride must be >= 1, got {k}, {s}")
    B, H, W, C = xb.shape
    if H < k or W < k:
        if not ceil_mode:
            raise DomainError(f"window {k} larger than input {H}x{W}")
    if ceil_mode:
        ho = max(1, -(-(H - k) // s) + 1)
        wo = max(1, -(-(W - k) // s) + 1)
        need_h = (ho - 1) * s + k
        need_w = (wo - 1) * s + k
        if need_h > H or need_w > W:
            fill = np.finfo(xb.dtype).min if xb.dtype.kind == "f" else np.iinfo(xb.dtype).min
            xb = np.pad(
                xb,
                ((0, 0), (0, need_h - H), (0, need_w - W), (0, 0)),
                constant_values=fill,
            )
    else:
        ho = (H - k) // s + 1
        wo = (W - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(xb, (k, k), axis=(1, 2))
    win = win[:, ::s, ::s][:, :ho, :wo]  # (B, ho, wo, C, k, k)
    flat = win.reshape(B, ho, wo, C, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out, idx = out[0], idx[0]
    return out, idx


def maxpool2d(x: np.ndarray, window: int, stride: int, ceil_mode: bool = False) -> np.ndarray:
    return maxpool2d_with_indices(x, window, stride, ceil_mode)[0]


def maxpool1d_with_indices(
    x: np.ndarray, window: int, stride: int, ceil_mode: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """1-D analogue of maxpool2d_with_indices on (L, C) / (B, L, C)."""
    x = np.asarray(x)
    xb, squeeze = _as_batched(x, 1)
    k, s = window, stride
    if k < 1 or s < 1:
        raise ConfigurationError(f"window and stride must be >= 1, got {k}, {s}")
    B, L, C = xb.shape
    if L < k and not ceil_mode:
        raise DomainError(f"window {k} larger than input length {L}")
    if ceil_mode:
        lo = max(1, -(-(L - k) // s) + 1)
        need = (lo - 1) * s + k
        if need > L:
            fill = np.finfo(xb.dtype).min
            xb = np.pad(xb, ((0, 0), (0, need - L), (0, 0)), constant_values=fill)
    else:
        lo = (L - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(xb, k, axis=1)
    win = win[:, ::s][:, :lo]  # (B, lo, C, k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        out, idx = out[0], idx[0]
    return out, idx


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def linear_softmax(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Fully connected layer followed by softmax; x: (c,) or (B, c)."""
    x, w, b = np.asarray(x), np.asarray(weights), np.asarray(bias)
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ConfigurationError(
            f"linear dims disagree: x {x.shape}, weights {w.shape}, bias {b.shape}"
        )
    return softmax(x @ w + b, axis=-1)


# --- serialization -----------------------------------------------------------
#
# Flat little-endian binary: 16-byte header (magic b"AINT", u32 dtype code,
# u64 rank), then rank u64 extents, then raw elements.

_MAGIC = b"AINT"


def save_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    kind = arr.dtype.str.lstrip("<>|=")
    if kind not in _CODE_FOR_KIND:
        arr = arr.astype(EXTENDED)
        kind = "f8"
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _CODE_FOR_KIND[kind], arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=f"<{kind}").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) != 16 or head[:4] != _MAGIC:
            raise FormatError(f"{path}: bad magic/header")
        code, rank = struct.unpack("<IQ", head[4:])
        if code not in _DTYPE_CODES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        if rank > 32:
            raise FormatError(f"{path}: implausible rank {rank}")
        shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        dtype = _DTYPE_CODES[code]
        n = int(np.prod(shape)) if rank else 1
        raw = f.read(n * dtype.itemsize)
        if len(raw) != n * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload ({len(raw)} bytes)")
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
