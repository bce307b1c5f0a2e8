"""Differentiable array operators with hand-written backward passes.

Every operator comes as a ``forward(...) -> (out, cache)`` /
``backward(grad_out, cache) -> grad_in`` pair. Learnable tensors are
:class:`DiffArray` instances; backward passes *accumulate* into their
``grad`` buffers, so callers zero them between steps.

Operators are dtype-preserving: the model trains in float32 and gradient
checks run the same code in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CheckFailedError, DimensionError


@dataclass(eq=False)
class DiffArray:
    """A value array paired with a same-shaped gradient accumulator."""

    values: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        elif self.grad.shape != self.values.shape:
            raise DimensionError(f"grad shape {self.grad.shape} != values shape {self.values.shape}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def astype(self, dtype) -> "DiffArray":
        return DiffArray(self.values.astype(dtype))


@dataclass(eq=False)
class ConvSpec:
    """Kernel, bias, stride and zero padding of a (transposed) convolution.

    For :func:`conv2d` the kernel is ``(out_ch, in_ch, kh, kw)``. The same spec
    used by :func:`deconv2d` maps ``out_ch`` channels back to ``in_ch``, which
    makes the two operators adjoint; the bias then has ``in_ch`` entries.
    """

    kernel: DiffArray
    bias: DiffArray | None = None
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if not isinstance(self.kernel, DiffArray):
            self.kernel = DiffArray(self.kernel)
        if self.bias is not None and not isinstance(self.bias, DiffArray):
            self.bias = DiffArray(self.bias)
        if self.kernel.values.ndim != 4:
            raise DimensionError(f"kernel must be 4D, got shape {self.kernel.shape}")
        if self.stride < 1 or self.padding < 0:
            raise DimensionError("stride must be >= 1 and padding >= 0")

    def params(self):
        return [self.kernel] if self.bias is None else [self.kernel, self.bias]


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def _im2col(xp, kh, kw, stride, ho, wo):
    # (N, C, Hp, Wp) -> (N, C*kh*kw, ho*wo)
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for p in range(kh):
        for q in range(kw):
            cols[:, :, p, q] = xp[:, :, p:p + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, shape, kh, kw, stride, ho, wo):
    # adjoint of _im2col: scatter-add (N, C*kh*kw, ho*wo) patches into (N, C, Hp, Wp)
    n, c = shape[:2]
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for p in range(kh):
        for q in range(kw):
            out[:, :, p:p + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride] += cols[:, :, p, q]
    return out


def conv2d(x: np.ndarray, spec: ConvSpec):
    """Zero-padded cross-correlation of ``(N, Cin, H, W)`` input."""
    w = spec.kernel.values
    cout, cin, kh, kw = w.shape
    if x.ndim != 4 or x.shape[1] != cin:
        raise DimensionError(f"conv2d expects (N, {cin}, H, W) input, got {x.shape}")
    n, _, h, wd = x.shape
    s, pad = spec.stride, spec.padding
    ho, wo = conv_output_size(h, kh, s, pad), conv_output_size(wd, kw, s, pad)
    if ho < 1 or wo < 1:
        raise DimensionError(f"kernel {kh}x{kw} does not fit {h}x{wd} input with padding {pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, kh, kw, s, ho, wo)
    y = w.reshape(cout, -1) @ cols
    if spec.bias is not None:
        y += spec.bias.values[:, None]
    return y.reshape(n, cout, ho, wo), (cols, xp.shape, x.shape, spec)


def conv2d_backward(dy: np.ndarray, cache) -> np.ndarray:
    cols, padded_shape, in_shape, spec = cache
    w = spec.kernel.values
    cout, cin, kh, kw = w.shape
    n, _, ho, wo = dy.shape
    dyf = np.ascontiguousarray(dy).reshape(n, cout, ho * wo)
    spec.kernel.grad += (dyf @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    if spec.bias is not None:
        spec.bias.grad += dyf.sum(axis=(0, 2))
    dxp = _col2im(w.reshape(cout, -1).T @ dyf, padded_shape, kh, kw, spec.stride, ho, wo)
    pad = spec.padding
    if pad:
        dxp = np.ascontiguousarray(dxp[:, :, pad:pad + in_shape[2], pad:pad + in_shape[3]])
    return dxp


def deconv2d(x: np.ndarray, spec: ConvSpec, output_size=None):
    """Transposed convolution: the adjoint of :func:`conv2d` with the same spec.

    The natural output side is ``(H-1)*stride - 2*padding + kh``. When the
    forward conv dropped trailing rows/cols (stride > 1), pass the conv's input
    size as ``output_size`` to recover the exact adjoint.
    """
    w = spec.kernel.values
    cin, cout, kh, kw = w.shape
    if x.ndim != 4 or x.shape[1] != cin:
        raise DimensionError(f"deconv2d expects (N, {cin}, H, W) input, got {x.shape}")
    n, _, h, wd = x.shape
    s, pad = spec.stride, spec.padding
    ho, wo = deconv_output_size(h, kh, s, pad), deconv_output_size(wd, kw, s, pad)
    if output_size is not None:
        th, tw = output_size
        if not (ho <= th < ho + s and wo <= tw < wo + s):
            raise DimensionError(f"output_size {output_size} incompatible with natural size {(ho, wo)}")
        ho, wo = th, tw
    if ho < 1 or wo < 1:
        raise DimensionError(f"deconv2d output would be empty for {h}x{wd} input")
    full_shape = (n, cout, max((h - 1) * s + kh, pad + ho), max((wd - 1) * s + kw, pad + wo))
    xf = np.ascontiguousarray(x).reshape(n, cin, h * wd)
    full = _col2im(w.reshape(cin, -1).T @ xf, full_shape, kh, kw, s, h, wd)
    y = full[:, :, pad:pad + ho, pad:pad + wo]
    if spec.bias is not None:
        y = y + spec.bias.values[:, None, None]
    return np.ascontiguousarray(y), (xf, x.shape, full_shape, spec)


def deconv2d_backward(dy: np.ndarray, cache) -> np.ndarray:
    xf, in_shape, full_shape, spec = cache
    w = spec.kernel.values
    cin, cout, kh, kw = w.shape
    n, _, h, wd = in_shape
    pad = spec.padding
    if spec.bias is not None:
        spec.bias.grad += dy.sum(axis=(0, 2, 3))
    if pad or dy.shape[2:] != full_shape[2:]:
        dfull = np.zeros(full_shape, dtype=dy.dtype)
        dfull[:, :, pad:pad + dy.shape[2], pad:pad + dy.shape[3]] = dy
    else:
        dfull = dy
    cols = _im2col(dfull, kh, kw, spec.stride, h, wd)
    spec.kernel.grad += (xf @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dx = w.reshape(cin, -1) @ cols
    return dx.reshape(n, cin, h, wd)


def layer_norm(x: np.ndarray, gain: DiffArray, bias: DiffArray, eps: float = 1e-5):
    """Normalise each sample over its (C, H, W) extent; per-channel affine."""
    if x.ndim != 4 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm gain/bias must be ({x.shape[1]},) for input {x.shape}")
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    centred = x - mean
    var = (centred * centred).mean(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    y = gain.values[:, None, None] * xhat + bias.values[:, None, None]
    return y, (xhat, inv, gain, bias)


def layer_norm_backward(dy: np.ndarray, cache) -> np.ndarray:
    xhat, inv, gain, bias = cache
    gain.grad += (dy * xhat).sum(axis=(0, 2, 3))
    bias.grad += dy.sum(axis=(0, 2, 3))
    dxhat = dy * gain.values[:, None, None]
    m = xhat[0].size
    return inv / m * (
        m * dxhat
        - dxhat.sum(axis=(1, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(1, 2, 3), keepdims=True)
    )


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask) -> np.ndarray:
    # subgradient 0 at exactly 0
    return dy * mask


def sigmoid(x: np.ndarray):
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return y, y


def sigmoid_backward(dy: np.ndarray, y) -> np.ndarray:
    return dy * y * (1.0 - y)


# ---------------------------------------------------------------------------
# Bilinear sampling with border clamp


def bilinear_gather(fields: np.ndarray, rows: np.ndarray, cols: np.ndarray):
    """Sample ``(N, C, h, w)`` fields at fractional ``(N, ...)`` coordinates.

    Coordinates are clamped to ``[0, h-1] x [0, w-1]`` before interpolation.
    All channels of sample ``n`` share that sample's coordinates. Returns
    values shaped ``(N, C, *rows.shape[1:])`` and a cache for
    :func:`bilinear_gather_backward`.
    """
    n, c, h, w = fields.shape
    if rows.shape != cols.shape or rows.shape[0] != n:
        raise DimensionError("row/col coordinate arrays must share shape (N, ...)")
    out_shape = rows.shape[1:]
    r = rows.reshape(n, -1)
    q = cols.reshape(n, -1)
    rc = np.clip(r, 0, h - 1)
    qc = np.clip(q, 0, w - 1)
    r0 = np.minimum(np.floor(rc), max(h - 2, 0)).astype(np.intp)
    q0 = np.minimum(np.floor(qc), max(w - 2, 0)).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    q1 = np.minimum(q0 + 1, w - 1)
    fr = (rc - r0).astype(fields.dtype)
    fq = (qc - q0).astype(fields.dtype)

    flat = fields.reshape(n, c, h * w)
    idx = [r0 * w + q0, r0 * w + q1, r1 * w + q0, r1 * w + q1]
    corners = [np.take_along_axis(flat, i[:, None, :], axis=2) for i in idx]
    f00, f01, f10, f11 = corners
    wr, wq = fr[:, None, :], fq[:, None, :]
    # convex weights keep corner hits exact, so zero flow is the identity
    top = (1 - wq) * f00 + wq * f01
    bottom = (1 - wq) * f10 + wq * f11
    out = (1 - wr) * top + wr * bottom
    inside_r = ((r >= 0) & (r <= h - 1))[:, None, :]
    inside_q = ((q >= 0) & (q <= w - 1))[:, None, :]
    cache = (fields.shape, idx, fr, fq, corners, inside_r, inside_q, rows.shape)
    return out.reshape((n, c) + out_shape), cache


def bilinear_gather_backward(dout: np.ndarray, cache):
    """Gradients with respect to the fields, the row and the column coordinates.

    Coordinate gradients are the local bilinear slope, and zero where the
    coordinate was clamped.
    """
    shape, idx, fr, fq, corners, inside_r, inside_q, coord_shape = cache
    n, c, h, w = shape
    g = dout.reshape(n, c, -1)
    wr, wq = fr[:, None, :], fq[:, None, :]
    weights = [(1 - wr) * (1 - wq), (1 - wr) * wq, wr * (1 - wq), wr * wq]
    offsets = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
    dfields = np.zeros(n * c * h * w, dtype=dout.dtype)
    for i, wt in zip(idx, weights):
        flat_idx = (offsets + i[:, None, :]).ravel()
        dfields += np.bincount(flat_idx, weights=(g * wt).ravel(), minlength=dfields.size).astype(dout.dtype)
    f00, f01, f10, f11 = corners
    d_row = ((1 - wq) * (f10 - f00) + wq * (f11 - f01)) * inside_r
    d_col = ((1 - wr) * (f01 - f00) + wr * (f11 - f10)) * inside_q
    drows = (g * d_row).sum(axis=1).reshape(coord_shape)
    dcols = (g * d_col).sum(axis=1).reshape(coord_shape)
    return dfields.reshape(shape), drows, dcols


def bilinear_sample(field: np.ndarray, row, col):
    """Bilinearly interpolate a 2D field at ``(row, col)`` with border clamp."""
    field = np.asarray(field)
    row_arr = np.asarray(row, dtype=np.float64)
    col_arr = np.asarray(col, dtype=np.float64)
    out, _ = bilinear_gather(field[None, None], row_arr.reshape(1, -1), col_arr.reshape(1, -1))
    out = out.reshape(row_arr.shape)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Gradient verification


def finite_diff_check(fn, wrt, analytic, eps: float = 1e-5, weights=None) -> float:
    """Compare analytic gradients with central differences.

    ``fn()`` evaluates the operation using the current contents of the arrays
    in ``wrt`` (perturbed in place, restored afterwards). The scalar loss is
    ``sum(fn())``, or ``sum(weights * fn())`` when ``weights`` is given.
    ``analytic`` holds the matching gradients of that loss. Returns the
    maximum of ``|analytic - numeric| / max(1, |numeric|)`` over every entry.
    """
    def loss():
        out = np.asarray(fn(), dtype=np.float64)
        val = float(out.sum() if weights is None else (out * weights).sum())
        if not np.isfinite(val):
            raise CheckFailedError("non-finite loss during finite-difference check")
        return val

    worst = 0.0
    for arr, grad in zip(wrt, analytic, strict=True):
        if arr.dtype != np.float64:
            raise CheckFailedError("finite-difference checks require float64 arrays")
        grad = np.asarray(grad)
        if grad.shape != arr.shape or not np.all(np.isfinite(grad)):
            raise CheckFailedError("analytic gradient has wrong shape or non-finite entries")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise CheckFailedError("arrays under check must be contiguous so they can be perturbed in place")
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss()
            flat[i] = orig - eps
            minus = loss()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst
