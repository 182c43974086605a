"""Differentiable primitives used by the deraining model.

Conventions fixed here:

* ``layer_norm`` normalizes over the channel axis at every spatial location.
* ``interpolate_bilinear`` uses half-pixel centres (align-corners off) and
  clamps source coordinates to the border.
* ``pixel_unshuffle`` stores input pixel ``(c, h*r + i, w*r + j)`` at output
  channel ``c*r*r + i*r + j``; ``pixel_shuffle`` is its exact inverse.
* ``fft2`` is the unnormalized DFT over ``(H, W)``; ``ifft2`` carries the
  ``1/(H*W)`` factor and returns the real part.  ``rfft2``/``irfft2`` are
  the half-spectrum pair with the same scaling; their FLOPs count as half a
  complex transform.
* Gradients of complex tensors are stored as ``dL/dRe + 1j * dL/dIm``.
"""

from __future__ import annotations

import contextlib
import functools
import math
from typing import Iterator

import numpy as np
import scipy.fft
from scipy.special import erf

from .core import ShapeError, Tensor, as_tensor, make_node

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# conv forward works in row bands so im2col buffers stay bounded at UHD sizes
_IM2COL_MAX_ELEMS = 1 << 24


class ComplexTensor(Tensor):
    """Complex feature map; same layout as :class:`Tensor`."""

    __slots__ = ()

    @property
    def real(self) -> np.ndarray:
        return self.data.real

    @property
    def imag(self) -> np.ndarray:
        return self.data.imag


# ---------------------------------------------------------------------------
# FLOP accounting hook
# ---------------------------------------------------------------------------

_COUNTERS: list[dict] = []


@contextlib.contextmanager
def count_flops() -> Iterator[dict]:
    """Collect conv and FFT FLOPs executed inside the block.

    The yielded dict maps ``"conv"`` and ``"fft"`` to running totals, summed
    over the batch.
    """
    counter = {"conv": 0, "fft": 0.0}
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


def _record(kind: str, amount) -> None:
    for c in _COUNTERS:
        c[kind] += amount


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return make_node(Tensor, a.data + b, (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return make_node(Tensor, a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return make_node(Tensor, a.data - b, (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return make_node(Tensor, a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return make_node(Tensor, -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = b
        return make_node(Tensor, a.data * s, (a,), lambda g: (g * s,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(Tensor, ad * bd, (a, b), lambda g: (g * bd, g * ad))


def abs_(a: Tensor) -> Tensor:
    d = a.data
    return make_node(Tensor, np.abs(d), (a,), lambda g: (g * np.sign(d),))


def sum_(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.dtype
    return make_node(Tensor, np.asarray(a.data.sum(), dtype=dtype), (a,),
                     lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.dtype, a.size
    return make_node(Tensor, np.asarray(a.data.mean(), dtype=dtype), (a,),
                     lambda g: (np.full(shape, g / n, dtype=dtype),))


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    d = x.data
    mask = d > 0
    return make_node(Tensor, np.where(mask, d, 0).astype(d.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    s = s.astype(x.dtype)
    return make_node(Tensor, s, (x,), lambda g: (g * s * (1 - s),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    d = x.data
    cdf = (0.5 * (1.0 + erf(d / _SQRT2))).astype(d.dtype)

    def backward(g):
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * d * d)).astype(d.dtype)
        return (g * (cdf + d * pdf),)

    return make_node(Tensor, d * cdf, (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    fn = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}.get(kind.lower())
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(x)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, s: int, r0: int, r1: int, wo: int) -> np.ndarray:
    """Patches for output rows ``r0:r1`` as ``(B, Cin*k*k, rows*wo)``."""
    b, c = xp.shape[:2]
    rows = r1 - r0
    cols = np.empty((b, c, k, k, rows, wo), dtype=xp.dtype)
    for i in range(k):
        h0 = r0 * s + i
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, h0:h0 + s * (rows - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
    return cols.reshape(b, c * k * k, rows * wo)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation with square kernels.

    ``padding="same"`` pads by ``k // 2`` on each side (for odd ``k`` and
    stride 1 the spatial size is preserved); ``"valid"`` does not pad.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and weight")
    bsz, cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: non-square kernel {w.shape}")
    if wcin != cin:
        raise ShapeError(f"conv2d: weight expects {wcin} input channels, got {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    if padding == "same":
        p = k // 2
    elif padding == "valid":
        p = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    ho = (h + 2 * p - k) // stride + 1
    wo = (wd + 2 * p - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{wd} too small for kernel {k}")
    _record("conv", 2 * cin * cout * k * k * ho * wo * bsz)

    xd, wmat = x.data, w.data.reshape(cout, cin * k * k)
    pointwise = k == 1 and stride == 1
    if pointwise:
        out = np.matmul(wmat, xd.reshape(bsz, cin, h * wd)).reshape(bsz, cout, h, wd)
        xp = None
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        out = np.empty((bsz, cout, ho, wo), dtype=np.result_type(xd, w.data))
        band = max(1, _IM2COL_MAX_ELEMS // max(1, bsz * cin * k * k * wo))
        for r0 in range(0, ho, band):
            r1 = min(ho, r0 + band)
            cols = _im2col(xp, k, stride, r0, r1, wo)
            out[:, :, r0:r1] = np.matmul(wmat, cols).reshape(bsz, cout, r1 - r0, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        g2 = g.reshape(bsz, cout, ho * wo)
        if pointwise:
            x2 = xd.reshape(bsz, cin, h * wd)
            gw = np.matmul(g2, x2.transpose(0, 2, 1)).sum(0).reshape(w.shape)
            gx = np.matmul(wmat.T, g2).reshape(x.shape)
        else:
            cols = _im2col(xp, k, stride, 0, ho, wo)
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(0).reshape(w.shape)
            dcols = np.matmul(wmat.T, g2).reshape(bsz, cin, k, k, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride] += dcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + wd]
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(Tensor, out, parents, backward)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over channels at each ``(b, h, w)``, then scale and shift."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({c},)")
    d = x.data
    mu = d.mean(axis=1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def backward(g):
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return (gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3)))

    return make_node(Tensor, out.astype(d.dtype), (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Resampling and rearrangement
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the bilinear weights of output sample ``i``."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    m.setflags(write=False)
    return m


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    return _interp_matrix(n_in, n_out).astype(dtype)


def interpolate_bilinear(x: Tensor, h_out: int, w_out: int) -> Tensor:
    if h_out < 1 or w_out < 1:
        raise ValueError(f"target size must be positive, got {h_out}x{w_out}")
    h, w = x.shape[-2:]
    if (h, w) == (h_out, w_out):
        return make_node(Tensor, x.data.copy(), (x,), lambda g: (g,))
    ah = interpolation_matrix(h, h_out, x.dtype)
    aw = interpolation_matrix(w, w_out, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return make_node(Tensor, out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


def rotate_axes(x: Tensor) -> Tensor:
    """Cycle the non-batch axes: element ``(b, c, h, w)`` moves to ``(b, h, w, c)``."""
    out = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    return make_node(Tensor, out, (x,),
                     lambda g: (np.ascontiguousarray(g.transpose(0, 3, 1, 2)),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ValueError(f"factor must be positive, got {r}")
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial size {h}x{w} not divisible by {r}")
    out = (x.data.reshape(b, c, h // r, r, w // r, r)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(b, c * r * r, h // r, w // r))

    def backward(g):
        return (g.reshape(b, c, r, r, h // r, w // r)
                .transpose(0, 1, 4, 2, 5, 3)
                .reshape(b, c, h, w),)

    return make_node(Tensor, np.ascontiguousarray(out), (x,), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    if r < 1:
        raise ValueError(f"factor must be positive, got {r}")
    b, cr, h, w = x.shape
    if cr % (r * r):
        raise ShapeError(f"pixel_shuffle: {cr} channels not divisible by {r * r}")
    c = cr // (r * r)
    out = (x.data.reshape(b, c, r, r, h, w)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(b, c, h * r, w * r))

    def backward(g):
        return (np.ascontiguousarray(
            g.reshape(b, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, cr, h, w)),)

    return make_node(Tensor, np.ascontiguousarray(out), (x,), backward)


# ---------------------------------------------------------------------------
# Fourier transforms
# ---------------------------------------------------------------------------

def _fft_flops(shape) -> float:
    *lead, h, w = shape
    n = h * w
    return 5.0 * n * math.log2(n) * math.prod(lead) if n > 1 else 0.0


def fft2(x: Tensor) -> ComplexTensor:
    h, w = x.shape[-2:]
    _record("fft", _fft_flops(x.shape))
    out = scipy.fft.fft2(x.data, axes=(-2, -1))
    n = h * w
    real_dtype = x.dtype

    def backward(g):
        return ((scipy.fft.ifft2(g, axes=(-2, -1)).real * n).astype(real_dtype),)

    return make_node(ComplexTensor, out, (x,), backward)


def ifft2(X: ComplexTensor, strict: bool = True, tol: float = 1e-4) -> Tensor:
    """Inverse DFT returning the real part.

    With ``strict`` the discarded imaginary part must be at most ``tol``
    times the norm of the result; spectra edited by learned layers are not
    Hermitian and are passed with ``strict=False``.
    """
    h, w = X.shape[-2:]
    _record("fft", _fft_flops(X.shape))
    full = scipy.fft.ifft2(X.data, axes=(-2, -1))
    out = np.ascontiguousarray(full.real)
    if strict:
        resid = float(np.linalg.norm(full.imag))
        scale = float(np.linalg.norm(out))
        if resid > tol * max(scale, np.finfo(out.dtype).tiny):
            raise ValueError(f"ifft2: imaginary residue {resid:.3g} exceeds tolerance")
    n = h * w

    def backward(g):
        return (scipy.fft.fft2(g, axes=(-2, -1)) / n,)

    return make_node(Tensor, out, (X,), backward)


def _half_spectrum_weights(w: int, dtype) -> np.ndarray:
    """Multiplicity of each rfft column in the full Hermitian spectrum."""
    c = np.full(w // 2 + 1, 2.0, dtype=dtype)
    c[0] = 1.0
    if w % 2 == 0:
        c[-1] = 1.0
    return c


def rfft2(x: Tensor) -> ComplexTensor:
    """Half spectrum of a real map: columns ``0 .. W//2`` of :func:`fft2`."""
    h, w = x.shape[-2:]
    _record("fft", 0.5 * _fft_flops(x.shape))
    out = scipy.fft.rfft2(x.data, axes=(-2, -1))
    n = h * w
    c = _half_spectrum_weights(w, x.dtype)

    def backward(g):
        return ((scipy.fft.irfft2(g / c, s=(h, w), axes=(-2, -1)) * n).astype(x.dtype),)

    return make_node(ComplexTensor, out, (x,), backward)


def irfft2(X: ComplexTensor, width: int) -> Tensor:
    """Real inverse of a half spectrum (the Hermitian extension is implied)."""
    h = X.shape[-2]
    if X.shape[-1] != width // 2 + 1:
        raise ShapeError(f"irfft2: {X.shape[-1]} columns do not match width {width}")
    _record("fft", 0.5 * _fft_flops(X.shape[:-1] + (width,)))
    out = scipy.fft.irfft2(X.data, s=(h, width), axes=(-2, -1))
    n = h * width
    c = _half_spectrum_weights(width, out.dtype)

    def backward(g):
        return (scipy.fft.rfft2(g, axes=(-2, -1)) * (c / n),)

    return make_node(Tensor, out, (X,), backward)


def complex_to_channels(X: ComplexTensor) -> Tensor:
    """Stack real and imaginary parts: ``(B, C, H, W) -> (B, 2C, H, W)``."""
    c = X.shape[1]
    out = np.concatenate([X.data.real, X.data.imag], axis=1)
    return make_node(Tensor, out, (X,), lambda g: (g[:, :c] + 1j * g[:, c:],))


def channels_to_complex(x: Tensor) -> ComplexTensor:
    """Inverse of :func:`complex_to_channels`."""
    c2 = x.shape[1]
    if c2 % 2:
        raise ShapeError(f"channels_to_complex: odd channel count {c2}")
    c = c2 // 2
    out = x.data[:, :c] + 1j * x.data[:, c:]
    return make_node(ComplexTensor, out, (x,),
                     lambda g: (np.concatenate([g.real, g.imag], axis=1),))
