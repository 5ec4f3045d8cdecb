"""Complex-valued array primitives and their exact vector-Jacobian products.

Everything operates on plain ``numpy`` arrays with a complex dtype
(``complex128`` by default, ``complex64`` in single-precision mode).
Images and k-space data are shaped ``(m, n, c)`` with the channel axis
last; convolution kernels are shaped ``(kh, kw, c_in, c_out)``.

Gradients follow the real-pair convention: a complex array is treated as
the pair of its real and imaginary parts, and the cotangent of a real
scalar loss is packed back into a complex array of the same shape
(``cot = dL/d(real) + 1j * dL/d(imag)``).  For any complex-linear map the
packed adjoint is the Hermitian adjoint of the map, so e.g. the VJP of
the unitary DFT is the inverse DFT.
"""

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class ContractError(ValueError):
    """An argument violates a precondition that is not a pure shape issue."""


# ---------------------------------------------------------------------------
# unitary 2-D DFT


def _check_spatial(x):
    if x.ndim < 2:
        raise ShapeError(f"need at least 2 spatial dims, got shape {x.shape}")


def dft2(x):
    """Unitary 2-D DFT over the two leading (spatial) axes, per channel.

    Normalized by 1/sqrt(m*n) so that the transform preserves the l2 norm
    and its adjoint equals its inverse.
    """
    x = np.asarray(x)
    _check_spatial(x)
    m, n = x.shape[:2]
    return np.fft.fft2(x, axes=(0, 1)) / np.sqrt(m * n)


def idft2(y):
    """Inverse (= Hermitian adjoint) of :func:`dft2`."""
    y = np.asarray(y)
    _check_spatial(y)
    m, n = y.shape[:2]
    return np.fft.ifft2(y, axes=(0, 1)) * np.sqrt(m * n)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def crelu(x):
    """ReLU applied independently to real and imaginary parts."""
    return np.maximum(x.real, 0) + 1j * np.maximum(x.imag, 0)


def crelu_vjp(x, g):
    """VJP of :func:`crelu`; the derivative at 0 is taken as 0."""
    return g.real * (x.real > 0) + 1j * (g.imag * (x.imag > 0))


def soft_shrink(x, alpha):
    """Soft shrinkage applied independently to real and imaginary parts.

    Each part t maps to sign(t) * max(|t| - alpha, 0).
    """
    if alpha < 0:
        raise ContractError(f"shrinkage threshold must be >= 0, got {alpha}")
    re = np.sign(x.real) * np.maximum(np.abs(x.real) - alpha, 0)
    im = np.sign(x.imag) * np.maximum(np.abs(x.imag) - alpha, 0)
    return re + 1j * im


def soft_shrink_vjp(x, alpha, g):
    """VJP of :func:`soft_shrink`; derivative is 1 outside the dead zone."""
    return g.real * (np.abs(x.real) > alpha) + 1j * (g.imag * (np.abs(x.imag) > alpha))


def apply_mask(x, mask):
    """Multiply by a real binary mask, broadcast over trailing channel axes."""
    if mask.shape != x.shape[: mask.ndim]:
        raise ShapeError(f"mask {mask.shape} does not match leading dims of {x.shape}")
    if x.ndim > mask.ndim:
        return x * mask[..., None]
    return x * mask


def apply_mask_vjp(mask, g):
    """VJP of :func:`apply_mask` w.r.t. x (the mask is real, so self-adjoint)."""
    return apply_mask(g, mask)


# ---------------------------------------------------------------------------
# complex 2-D convolution (cross-correlation, zero "same" padding)


class ConvKernel:
    """Complex convolution kernel: weights (kh, kw, c_in, c_out) plus bias (c_out,).

    Kernel extents must be odd so that "same" zero padding is symmetric.
    Instances are treated as immutable; frequency-domain spectra are
    memoized per padded FFT size, which keeps repeated applications (the
    forward/costate passes of one training step) cheap.
    """

    __slots__ = ("weights", "bias", "_spectra")

    def __init__(self, weights, bias=None):
        weights = np.asarray(weights)
        if weights.ndim != 4:
            raise ShapeError(f"weights must be 4-D (kh, kw, c_in, c_out), got {weights.shape}")
        kh, kw = weights.shape[:2]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
        if bias is None:
            bias = np.zeros(weights.shape[3], dtype=weights.dtype)
        bias = np.asarray(bias)
        if bias.shape != (weights.shape[3],):
            raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[3]},)")
        self.weights = weights
        self.bias = bias
        self._spectra = {}

    @property
    def c_in(self):
        return self.weights.shape[2]

    @property
    def c_out(self):
        return self.weights.shape[3]

    @property
    def ksize(self):
        return self.weights.shape[:2]

    def spectrum(self, qy, qx):
        """Centered kernel spectrum on the (qy, qx) circular grid.

        W_hat[p, q, i, o] = sum_{e,f} W[e, f, i, o] exp(+2i pi (p(e-ph)/qy + q(f-pw)/qx))
        with (ph, pw) the "same" padding offsets.  With the input embedded
        at the origin of a (qy, qx) grid, the same-padded cross-correlation
        is IFFT(FFT(x) * W_hat) cropped to the input extent, provided
        qy >= m + kh - 1 and qx >= n + kw - 1 (no circular wrap).  The
        adjoint map's spectrum is the plain conjugate with channels swapped.
        """
        key = (qy, qx)
        spec = self._spectra.get(key)
        if spec is None:
            spec = _kernel_spectrum(self.weights, qy, qx)
            self._spectra[key] = spec
        return spec


def _dft_slice(q, k, sign, center=0):
    # (q, k) slice of the DFT matrix, tap positions shifted by -center
    p = np.arange(q)[:, None]
    e = np.arange(k)[None, :] - center
    return np.exp(sign * 2j * np.pi * p * e / q)


def _kernel_spectrum(weights, qy, qx):
    kh, kw = weights.shape[:2]
    nc = weights.shape[2] * weights.shape[3]
    e1 = _dft_slice(qy, kh, +1, center=kh // 2).astype(weights.dtype)
    e2 = _dft_slice(qx, kw, +1, center=kw // 2).astype(weights.dtype)
    w = weights.reshape(kh, kw * nc)
    t = (e1 @ w).reshape(qy, kw, nc)
    t = np.ascontiguousarray(t.transpose(0, 2, 1)).reshape(qy * nc, kw)
    out = (t @ e2.T).reshape(qy, nc, qx).transpose(0, 2, 1)
    return np.ascontiguousarray(out.reshape(qy, qx, *weights.shape[2:]))


def _partial_dft2(arr, kh, kw):
    # forward-sign DFT of (qy, qx, ...) evaluated at kh x kw centered tap positions
    qy, qx = arr.shape[:2]
    rest = arr.shape[2:]
    taps_y = (np.arange(kh) - kh // 2)[:, None]
    taps_x = (np.arange(kw) - kw // 2)[:, None]
    e1 = np.exp(-2j * np.pi * taps_y * np.arange(qy)[None, :] / qy).astype(arr.dtype)
    e2 = np.exp(-2j * np.pi * taps_x * np.arange(qx)[None, :] / qx).astype(arr.dtype)
    t = (e1 @ arr.reshape(qy, -1)).reshape(kh, qx, -1)
    t = np.ascontiguousarray(t.transpose(0, 2, 1)).reshape(-1, qx)
    out = (t @ e2.T).reshape(kh, int(np.prod(rest, dtype=int)), kw).transpose(0, 2, 1)
    return np.ascontiguousarray(out.reshape(kh, kw, *rest))


def _fft_size(n):
    # smallest 5-smooth integer >= n (pocketfft is fast for these)
    while True:
        k = n
        for p in (2, 3, 5):
            while k % p == 0:
                k //= p
        if k == 1:
            return n
        n += 1


def _embed_fft(x, qy, qx):
    m, n = x.shape[:2]
    buf = np.zeros((qy, qx) + x.shape[2:], dtype=x.dtype)
    buf[:m, :n] = x
    return np.fft.fft2(buf, axes=(0, 1))


def _mix_channels(xf, wf):
    # per-frequency channel mix: (qy, qx, ci) x (qy, qx, ci, co) -> (qy, qx, co)
    qy, qx, ci = xf.shape
    co = wf.shape[3]
    out = np.matmul(xf.reshape(qy * qx, 1, ci), wf.reshape(qy * qx, ci, co))
    return out.reshape(qy, qx, co)


def _conv_sizes(m, n, kern):
    kh, kw = kern.ksize
    return _fft_size(m + kh - 1), _fft_size(n + kw - 1)


def cconv2d(x, kern, tape=None):
    """Complex 2-D cross-correlation with zero "same" padding, plus bias.

    out = (Wr * xr - Wi * xi) + 1j (Wr * xi + Wi * xr) + bias, where * is
    real channel-summed cross-correlation.  If ``tape`` is a dict, the
    padded-input spectrum and FFT geometry are stored for the backward pass.
    """
    x = np.asarray(x)
    _check_spatial(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    if x.shape[2] != kern.c_in:
        raise ShapeError(f"input channels {x.shape[2]} != kernel c_in {kern.c_in}")
    m, n = x.shape[:2]
    kh, kw = kern.ksize
    qy, qx = _conv_sizes(m, n, kern)
    xf = _embed_fft(x.astype(kern.weights.dtype, copy=False), qy, qx)
    wf = kern.spectrum(qy, qx)
    out = np.fft.ifft2(_mix_channels(xf, wf), axes=(0, 1))[:m, :n]
    out = out + kern.bias
    if tape is not None:
        tape["xf"] = xf
        tape["shape"] = (m, n)
    if squeeze and kern.c_out == 1:
        return out[:, :, 0]
    return out


def cconv2d_vjp_input(kern, g, shape):
    """VJP of :func:`cconv2d` w.r.t. the input."""
    m, n = shape
    qy, qx = _conv_sizes(m, n, kern)
    g = g.reshape(m, n, kern.c_out)
    gf = _embed_fft(g.astype(kern.weights.dtype, copy=False), qy, qx)
    wf = kern.spectrum(qy, qx)
    # centered-spectrum convention: the adjoint is the conjugate spectrum
    # with input/output channels swapped
    mixed = _mix_channels(gf, np.conj(wf.transpose(0, 1, 3, 2)))
    return np.fft.ifft2(mixed, axes=(0, 1))[:m, :n]


def cconv2d_vjp_weights(xf, kern, g, shape):
    """VJP of :func:`cconv2d` w.r.t. the weights, from the taped input spectrum."""
    m, n = shape
    kh, kw = kern.ksize
    qy, qx = xf.shape[:2]
    g = g.reshape(m, n, kern.c_out)
    gf = _embed_fft(g.astype(kern.weights.dtype, copy=False), qy, qx)
    prod = np.matmul(
        np.conj(xf).reshape(qy * qx, -1, 1), gf.reshape(qy * qx, 1, -1)
    ).reshape(qy, qx, kern.c_in, kern.c_out)
    return _partial_dft2(prod, kh, kw) / (qy * qx)


def cconv2d_vjp_bias(kern, g):
    """VJP of :func:`cconv2d` w.r.t. the bias."""
    g = g.reshape(-1, kern.c_out)
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# generic dispatcher (contract surface for the costate machinery)


def vjp(primitive, inputs, cotangent):
    """Vector-Jacobian product of a named primitive.

    ``primitive`` is one of 'dft2', 'idft2', 'cconv2d', 'crelu',
    'soft_shrink', 'add', 'scale', 'mask'.  ``inputs`` is the tuple of
    primal inputs the primitive was evaluated at, and ``cotangent`` the
    packed gradient w.r.t. its output.  Returns a tuple of cotangents,
    one per differentiable input.
    """
    if primitive == "dft2":
        return (idft2(cotangent),)
    if primitive == "idft2":
        return (dft2(cotangent),)
    if primitive == "crelu":
        (x,) = inputs
        return (crelu_vjp(x, cotangent),)
    if primitive == "soft_shrink":
        x, alpha = inputs
        return (soft_shrink_vjp(x, alpha, cotangent),)
    if primitive == "add":
        return (cotangent, cotangent)
    if primitive == "scale":
        x, a = inputs
        gx = a * cotangent
        ga = float(np.sum(cotangent.real * x.real + cotangent.imag * x.imag))
        return (gx, ga)
    if primitive == "mask":
        x, mask = inputs
        return (apply_mask_vjp(mask, cotangent),)
    if primitive == "cconv2d":
        x, kern = inputs
        x = np.asarray(x)
        xv = x if x.ndim == 3 else x[:, :, None]
        tape = {}
        cconv2d(xv, kern, tape=tape)
        shape = tape["shape"]
        gx = cconv2d_vjp_input(kern, cotangent, shape)
        gw = cconv2d_vjp_weights(tape["xf"], kern, cotangent, shape)
        gb = cconv2d_vjp_bias(kern, cotangent)
        if x.ndim == 2:
            gx = gx[:, :, 0]
        return (gx, gw, gb)
    raise ContractError(f"unknown primitive {primitive!r}")
