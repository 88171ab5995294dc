"""Radix-2 Cooley-Tukey FFT over the last axis, plus real-signal helpers.

Forward transform is unnormalized, inverse carries the 1/n factor.
Real-signal helpers pack two real rows into one complex row so every
transform does double duty.
"""

from functools import lru_cache

import numpy as np


def _check_length(n):
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")


@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(half):
    return np.exp(-2j * np.pi * np.arange(half) / (2 * half))


def fft(x):
    """Forward DFT ``X[k] = sum_n x[n] exp(-2 pi i k n / N)`` along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    _check_length(n)
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)]
    buf = np.empty_like(y)
    h = 1
    while h < n:
        blocks = y.reshape(lead + (n // (2 * h), 2, h))
        out = buf.reshape(blocks.shape)
        odd = blocks[..., 1, :] * _twiddles(h)
        np.add(blocks[..., 0, :], odd, out=out[..., 0, :])
        np.subtract(blocks[..., 0, :], odd, out=out[..., 1, :])
        y, buf = buf, y
        h *= 2
    return y


def ifft(x):
    """Inverse of :func:`fft` (includes the 1/N factor)."""
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def _pairs(x):
    """Flatten leading axes and pack row pairs as re/im of one complex row."""
    n = x.shape[-1]
    rows = x.reshape(-1, n)
    if rows.shape[0] % 2:
        rows = np.concatenate([rows, np.zeros((1, n), dtype=rows.dtype)])
    return rows, rows.shape[0]


def rfft_modes(x, modes):
    """Lowest ``modes`` DFT coefficients of real signals along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    _check_length(n)
    if not 1 <= modes <= n // 2:
        raise ValueError(f"modes must lie in [1, {n // 2}], got {modes}")
    rows, m = _pairs(x)
    z = fft(rows[0::2] + 1j * rows[1::2])
    k = np.arange(modes)
    zk = z[:, k]
    zr = np.conj(z[:, (-k) % n])
    out = np.empty((m, modes), dtype=np.complex128)
    out[0::2] = 0.5 * (zk + zr)
    out[1::2] = -0.5j * (zk - zr)
    count = int(np.prod(x.shape[:-1], dtype=np.int64))
    return out[:count].reshape(x.shape[:-1] + (modes,))


def real_synthesis(coeffs, n):
    """``Re(sum_k c_k exp(2 pi i k t / n))`` for the given low-mode coefficients.

    This is the adjoint partner of :func:`rfft_modes`; with ``coeffs``
    scaled by ``(1, 2, 2, ...)/n`` it is the usual truncated inverse rFFT.
    """
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    _check_length(n)
    modes = coeffs.shape[-1]
    if modes > n // 2:
        raise ValueError(f"at most {n // 2} modes fit a length-{n} signal")
    lead = coeffs.shape[:-1]
    flat = coeffs.reshape(-1, modes)
    if flat.shape[0] % 2:
        flat = np.concatenate([flat, np.zeros((1, modes), dtype=flat.dtype)])
    spec = np.zeros((flat.shape[0], n), dtype=np.complex128)
    spec[:, 0] = flat[:, 0].real
    spec[:, 1:modes] = 0.5 * flat[:, 1:]
    spec[:, n - modes + 1:] = 0.5 * np.conj(flat[:, :0:-1])
    packed = spec[0::2] + 1j * spec[1::2]
    z = ifft(packed) * n
    out = np.empty((flat.shape[0], n))
    out[0::2] = z.real
    out[1::2] = z.imag
    count = int(np.prod(lead, dtype=np.int64))
    return out[:count].reshape(lead + (n,))
