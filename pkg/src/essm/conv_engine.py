"""System kernels and state inference by direct or FFT convolution.

States are computed per diagonal mode: column ``i`` of the state sequence is
the 1-D convolution of the powers ``lambda_bar[i]**k`` with column ``i`` of
the projected input ``B_bar u``. A bidirectional kernel adds the same powers
running backwards in time, so step ``k`` also sees inputs ``k..L-1``.
"""

import numbers
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix
from .exceptions import InvalidLengthError, InvalidShapeError, InvalidStateError


@dataclass(frozen=True)
class KernelTensor:
    """Powers of the discrete eigenvalues.

    ``v`` has ``length`` rows for a causal kernel and ``2 * length`` rows in
    the padded bidirectional layout
    ``[v_0 .. v_{L-1}, 0 .. 0] + [0 .. 0, v_{L-1} .. v_0]``.
    """

    v: np.ndarray
    length: int
    bidirectional: bool = False

    @property
    def forward(self):
        return self.v[: self.length]


@dataclass(frozen=True)
class ProjectedInput:
    bu: np.ndarray


def fft_length(length, bidirectional=False):
    """Smallest power of two that makes the FFT product a linear convolution."""
    need = 3 * length - 1 if bidirectional else 2 * length - 1
    return 1 << max(need - 1, 0).bit_length()


def _check_length(length):
    if isinstance(length, bool) or not isinstance(length, numbers.Integral) or length < 1:
        raise InvalidLengthError(f"kernel length must be a positive integer, got {length!r}")
    return int(length)


def system_kernel(lambda_bar, length, real=False):
    """``v[k, i] = lambda_bar[i] ** k``.

    Powers are filled by doubling (``v[m:2m] = v[:m] * lambda_bar**m``), so
    each entry is the product of at most ``log2(length)`` rounded factors.
    With ``real=True`` only the real part of the kernel is kept, as a float array.
    """
    length = _check_length(length)
    lambda_bar = np.atleast_1d(np.asarray(lambda_bar, dtype=complex))
    # filled mode-major so FFTs along time run over contiguous rows
    vt = np.empty((lambda_bar.shape[0], length), dtype=complex)
    vt[:, 0] = 1.0
    power = lambda_bar.copy()
    filled = 1
    while filled < length:
        take = min(filled, length - filled)
        np.multiply(vt[:, :take], power[:, None], out=vt[:, filled : filled + take])
        filled += take
        power = power * power
    if real:
        vt = vt.real
    return KernelTensor(v=vt.T, length=length, bidirectional=False)


def kernel_from_exponent(z, length, real=False):
    """``v[k, i] = exp(k * z[i])``, the closed form of :func:`system_kernel`."""
    length = _check_length(length)
    k = np.arange(length)[:, None]
    v = np.exp(k * np.asarray(z, dtype=complex)[None, :])
    if real:
        v = np.ascontiguousarray(v.real)
    return KernelTensor(v=v, length=length, bidirectional=False)


def project_input(b_bar, u):
    """Rows ``B_bar u_k`` for every step."""
    b_bar = as_matrix(b_bar, "b_bar", dtype=complex)
    u = as_matrix(u, "u", shape=(None, b_bar.shape[1]))
    return ProjectedInput(bu=u @ b_bar.T)


def bidirectional_kernel(kernel):
    """Add the time-reversed kernel; no new parameters are involved."""
    if kernel.bidirectional:
        raise InvalidStateError("kernel is already bidirectional")
    length = kernel.length
    pad = np.zeros_like(kernel.v)
    v = np.concatenate([kernel.v, pad]) + np.concatenate([pad, kernel.v[::-1]])
    return KernelTensor(v=v, length=length, bidirectional=True)


def _check(kernel, pin):
    bu = np.asarray(pin.bu)
    if bu.ndim != 2:
        raise InvalidShapeError("projected input must be 2-D")
    if bu.shape[0] != kernel.length:
        raise InvalidLengthError(
            f"kernel length {kernel.length} does not match input length {bu.shape[0]}"
        )
    if bu.shape[1] != kernel.v.shape[1]:
        raise InvalidShapeError(
            f"kernel has {kernel.v.shape[1]} modes, input has {bu.shape[1]}"
        )
    return bu


def conv_direct(kernel, pin):
    """Brute-force O(L^2 N) convolution; reference for :func:`conv_fft`."""
    bu = _check(kernel, pin)
    v = kernel.forward
    length = kernel.length
    x = np.empty(bu.shape, dtype=complex)
    for k in range(length):
        x[k] = np.sum(v[k::-1] * bu[: k + 1], axis=0)
    if kernel.bidirectional:
        for k in range(length):
            x[k] += np.sum(v[: length - k] * bu[k:], axis=0)
    return x


BLOCK_ROWS = 8


def _fft_conv(a, b, n, real):
    """Linear convolution of the rows of ``a`` and ``b`` (modes x time).

    Rows go through the transforms ``BLOCK_ROWS`` at a time, which keeps the
    working set in cache for the lengths of interest.
    """
    rows = a.shape[0]
    out = np.empty((rows, n), dtype=float if real else complex)
    for lo in range(0, rows, BLOCK_ROWS):
        hi = lo + BLOCK_ROWS
        if real:
            prod = np.fft.rfft(a[lo:hi], n)
            prod *= np.fft.rfft(b[lo:hi], n)
            out[lo:hi] = np.fft.irfft(prod, n)
        else:
            prod = np.fft.fft(a[lo:hi], n)
            prod *= np.fft.fft(b[lo:hi], n)
            out[lo:hi] = np.fft.ifft(prod)
    return out


def _fold(full, length, bidirectional):
    if not bidirectional:
        return full[:, :length].T
    # backward half of the padded kernel lands at offset 2L-1
    return (full[:, :length] + full[:, 2 * length - 1 : 3 * length - 1]).T


def conv_fft(kernel, pin):
    """Per-mode linear convolution through zero-padded FFTs."""
    bu = _check(kernel, pin)
    length = kernel.length
    n = fft_length(length, kernel.bidirectional)
    full = _fft_conv(kernel.v.T, bu.T, n, real=False)
    return _fold(full, length, kernel.bidirectional)


def conv_fft_real(kernel, pin):
    """Real part of :func:`conv_fft` for a real-valued kernel, using real FFTs only.

    With a real kernel ``Re(V * Bu) = V * Re(Bu)``, which is all the layer's
    real output projection needs.
    """
    bu = _check(kernel, pin)
    if np.iscomplexobj(kernel.v) and np.any(kernel.v.imag):
        raise InvalidStateError("conv_fft_real needs a real-valued kernel")
    length = kernel.length
    n = fft_length(length, kernel.bidirectional)
    full = _fft_conv(np.real(kernel.v).T, np.real(bu).T, n, real=True)
    return _fold(full, length, kernel.bidirectional)


def causality_probe(run, u, k, delta=1.0):
    """Perturb input step ``k`` and report whether outputs before ``k`` are bit-identical."""
    u = np.array(u, dtype=float)
    base = np.asarray(run(u))
    bumped = u.copy()
    bumped[k] += delta
    moved = np.asarray(run(bumped))
    return bool(np.array_equal(base[:k], moved[:k]))
