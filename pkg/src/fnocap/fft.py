"""Unitary discrete Fourier transforms on uniform periodic grids.

Both directions carry the symmetric ``1/sqrt(N)`` factor per axis, so
``ifft`` is the exact inverse *and* adjoint of ``fft``.  Power-of-two
lengths go through an iterative radix-2 Cooley-Tukey kernel; any other
length falls back to the O(N^2) direct sum.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(n: int, sign: int) -> tuple[np.ndarray, ...]:
    # one twiddle row per butterfly stage, half-length m/2 for block size m
    out = []
    m = 2
    while m <= n:
        half = m // 2
        out.append(np.exp(sign * 2j * np.pi * np.arange(half) / m))
        m *= 2
    return tuple(out)


@lru_cache(maxsize=64)
def dft_matrix(n: int, sign: int = -1) -> np.ndarray:
    """Unnormalized DFT matrix ``exp(sign * 2 pi i x k / n)``."""
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _radix2_last(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)].astype(np.complex128)
    for w in _twiddles(n, sign):
        half = w.shape[0]
        y = y.reshape(*lead, n // (2 * half), 2 * half)
        even = y[..., :half]
        odd = y[..., half:] * w
        y = np.concatenate([even + odd, even - odd], axis=-1)
    return y.reshape(*lead, n)


def _direct_last(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    return x.astype(np.complex128) @ dft_matrix(n, sign).T


def _transform_axis(x: np.ndarray, axis: int, sign: int) -> np.ndarray:
    n = x.shape[axis]
    moved = np.moveaxis(x, axis, -1)
    if is_power_of_two(n):
        y = _radix2_last(moved, sign)
    else:
        y = _direct_last(moved, sign)
    return np.moveaxis(y / np.sqrt(n), -1, axis)


def _normalize_axes(ndim: int, axes: Iterable[int] | None) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    return tuple(sorted({a % ndim for a in axes}))


def _transform(x, axes, sign: int) -> np.ndarray:
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("cannot transform an empty array")
    out = x.astype(np.complex128)
    for ax in _normalize_axes(x.ndim, axes):
        out = _transform_axis(out, ax, sign)
    return out


def fft(x, axes: Sequence[int] | None = None) -> np.ndarray:
    """Unitary forward DFT over ``axes`` (all axes when omitted)."""
    return _transform(x, axes, -1)


def ifft(x, axes: Sequence[int] | None = None) -> np.ndarray:
    """Unitary inverse DFT; exact inverse and adjoint of :func:`fft`."""
    return _transform(x, axes, +1)


def dft_direct(x, axes: Sequence[int] | None = None, inverse: bool = False) -> np.ndarray:
    """Reference O(N^2)-per-axis evaluation of the unitary transform.

    Evaluates the defining sum with explicit complex exponentials and never
    touches the radix-2 path; tests use it as the independent oracle.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.size == 0:
        raise ValueError("cannot transform an empty array")
    sign = 1 if inverse else -1
    for ax in _normalize_axes(x.ndim, axes):
        n = x.shape[ax]
        idx = np.arange(n)
        kernel = np.exp(sign * 2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)
        x = np.moveaxis(np.tensordot(kernel, np.moveaxis(x, ax, 0), axes=(1, 0)), 0, ax)
    return x
