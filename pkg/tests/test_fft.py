import cmath
import math

import numpy as np
import pytest

from fnocap import fft as F


def loop_dft(x, inverse=False):
    """O(N^2) unitary DFT along the last axis, written as explicit sums."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    sign = 1 if inverse else -1
    out = np.zeros_like(x)
    for k in range(n):
        acc = 0j
        for j in range(n):
            acc = acc + x[..., j] * cmath.exp(sign * 2j * math.pi * j * k / n)
        out[..., k] = acc / math.sqrt(n)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_constant_ones_has_only_dc():
    X = F.fft(np.ones(8))
    assert X[0] == pytest.approx(math.sqrt(8), abs=1e-14)
    np.testing.assert_allclose(X[1:], 0, atol=1e-14)


def test_roundtrip_1d(rng):
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    assert np.max(np.abs(F.ifft(F.fft(x)) - x)) < 1e-10


@pytest.mark.parametrize("shape", [(16, 8), (12, 5), (4, 32)])
def test_roundtrip_2d(rng, shape):
    x = rng.standard_normal(shape)
    assert np.max(np.abs(F.ifft(F.fft(x)) - x)) < 1e-10
    y = rng.standard_normal((3,) + shape)
    assert np.max(np.abs(F.ifft(F.fft(y, axes=(1, 2)), axes=(1, 2)) - y)) < 1e-10


def test_parseval_against_loop_oracle(rng):
    x = rng.standard_normal(128)
    X = F.fft(x)
    oracle = loop_dft(x)
    assert np.max(np.abs(X - oracle)) < 1e-10
    rel = abs(np.linalg.norm(X) - np.linalg.norm(x)) / np.linalg.norm(x)
    assert rel < 1e-10
    assert abs(np.linalg.norm(oracle) - np.linalg.norm(x)) / np.linalg.norm(x) < 1e-10


def test_unitarity_inner_product(rng):
    x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    y = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    assert abs(np.vdot(F.fft(x), F.fft(y)) - np.vdot(x, y)) < 1e-10
    x2 = rng.standard_normal((8, 6))
    y2 = rng.standard_normal((8, 6))
    assert abs(np.vdot(F.fft(x2), F.fft(y2)) - np.vdot(x2, y2)) < 1e-10


@pytest.mark.parametrize("n", [3, 8, 12, 16])
def test_matches_direct_formula(rng, n):
    x = rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))
    assert np.max(np.abs(F.fft(x, axes=(1,)) - loop_dft(x))) < 1e-9
    assert np.max(np.abs(F.ifft(x, axes=(1,)) - loop_dft(x, inverse=True))) < 1e-9


def test_2d_is_separable_product_of_1d(rng):
    x = rng.standard_normal((6, 8))
    two_step = loop_dft(loop_dft(x).T).T
    assert np.max(np.abs(F.fft(x) - two_step)) < 1e-10


def test_inverse_is_adjoint(rng):
    n = 12
    M = F.fft(np.eye(n), axes=(0,))
    Minv = F.ifft(np.eye(n), axes=(0,))
    np.testing.assert_allclose(Minv, M.conj().T, atol=1e-13)


def test_empty_raises():
    with pytest.raises(ValueError):
        F.fft(np.zeros(0))
    with pytest.raises(ValueError):
        F.ifft(np.zeros((0, 4)))


def test_power_of_two_detection():
    assert [n for n in range(1, 20) if F.is_power_of_two(n)] == [1, 2, 4, 8, 16]


def test_agrees_with_numpy_ortho(rng):
    x = rng.standard_normal((3, 1024))
    np.testing.assert_allclose(F.fft(x, axes=(1,)), np.fft.fft(x, norm="ortho"), atol=1e-11)
