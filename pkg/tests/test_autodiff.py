import numpy as np
import pytest

from fnocap import tensor as T
from fnocap.model import FnoConfig, forward_tensors, init_model
from fnocap.train import loss_tensor
from checks import ad_gradients, fd_gradients, max_rel_error

RTOL = 1e-5


def check(build, arrays):
    err = max_rel_error(ad_gradients(build, arrays), fd_gradients(build, arrays))
    assert err < RTOL, err


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def probe(t: T.Tensor, rng_seed=99) -> T.Tensor:
    """A generic real scalar that depends on every real and imaginary entry of ``t``."""
    r = np.random.default_rng(rng_seed)
    if t.is_complex:
        w = r.standard_normal(t.shape) + 1j * r.standard_normal(t.shape)
    else:
        w = r.standard_normal(t.shape)
    return T.tsum(T.real(t * T.Tensor(w)))


# -- basic examples -----------------------------------------------------------------

def test_sum_gives_ones(rng):
    x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_squared_norm_gives_twice_x(rng):
    v = rng.standard_normal(5)
    x = T.Tensor(v, requires_grad=True)
    T.tsum(T.square(x)).backward()
    np.testing.assert_allclose(x.grad, 2 * v, rtol=0, atol=1e-15)


def test_non_scalar_root_raises(rng):
    x = T.Tensor(rng.standard_normal(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_shared_subexpression_accumulates():
    x = T.Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    T.tsum(y + y * x).backward()
    assert x.grad[0] == pytest.approx(2 * 3 + 3 * 9)


def test_backward_is_deterministic(rng):
    arrays = {"a": rng.standard_normal((4, 3)), "b": rng.standard_normal((3, 2))}

    def build(t):
        return T.tsum(T.gelu(T.contract(t["a"], t["b"], ([1], [0]))))

    g1, g2 = ad_gradients(build, arrays), ad_gradients(build, arrays)
    for k in arrays:
        assert np.array_equal(g1[k], g2[k])


def test_no_grad_builds_no_graph(rng):
    x = T.Tensor(rng.standard_normal(3), requires_grad=True)
    with T.no_grad():
        y = T.gelu(x) * 2.0
    assert y._parents == ()


# -- finite differences on every primitive --------------------------------------

def test_fd_elementwise(rng):
    arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4)),
              "s": rng.standard_normal(1)}

    def build(t):
        x = t["a"] * t["b"] - t["a"] + (-t["b"]) * t["s"]
        return probe(T.square(x) + T.abs2(t["b"]) + T.gelu(x))

    check(build, arrays)


def test_fd_relu_away_from_kink(rng):
    a = rng.standard_normal(20)
    a[np.abs(a) < 0.1] = 0.5
    check(lambda t: probe(T.relu(t["a"])), {"a": a})


def test_fd_complex_assembly_and_modulus(rng):
    arrays = {"re": rng.standard_normal((2, 3)), "im": rng.standard_normal((2, 3))}

    def build(t):
        z = T.complex_(t["re"], t["im"])
        return probe(z * z) + T.tsum(T.abs2(z)) + probe(T.real(z), 3)

    check(build, arrays)


def test_fd_shape_ops(rng):
    arrays = {"a": rng.standard_normal((2, 3, 4))}

    def build(t):
        x = T.moveaxis(t["a"], 0, -1)
        x = T.reshape(x, (3, 8))
        y = x[1:, ::2]
        z = T.getitem(x, (np.array([0, 0, 2]), slice(None)))  # repeated index
        p = T.pad(t["a"], [(1, 0), (0, 2), (1, 1)])
        return probe(y) + probe(z, 5) + probe(p, 6) + probe(T.stack_sum([x, x * 2.0]), 8)

    check(build, arrays)


def test_fd_contractions(rng):
    arrays = {"a": rng.standard_normal((2, 3, 4)), "b": rng.standard_normal((4, 3, 5)),
              "m": rng.standard_normal((3, 2))}

    def build(t):
        c = T.contract(t["a"], t["b"], ([1, 2], [1, 0]))
        e = T.einsum("ijk,kjl->il", t["a"], t["b"])
        return probe(c) + probe(e, 4) + probe(t["m"] @ c, 5)

    check(build, arrays)


@pytest.mark.parametrize("real_out", [False, True])
def test_fd_linear_along_complex_matrix(rng, real_out):
    M = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    arrays = {"re": rng.standard_normal((2, 4, 3)), "im": rng.standard_normal((2, 4, 3))}

    def build(t):
        x = T.complex_(t["re"], t["im"])
        return probe(T.linear_along(x, M, 1, real_out=real_out)) + probe(T.linear_along(t["re"], M, 1), 2)

    check(build, arrays)


def test_fd_mode_mix(rng):
    arrays = {k: rng.standard_normal(s) for k, s in
              [("vr", (2, 3, 4)), ("vi", (2, 3, 4)), ("rr", (3, 4, 2)), ("ri", (3, 4, 2))]}

    def build(t):
        return probe(T.mode_mix(T.complex_(t["vr"], t["vi"]), T.complex_(t["rr"], t["ri"])))

    check(build, arrays)


def test_fd_fourier_transforms(rng):
    arrays = {"x": rng.standard_normal((2, 8, 6)), "y": rng.standard_normal((2, 8, 6))}

    def build(t):
        X = T.fft(t["x"], (1, 2))
        Y = T.ifft(T.complex_(t["x"], t["y"]), (1,))
        Z = T.truncated_idft(T.truncated_dft(t["y"], 1, 3), 1, 8, real_out=True)
        return probe(X) + probe(Y, 4) + probe(Z, 5) + probe(T.real(T.ifft(X, (1, 2))), 6)

    check(build, arrays)


def test_fd_windows(rng):
    arrays = {"x": rng.standard_normal((2, 7, 3))}
    check(lambda t: probe(T.windows(t["x"], (1,), (3,))), arrays)


@pytest.mark.parametrize("kind", ["dense", "cnn", "spectral_only"])
def test_fd_fno_loss(kind):
    rng = np.random.default_rng(11)
    cfg = FnoConfig((8,), 2, 3, 2, 2, (3,), kind, (3,) if kind == "cnn" else None, "gelu")
    model = init_model(cfg, rng)
    params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in model.params.items()}
    a = rng.standard_normal((3, 8, 2))
    u = rng.standard_normal((3, 8, 2))

    def build(t):
        return loss_tensor(forward_tensors(cfg, t, T.Tensor(a)), u)

    check(build, params)


def test_fd_fno_loss_fft_route():
    rng = np.random.default_rng(12)
    cfg = FnoConfig((8,), 1, 2, 1, 1, (4,), "spectral_only", None, "gelu")
    params = {k: v + 0.2 * rng.standard_normal(v.shape) for k, v in init_model(cfg, rng).params.items()}
    a = rng.standard_normal((2, 8, 1))
    u = rng.standard_normal((2, 8, 1))
    check(lambda t: loss_tensor(forward_tensors(cfg, t, T.Tensor(a), "fft"), u), params)


# -- contract examples ------------------------------------------------------------

def test_contract_identity_vector(rng):
    v = rng.standard_normal(5)
    out = T.contract(T.Tensor(np.eye(5)), T.Tensor(v), ([1], [0]))
    np.testing.assert_array_equal(out.data, v)


def test_contract_matrix_product_vs_loops(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((3, 4))
    out = T.contract(T.Tensor(a), T.Tensor(b), ([1], [0])).data
    ref = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(out - ref)) <= 1e-14 * max(1.0, np.max(np.abs(ref)))


def test_contract_with_zero(rng):
    out = T.contract(T.Tensor(rng.standard_normal((3, 4))), T.Tensor(np.zeros((4, 2))), ([1], [0]))
    assert out.shape == (3, 2) and not np.any(out.data)


def test_contract_axis_mismatch_raises(rng):
    with pytest.raises(ValueError):
        T.contract(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))), ([1], [0]))


def test_elementwise_shape_mismatch_raises():
    with pytest.raises(ValueError):
        T.Tensor(np.ones(3)) + T.Tensor(np.ones(4))
