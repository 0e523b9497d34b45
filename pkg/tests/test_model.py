import math

import numpy as np
import pytest

from fnocap import tensor as T
from fnocap.model import (FnoConfig, FnoModel, HypothesisClassSpec, cnn_apply, forward, init_model,
                          is_member, load_model, masked_spectrum, read_model_header, save_model,
                          zeros_model)
from fnocap.norms import capacity, layer_norm, output_axis_norm
from oracles import conv_loops, fno_forward_loops


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def random_model(rng, kind, N=16, k=4, H=3, D=2, d_a=2, d_u=2, c=3, act="gelu"):
    cfg = FnoConfig((N,), d_a, H, d_u, D, (k,), kind, (c,) if kind == "cnn" else None, act)
    params = {n: rng.standard_normal(s) * 0.5 for n, s in cfg.param_shapes().items()}
    return FnoModel(cfg, params)


def test_zero_model_gives_zero(rng):
    for kind in ("dense", "cnn", "spectral_only"):
        m = zeros_model(random_model(rng, kind).config)
        assert not np.any(forward(m, rng.standard_normal((16, 2))))


def test_dc_pass_through():
    cfg = FnoConfig((8,), 1, 1, 1, 1, (2,), "dense", None, "relu")
    params = {"P": np.ones((1, 1)), "Q": np.ones((1, 1)), "A1": np.zeros((8, 8, 1, 1)),
              "R1_re": np.ones((2, 1, 1)), "R1_im": np.zeros((2, 1, 1))}
    out = forward(FnoModel(cfg, params), np.ones((8, 1)))
    np.testing.assert_allclose(out, np.ones((8, 1)), atol=1e-14)


@pytest.mark.parametrize("kind", ["dense", "cnn", "spectral_only"])
@pytest.mark.parametrize("act", ["gelu", "relu"])
def test_forward_matches_loop_oracle(rng, kind, act):
    m = random_model(rng, kind, act=act)
    a = rng.standard_normal((16, 2))
    ref = fno_forward_loops(m.config, m.params, a)
    for route in ("dft", "fft"):
        out = forward(m, a, spectral=route)
        assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-9


def test_spectral_routes_agree_on_odd_grid(rng):
    m = random_model(rng, "cnn", N=12, k=5, c=5)
    a = rng.standard_normal((3, 12, 2))
    np.testing.assert_allclose(forward(m, a, "dft"), forward(m, a, "fft"), atol=1e-12)


def test_batched_equals_single(rng):
    m = random_model(rng, "cnn")
    a = rng.standard_normal((4, 16, 2))
    batch = forward(m, a)
    for i in range(4):
        np.testing.assert_allclose(batch[i], forward(m, a[i]), atol=1e-13)


def test_two_dimensional_grid_runs(rng):
    cfg = FnoConfig((4, 6), 1, 2, 1, 1, (2, 3), "cnn", (3, 3))
    m = init_model(cfg, rng)
    assert forward(m, rng.standard_normal((4, 6, 1))).shape == (4, 6, 1)
    a = rng.standard_normal((2, 4, 6, 1))
    np.testing.assert_allclose(forward(m, a, "dft"), forward(m, a, "fft"), atol=1e-12)


def test_2d_routes_agree(rng):
    cfg = FnoConfig((4, 6), 1, 2, 1, 1, (2, 3), "dense", None)
    params = {n: rng.standard_normal(s) for n, s in cfg.param_shapes().items()}
    m = FnoModel(cfg, params)
    a = rng.standard_normal((2, 4, 6, 1))
    np.testing.assert_allclose(forward(m, a, "dft"), forward(m, a, "fft"), atol=1e-12)


def test_mode_truncation_zeroes_outside_box(rng):
    cfg = FnoConfig((16,), 1, 3, 1, 1, (5,), "spectral_only")
    R = T.Tensor(rng.standard_normal((5, 3, 3)) + 1j * rng.standard_normal((5, 3, 3)))
    W = masked_spectrum(T.Tensor(rng.standard_normal((2, 16, 3))), R, cfg).data
    assert np.all(W[:, 5:, :] == 0)
    assert np.all(np.abs(W[:, :5, :]) > 0)


def test_spectral_only_with_zero_r_is_zero(rng):
    m = random_model(rng, "spectral_only")
    for i in (1, 2):
        m.params[f"R{i}_re"][...] = 0
        m.params[f"R{i}_im"][...] = 0
    assert not np.any(forward(m, rng.standard_normal((5, 16, 2))))


# -- CNN layer ---------------------------------------------------------------------

def test_pointwise_kernel_scales(rng):
    v = rng.standard_normal((1, 8, 1))
    out = cnn_apply(T.Tensor(np.full((1, 1, 1), 2.5)), T.Tensor(v)).data
    np.testing.assert_allclose(out, 2.5 * v, rtol=1e-15)


def test_centred_delta_is_identity(rng):
    v = rng.standard_normal((2, 9, 3))
    K = np.zeros((5, 3, 3))
    K[2] = np.eye(3)
    np.testing.assert_allclose(cnn_apply(T.Tensor(K), T.Tensor(v)).data, v, rtol=1e-15)


def test_conv_matches_loop_oracle(rng):
    K = rng.standard_normal((3, 2, 2))
    v = rng.standard_normal((8, 2))
    out = cnn_apply(T.Tensor(K), T.Tensor(v[None])).data[0]
    np.testing.assert_allclose(out, conv_loops(K, v), rtol=1e-13, atol=1e-14)


def test_even_kernel_rejected(rng):
    with pytest.raises(ValueError):
        cnn_apply(T.Tensor(np.ones((2, 1, 1))), T.Tensor(np.ones((1, 8, 1))))
    with pytest.raises(ValueError):
        FnoConfig((8,), 1, 1, 1, 1, (2,), "cnn", (4,))


def circulant_from_kernel(K, N):
    """Dense positional operator A[x, z, i, j] equal to the zero-padded convolution."""
    c = K.shape[0]
    h = (c - 1) // 2
    A = np.zeros((N, N) + K.shape[1:])
    for x in range(N):
        for o in range(c):
            z = x + o - h
            if 0 <= z < N:
                A[x, z] = K[o]
    return A


@pytest.mark.parametrize("N,c", [(8, 3), (16, 5), (16, 1)])
def test_dense_equals_cnn_with_convolution_matrix(rng, N, c):
    cnn = random_model(rng, "cnn", N=N, c=c)
    dense_cfg = FnoConfig((N,), 2, 3, 2, 2, (4,), "dense")
    params = {k: v for k, v in cnn.params.items() if not k.startswith("K")}
    for i in (1, 2):
        params[f"A{i}"] = circulant_from_kernel(cnn.params[f"K{i}"], N)
    dense = FnoModel(dense_cfg, params)
    a = rng.standard_normal((3, N, 2))
    np.testing.assert_allclose(forward(dense, a), forward(cnn, a), rtol=1e-12, atol=1e-12)


# -- validation ------------------------------------------------------------------

def test_shape_mismatch_rejected(rng):
    m = random_model(rng, "cnn")
    with pytest.raises(ValueError):
        forward(m, rng.standard_normal((8, 2)))
    bad = dict(m.params)
    bad["Q"] = np.zeros((4, 2))
    with pytest.raises(ValueError):
        FnoModel(m.config, bad)


def test_nan_weight_rejected(rng):
    m = random_model(rng, "cnn")
    m.params["K1"][0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        forward(m, rng.standard_normal((16, 2)))


@pytest.mark.parametrize("kwargs", [dict(k_max=(0,)), dict(k_max=(9,)), dict(depth=0),
                                    dict(layer_kind="fcn"), dict(activation="tanh")])
def test_invalid_config(kwargs):
    base = dict(grid=(8,), d_a=1, d_v=2, d_u=1, depth=1, k_max=(3,), layer_kind="spectral_only")
    base.update(kwargs)
    with pytest.raises(ValueError):
        FnoConfig(**base)


# -- class membership -----------------------------------------------------------------

def test_zero_model_is_member(rng):
    cfg = random_model(rng, "dense").config
    cls = HypothesisClassSpec(cfg, 2.0, 2.0, 0.1, (0.1, 0.1), 0.1)
    assert is_member(zeros_model(cfg), cls)


def test_q_cap_violation():
    cfg = FnoConfig((8,), 1, 1, 1, 1, (2,), "spectral_only")
    m = zeros_model(cfg)
    m.params["Q"][0, 0] = 2.0
    assert output_axis_norm(m.params["Q"], 2.0, math.inf) == 2.0
    assert not is_member(m, HypothesisClassSpec(cfg, 2.0, 2.0, 1.0, (1.0,), 1.0))


def test_membership_boundary_is_inclusive(rng):
    m = random_model(rng, "cnn", D=1)
    p, q = 1.2, 4.0
    caps = (output_axis_norm(m.params["P"], p, q), (layer_norm(m, 1, p, q),),
            output_axis_norm(m.params["Q"], p, math.inf))
    assert is_member(m, HypothesisClassSpec(m.config, p, q, caps[0], caps[1], caps[2]))
    gamma = capacity(m, p, q).gamma
    assert is_member(m, HypothesisClassSpec(m.config, p, q, gamma=gamma))
    assert not is_member(m, HypothesisClassSpec(m.config, p, q, gamma=gamma * (1 - 1e-9)))
    tight = HypothesisClassSpec(m.config, p, q, caps[0], (caps[1][0] * (1 - 1e-9),), caps[2])
    assert not is_member(m, tight)


# -- serialization ---------------------------------------------------------------

@pytest.mark.parametrize("kind", ["dense", "cnn", "spectral_only"])
def test_model_roundtrip_bit_exact(tmp_path, rng, kind):
    m = random_model(rng, kind)
    path = tmp_path / "m.fno"
    save_model(m, path, {"note": "x"})
    back = load_model(path)
    assert back.config == m.config
    for k, v in m.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert read_model_header(path)["meta"] == {"note": "x"}
    save_model(back, tmp_path / "m2.fno", {"note": "x"})
    assert (tmp_path / "m2.fno").read_bytes() == path.read_bytes()


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b'{"magic": "nope"}\n')
    with pytest.raises(ValueError):
        load_model(p)
