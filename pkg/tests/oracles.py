"""Independent slow reference implementations written as explicit loops."""
import cmath
import math

import numpy as np


def lp(values, p):
    vals = [abs(v) for v in values]
    if p == math.inf:
        return max(vals) if vals else 0.0
    return sum(v ** p for v in vals) ** (1.0 / p)


def group_norm_loops(M, p, q, q_axes):
    """Inner l_p over the complement of ``q_axes``, outer l_q over ``q_axes``."""
    M = np.asarray(M)
    q_axes = tuple(a % M.ndim for a in q_axes)
    p_axes = tuple(a for a in range(M.ndim) if a not in q_axes)
    outer = []
    for qi in np.ndindex(*[M.shape[a] for a in q_axes]):
        inner = []
        for pi in np.ndindex(*[M.shape[a] for a in p_axes]):
            idx = [0] * M.ndim
            for a, v in zip(q_axes, qi):
                idx[a] = v
            for a, v in zip(p_axes, pi):
                idx[a] = v
            inner.append(M[tuple(idx)])
        outer.append(lp(inner, p))
    return lp(outer, q)


def conj_exp(p):
    if p == 1:
        return math.inf
    if p == math.inf:
        return 1.0
    return p / (p - 1)


def act(name, x):
    if name == "relu":
        return max(x, 0.0)
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def fno_forward_loops(cfg, params, a):
    """1-D FNO forward on one sample ``a`` of shape (N, d_a), all sums explicit."""
    N, H = cfg.grid[0], cfg.d_v
    k_max = cfg.k_max[0]
    F = [[cmath.exp(-2j * math.pi * x * k / N) / math.sqrt(N) for x in range(N)] for k in range(N)]
    v = [[sum(a[x, k] * params["P"][k, j] for k in range(cfg.d_a)) for j in range(H)] for x in range(N)]
    for layer in range(1, cfg.depth + 1):
        R = params[f"R{layer}_re"] + 1j * params[f"R{layer}_im"]
        vhat = [[sum(F[k][z] * v[z][i] for z in range(N)) for i in range(H)] for k in range(k_max)]
        mixed = [[sum(R[k, i, j] * vhat[k][i] for i in range(H)) for j in range(H)] for k in range(k_max)]
        new = [[0.0] * H for _ in range(N)]
        for x in range(N):
            for j in range(H):
                s = sum(F[k][x].conjugate() * mixed[k][j] for k in range(k_max)).real
                if cfg.layer_kind == "dense":
                    A = params[f"A{layer}"]
                    s += sum(A[x, z, i, j] * v[z][i] for z in range(N) for i in range(H))
                elif cfg.layer_kind == "cnn":
                    K = params[f"K{layer}"]
                    c = cfg.kernel[0]
                    h = (c - 1) // 2
                    for o in range(c):
                        z = x + o - h
                        if 0 <= z < N:
                            s += sum(K[o, i, j] * v[z][i] for i in range(H))
                new[x][j] = act(cfg.activation, s)
        v = new
    return np.array([[sum(v[x][j] * params["Q"][j, u] for j in range(H)) for u in range(cfg.d_u)]
                     for x in range(N)])


def conv_loops(K, v):
    """Zero-padded centred cross-correlation, K (c, in, out), v (N, in)."""
    c, cin, cout = K.shape
    N = v.shape[0]
    h = (c - 1) // 2
    out = np.zeros((N, cout))
    for x in range(N):
        for j in range(cout):
            for o in range(c):
                z = x + o - h
                if 0 <= z < N:
                    for i in range(cin):
                        out[x, j] += K[o, i, j] * v[z, i]
    return out
