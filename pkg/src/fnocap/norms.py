"""Group norms of weight tensors, per-layer composite norms, and capacities.

Convention for every weight tensor: the q-group holds the *output* indices
(the output channel, plus the output position for the dense positional
operator ``A``), the p-group holds everything else (input positions,
frequencies, kernel offsets, input channel).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .model import FnoModel

INF = math.inf


def conjugate(p: float) -> float:
    """Hoelder conjugate p* with 1/p + 1/p* = 1 (1 <-> inf)."""
    _check_exponent(p)
    if p == 1:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def inv(p: float) -> float:
    return 0.0 if p == INF else 1.0 / p


def relu_exponent(p: float, q: float) -> float:
    """The exponent relu(1/p* - 1/q) shared by all bounds."""
    return max(0.0, inv(conjugate(p)) - inv(q))


def _check_exponent(p: float) -> None:
    if not (p >= 1):
        raise ValueError(f"norm exponent must be >= 1, got {p}")


def lp_norm(x, p: float, axis=None) -> np.ndarray | float:
    """l_p norm of |x| along ``axis``; overflow-safe for very large finite p."""
    _check_exponent(p)
    a = np.abs(np.asarray(x))
    if p == INF:
        return np.max(a, axis=axis)
    if p == 1:
        return np.sum(a, axis=axis) if axis is not None else float(np.sum(a))
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    s = np.sum((a / safe) ** p, axis=axis, keepdims=True) ** (1.0 / p) * m
    return np.squeeze(s, axis=axis) if axis is not None else s.item()


@dataclass(frozen=True)
class GroupNormSpec:
    p: float
    q: float
    p_axes: tuple[int, ...] = ()
    q_axes: tuple[int, ...] = ()

    def __post_init__(self):
        _check_exponent(self.p)
        _check_exponent(self.q)

    @property
    def p_star(self) -> float:
        return conjugate(self.p)


def group_norm(M, spec: GroupNormSpec) -> float:
    """Inner l_p over ``spec.p_axes``, then outer l_q over ``spec.q_axes``."""
    M = np.asarray(M)
    nd = M.ndim
    pa = tuple(a % nd for a in spec.p_axes)
    qa = tuple(a % nd for a in spec.q_axes)
    if set(pa) & set(qa) or set(pa) | set(qa) != set(range(nd)):
        raise ValueError(f"axes {pa} | {qa} must partition the {nd} axes of the tensor")
    moved = np.transpose(M, qa + pa).reshape(int(np.prod([M.shape[a] for a in qa])), -1)
    if moved.shape[1] == 0 or moved.shape[0] == 0:
        return 0.0
    inner = lp_norm(moved, spec.p, axis=1)
    return float(lp_norm(inner, spec.q, axis=0))


def norm_pq(M, p: float, q: float, q_axes: Iterable[int]) -> float:
    """Group norm with the p-group being the complement of ``q_axes``."""
    nd = np.ndim(M)
    qa = tuple(a % nd for a in q_axes)
    pa = tuple(a for a in range(nd) if a not in qa)
    return group_norm(M, GroupNormSpec(p, q, pa, qa))


def output_axis_norm(M, p: float, q: float) -> float:
    """Norm for P, Q, K_i, R_i: only the last (output-channel) axis is in the q-group."""
    return norm_pq(M, p, q, (-1,))


def dense_operator_norm(A, p: float, q: float, d: int) -> float:
    """Norm of the positional operator A[x..., z..., in, out]; q-group = (x..., out)."""
    return norm_pq(A, p, q, tuple(range(d)) + (-1,))


def dense_layer_norm(A, R, p: float, q: float, k_max: Sequence[int], N: int) -> float:
    """||A||_{p,q} + ||R||_{p,q} (prod k_max)^{1/p*} / N^{relu(1/p* - 1/q)}.

    ``A=None`` stands for a layer without the positional term.
    """
    d = len(k_max)
    ps = conjugate(p)
    a_norm = 0.0 if A is None else dense_operator_norm(A, p, q, d)
    r_norm = output_axis_norm(R, p, q)
    modes = float(np.prod(k_max)) ** inv(ps)
    return a_norm + r_norm * modes / float(N) ** relu_exponent(p, q)


def cnn_layer_norm(K, R, p: float, q: float, k_max: Sequence[int], kernel: Sequence[int]) -> float:
    """||K||_{p,q} (prod c)^{1/p*} + (prod k_max)^{1/p*} ||R||_{p,q}."""
    ps = conjugate(p)
    k_part = output_axis_norm(K, p, q) * float(np.prod(kernel)) ** inv(ps)
    r_part = float(np.prod(k_max)) ** inv(ps) * output_axis_norm(R, p, q)
    return k_part + r_part


def _fmt_exp(x: float):
    return "inf" if x == INF else x


@dataclass
class CapacityReport:
    p: float
    q: float
    layer_norms: list[float]
    gamma: float
    layer_names: list[str] = field(default_factory=list)
    q_sup_norm: float = 0.0  # ||Q||_{p,inf}, used for class membership

    def to_dict(self) -> dict:
        return {
            "p": _fmt_exp(self.p),
            "q": _fmt_exp(self.q),
            "layer_names": self.layer_names,
            "layer_norms": self.layer_norms,
            "gamma": self.gamma,
            "q_sup_norm": self.q_sup_norm,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def layer_norm(model: "FnoModel", i: int, p: float, q: float) -> float:
    """Composite norm of Fourier layer ``i`` (1-based)."""
    cfg, prm = model.config, model.params
    R = prm[f"R{i}_re"] + 1j * prm[f"R{i}_im"]
    if cfg.layer_kind == "cnn":
        return cnn_layer_norm(prm[f"K{i}"], R, p, q, cfg.k_max, cfg.kernel)
    A = prm[f"A{i}"] if cfg.layer_kind == "dense" else None
    return dense_layer_norm(A, R, p, q, cfg.k_max, cfg.N)


def capacity(model: "FnoModel", p: float, q: float) -> CapacityReport:
    """gamma_{p,q}: product of lifting, Fourier-layer and projection norms."""
    prm = model.params
    D = model.config.depth
    names = ["P"] + [f"layer{i}" for i in range(1, D + 1)] + ["Q"]
    norms = [output_axis_norm(prm["P"], p, q)]
    norms += [layer_norm(model, i, p, q) for i in range(1, D + 1)]
    norms.append(output_axis_norm(prm["Q"], p, q))
    return CapacityReport(
        p=p,
        q=q,
        layer_norms=norms,
        gamma=float(np.prod(norms)),
        layer_names=names,
        q_sup_norm=output_axis_norm(prm["Q"], p, INF),
    )


def spectral_norm_product(model: "FnoModel", p: float, q: float) -> float:
    """prod_i ||R_i||_{p,q} over the Fourier layers."""
    prm = model.params
    out = 1.0
    for i in range(1, model.config.depth + 1):
        out *= output_axis_norm(prm[f"R{i}_re"] + 1j * prm[f"R{i}_im"], p, q)
    return out
