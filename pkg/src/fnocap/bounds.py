"""Closed-form capacity bounds and Monte-Carlo estimates that must sit below them.

Every closed-form bound shares the architecture factor

* dense / spectral-only layers: ``L^D (N H)^(D e) H^e``
* CNN layers:                   ``L^D H^((D + 1) e)``

with ``e = relu(1/p* - 1/q)``, ``N`` the total grid size and ``H`` the width.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import norms
from . import tensor as T
from .burgers import Dataset
from .model import FnoModel, HypothesisClassSpec, forward, forward_tensors
from .norms import INF, conjugate, lp_norm, relu_exponent
from .train import dataset_loss

KINDS = ("dense", "spectral_only", "cnn")


def _fmt(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


@dataclass(frozen=True)
class BoundInputs:
    L: float
    D: int
    N: int
    H: int
    d_u: int
    p: float
    q: float
    a_norms: tuple[float, ...] = ()
    caps: tuple[float, ...] | None = None  # (C_P, C_1..C_D, C_Q)
    gamma: float | None = None
    eps: float = 0.0
    delta: float = 0.05
    kind: str = "dense"

    def __post_init__(self):
        object.__setattr__(self, "a_norms", tuple(float(x) for x in self.a_norms))
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if min(self.L, self.eps) < 0 or min(self.N, self.H, self.d_u) < 1 or self.D < 1:
            raise ValueError("bound inputs must be nonnegative with N, H, d_u, D >= 1")
        if any(x < 0 for x in self.a_norms):
            raise ValueError("sample norms must be nonnegative")
        if self.caps is not None:
            object.__setattr__(self, "caps", tuple(float(c) for c in self.caps))
            if len(self.caps) != self.D + 2:
                raise ValueError("caps must be (C_P, C_1..C_D, C_Q)")
            if min(self.caps) < 0:
                raise ValueError("caps must be nonnegative")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def p_star(self) -> float:
        return conjugate(self.p)

    @property
    def e(self) -> float:
        return relu_exponent(self.p, self.q)

    @property
    def m(self) -> int:
        return len(self.a_norms)

    @property
    def mean_a(self) -> float:
        return float(np.mean(self.a_norms)) if self.a_norms else 0.0

    @property
    def B(self) -> float:
        return max(self.a_norms) if self.a_norms else 0.0

    def cap_product(self) -> float:
        if self.caps is None:
            raise ValueError("per-layer caps not set")
        return float(np.prod(self.caps))

    def gamma_cap(self) -> float:
        if self.gamma is None:
            raise ValueError("gamma not set")
        return float(self.gamma)


def architecture_factor(inp: BoundInputs, cnn: bool | None = None) -> float:
    cnn = inp.kind == "cnn" if cnn is None else cnn
    e = inp.e
    if cnn:
        return inp.L ** inp.D * float(inp.H) ** ((inp.D + 1) * e)
    return inp.L ** inp.D * float(inp.N * inp.H) ** (inp.D * e) * float(inp.H) ** e


def _sample_factor(inp: BoundInputs) -> float:
    return float(inp.N) ** norms.inv(inp.p) * inp.d_u


# -- output-norm (peeling) bounds ------------------------------------------------------

def lemma3_sup_bound(inp: BoundInputs, a_norm: float) -> float:
    """Sup of ||h(a)||_{p*,inf} over the dense / spectral-only class."""
    return architecture_factor(inp, cnn=False) * inp.cap_product() * a_norm


def lemma3prime_sup_bound(inp: BoundInputs, a_norm: float) -> float:
    """Sup of ||h(a)||_{p*,inf} over the CNN class."""
    return architecture_factor(inp, cnn=True) * inp.cap_product() * a_norm


def sup_bound(inp: BoundInputs, a_norm: float) -> float:
    if inp.kind == "cnn":
        return lemma3prime_sup_bound(inp, a_norm)
    return lemma3_sup_bound(inp, a_norm)


# -- Rademacher bounds -------------------------------------------------------------

def theorem1_bound(inp: BoundInputs) -> float:
    return architecture_factor(inp, cnn=False) * _sample_factor(inp) * inp.cap_product() * inp.mean_a


def theorem2_bound(inp: BoundInputs) -> float:
    return architecture_factor(inp, cnn=True) * _sample_factor(inp) * inp.cap_product() * inp.mean_a


def rademacher_bound(inp: BoundInputs) -> float:
    return theorem2_bound(inp) if inp.kind == "cnn" else theorem1_bound(inp)


def corollary1_bound(inp: BoundInputs) -> float:
    """Rademacher bound for the class gamma_{p,q}(h) <= gamma."""
    return architecture_factor(inp) * _sample_factor(inp) * inp.gamma_cap() * inp.mean_a


# -- generalization gap ------------------------------------------------------------

def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def concentration_term(eps: float, m: int, delta: float) -> float:
    _check_delta(delta)
    if m < 1:
        raise ValueError("need m >= 1")
    return eps ** 2 * math.sqrt(2.0 * math.log(4.0 / delta) / m)


def theorem4_gap_bound(inp: BoundInputs) -> float:
    """4 sqrt2 eps gamma (arch) N^(1/p) d_u mean||a||_{p*} + eps^2 sqrt(2 log(4/delta) / m)."""
    _check_delta(inp.delta)
    lead = 4.0 * math.sqrt(2.0) * inp.eps * inp.gamma_cap() * architecture_factor(inp)
    return lead * _sample_factor(inp) * inp.mean_a + concentration_term(inp.eps, inp.m, inp.delta)


def corollary2_bounds(inp: BoundInputs) -> tuple[float, float]:
    """(gap bound, expected-loss bound) with gamma and B = max_i ||a_i||_{p*}."""
    _check_delta(inp.delta)
    lead = 4.0 * math.sqrt(2.0) * inp.eps * architecture_factor(inp) * _sample_factor(inp)
    lead *= inp.gamma_cap() * inp.B
    conc = concentration_term(inp.eps, inp.m, inp.delta)
    return lead + conc, lead + inp.eps ** 2 + conc


# -- model-level helpers -------------------------------------------------------------

def input_norm(a, p: float) -> float:
    """||a||_{p*} over all entries of one discretized input."""
    return float(lp_norm(np.ravel(a), conjugate(p)))


def output_norm(out, p: float) -> float:
    """||h(a)||_{p*,inf}: p* over positions, sup over output channels."""
    out = np.asarray(out)
    flat = out.reshape(-1, out.shape[-1])
    return float(np.max(lp_norm(flat, conjugate(p), axis=0)))


def own_caps(model: FnoModel, p: float, q: float) -> tuple[float, ...]:
    """The model's own layer norms as caps, Q measured in ||.||_{p,inf}."""
    rep = norms.capacity(model, p, q)
    return tuple(rep.layer_norms[:-1]) + (rep.q_sup_norm,)


def model_inputs(model: FnoModel, p: float, q: float, a_norms: Sequence[float] = (),
                 **kw) -> BoundInputs:
    cfg = model.config
    return BoundInputs(L=cfg.act.lipschitz, D=cfg.depth, N=cfg.N, H=cfg.d_v, d_u=cfg.d_u,
                       p=p, q=q, a_norms=tuple(a_norms), kind=cfg.layer_kind, **kw)


def class_inputs(cls: HypothesisClassSpec, a_norms: Sequence[float]) -> BoundInputs:
    cfg = cls.config
    caps = None if cls.uses_gamma else (cls.c_p,) + tuple(cls.c_layers) + (cls.c_q,)
    return BoundInputs(L=cfg.act.lipschitz, D=cfg.depth, N=cfg.N, H=cfg.d_v, d_u=cfg.d_u,
                       p=cls.p, q=cls.q, a_norms=tuple(a_norms), caps=caps,
                       gamma=cls.gamma, kind=cfg.layer_kind)


def class_bound(cls: HypothesisClassSpec, samples) -> float:
    """The closed-form Rademacher bound matching the class kind and cap style."""
    inp = class_inputs(cls, [input_norm(a, cls.p) for a in samples])
    return corollary1_bound(inp) if cls.uses_gamma else rademacher_bound(inp)


# -- empirical Rademacher complexity ---------------------------------------------

def _group_norm_value(params: dict, cfg, group: Sequence[str], p: float, q: float,
                      gamma_mode: bool) -> float:
    if group == ["P"]:
        return norms.output_axis_norm(params["P"], p, q)
    if group == ["Q"]:
        return norms.output_axis_norm(params["Q"], p, q if gamma_mode else INF)
    i = int(group[-1][1:].split("_")[0])
    R = params[f"R{i}_re"] + 1j * params[f"R{i}_im"]
    if cfg.layer_kind == "cnn":
        return norms.cnn_layer_norm(params[f"K{i}"], R, p, q, cfg.k_max, cfg.kernel)
    A = params.get(f"A{i}")
    return norms.dense_layer_norm(A, R, p, q, cfg.k_max, cfg.N)


# rescaling exactly onto a cap can overshoot it by an ulp; stay strictly inside
_INSIDE = 1.0 - 1e-13


def project(model: FnoModel, cls: HypothesisClassSpec, to_boundary: bool = False) -> FnoModel:
    """Radially rescale each layer group onto its cap (only shrinking unless ``to_boundary``).

    For a gamma class the model is rescaled as a whole, split evenly over the
    layer groups, since only the product of layer norms is constrained.
    """
    cfg, p, q = cls.config, cls.p, cls.q
    out = model.copy()
    groups = out.layer_groups()
    vals = [_group_norm_value(out.params, cfg, g, p, q, cls.uses_gamma) for g in groups]
    if cls.uses_gamma:
        total = float(np.prod(vals))
        if total == 0.0 or (total <= cls.gamma and not to_boundary):
            if cls.gamma == 0.0:
                for name in out.params:
                    out.params[name][...] = 0.0
            return out
        scales = [(_INSIDE * cls.gamma / total) ** (1.0 / len(groups))] * len(groups)
    else:
        caps = [cls.c_p, *cls.c_layers, cls.c_q]
        scales = []
        for v, c in zip(vals, caps):
            if v == 0.0:
                scales.append(1.0 if c > 0 else 0.0)
            elif v > c or to_boundary:
                scales.append(_INSIDE * c / v)
            else:
                scales.append(1.0)
    for g, s in zip(groups, scales):
        for name in g:
            out.params[name] = out.params[name] * s
    return out


def _random_direction(cfg, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Gaussian weights with a random sparsity mask, to spread over the ball."""
    out = {}
    for name, shape in cfg.param_shapes().items():
        w = rng.standard_normal(shape)
        if rng.random() < 0.5:
            w *= rng.random(shape) < rng.uniform(0.05, 1.0)
        out[name] = w
    return out


def random_members(cls: HypothesisClassSpec, count: int, rng: np.random.Generator) -> list[FnoModel]:
    """Random class members, each pushed out to the cap boundary."""
    members = []
    for _ in range(count):
        model = FnoModel(cls.config, _random_direction(cls.config, rng))
        members.append(project(model, cls, to_boundary=True))
    return members


def rademacher_objective(outputs: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """(1/m) sum_{i,x,j} eps_{ixj} h(a_i)_{xj} for a stack of model outputs."""
    m = signs.shape[0]
    return np.tensordot(outputs, signs, axes=signs.ndim) / m


def _pga(start: FnoModel, cls: HypothesisClassSpec, a: np.ndarray, signs: np.ndarray,
         steps: int, step: float) -> float:
    """Projected gradient ascent on the signed correlation; returns the best value seen."""
    model = start
    cfg = cls.config
    m = a.shape[0]
    best = -math.inf
    at = T.Tensor(a)
    for _ in range(steps + 1):
        w = {k: T.Tensor(v, requires_grad=True) for k, v in model.params.items()}
        out = forward_tensors(cfg, w, at)
        obj = T.tsum(out * T.Tensor(signs)) * (1.0 / m)
        best = max(best, obj.item())
        obj.backward()
        new = {}
        for k, t in w.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            gn = np.linalg.norm(g)
            wn = np.linalg.norm(t.data)
            new[k] = t.data + (step * max(wn, 1e-12) / gn) * g if gn > 0 else t.data.copy()
        model = project(FnoModel(cfg, new), cls)
    return best


def empirical_rademacher(cls: HypothesisClassSpec, samples, n_eps: int = 64,
                         search: str | Sequence[str] = ("random", "pga"), n_random: int = 500,
                         pga_steps: int = 20, pga_step: float = 0.1, seed: int = 0) -> float:
    """Monte-Carlo lower estimate of E_eps[(1/m) sup_h sum eps_{ixj} h(a_i)_{xj}].

    The sup over the class is replaced by a maximum over random members
    (shared across sign draws) and, for ``pga``, projected gradient ascent
    started from the best random member.  Because negating Q keeps a model in
    the class, each candidate contributes ``|objective|``.  Sign draw ``k``
    uses the RNG stream ``(seed, k)``.
    """
    search = (search,) if isinstance(search, str) else tuple(search)
    if not set(search) <= {"random", "pga"} or not search:
        raise ValueError("search must use 'random' and/or 'pga'")
    a = np.asarray(samples, dtype=np.float64)
    if a.ndim == cls.config.d + 1:
        a = a[None]
    caps = [cls.gamma] if cls.uses_gamma else [cls.c_p, *cls.c_layers, cls.c_q]
    if min(caps) == 0.0 or not np.any(a):
        return 0.0
    members = random_members(cls, n_random, np.random.default_rng([seed, 1 << 20]))
    outputs = np.stack([forward(h, a) for h in members])
    out_shape = outputs.shape[1:]
    total = 0.0
    for k in range(n_eps):
        rng = np.random.default_rng([seed, k])
        signs = rng.choice([-1.0, 1.0], size=out_shape)
        vals = rademacher_objective(outputs, signs)
        best_idx = int(np.argmax(np.abs(vals)))
        best = float(np.abs(vals[best_idx])) if "random" in search else -math.inf
        if "pga" in search:
            flip = 1.0 if vals[best_idx] >= 0 else -1.0
            start = members[best_idx].copy()
            start.params["Q"] = flip * start.params["Q"]
            best = max(best, _pga(start, cls, a, signs, pga_steps, pga_step))
        total += max(best, 0.0)
    return total / n_eps


# -- reports -------------------------------------------------------------------------

@dataclass
class BoundReport:
    bounds: dict[str, float] = field(default_factory=dict)
    empirical: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def record(self, name: str, bound: float, empirical: float | None = None) -> None:
        self.bounds[name] = float(bound)
        if empirical is not None:
            self.empirical[name] = float(empirical)
            self.flags[name] = bool(empirical <= bound)

    def to_dict(self) -> dict:
        return {
            "bounds": {k: _fmt(v) for k, v in self.bounds.items()},
            "empirical": {k: _fmt(v) for k, v in self.empirical.items()},
            "flags": self.flags,
            "ok": self.ok,
            "info": {k: _fmt(v) for k, v in self.info.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def loss_radius(model: FnoModel, data: Dataset) -> float:
    """eps = max_i sqrt(||h(a_i) - u_i||_2) over the data set."""
    pred = forward(model, data.a)
    dist = np.sqrt(np.sum((pred - data.u) ** 2, axis=tuple(range(1, pred.ndim))))
    return float(np.sqrt(np.max(dist)))


def corollary2_posterior(model: FnoModel, train: Dataset, p: float, q: float,
                         delta: float = 0.05, test: Dataset | None = None) -> BoundReport:
    """Posterior gap and expected-loss bounds for a trained model.

    With ``test`` given, the observed gap (test loss minus train loss) and
    the test loss are checked against the two bounds.
    """
    _check_delta(delta)
    a_norms = [input_norm(a, p) for a in train.a]
    gamma = norms.capacity(model, p, q).gamma
    eps = loss_radius(model, train)
    inp = model_inputs(model, p, q, a_norms, gamma=gamma, eps=eps, delta=delta)
    gap_bound, expected_bound = corollary2_bounds(inp)
    rep = BoundReport(info={"p": p, "q": q, "delta": delta, "eps": eps, "gamma": gamma,
                            "B": inp.B, "m": inp.m, "kind": inp.kind})
    train_loss = dataset_loss(model, train)
    rep.info["train_loss"] = train_loss
    rep.record("theorem4_gap", theorem4_gap_bound(inp))
    if test is None:
        rep.record("corollary2_gap", gap_bound)
        rep.record("corollary2_expected", expected_bound)
        return rep
    test_loss = dataset_loss(model, test)
    gap = test_loss - train_loss
    rep.info["test_loss"] = test_loss
    rep.record("corollary2_gap", gap_bound, gap)
    rep.record("corollary2_expected", expected_bound, test_loss)
    rep.info["gap_ratio"] = gap_bound / gap if gap > 0 else INF
    return rep


def check_model(model: FnoModel, train: Dataset, p: float, q: float, delta: float = 0.05,
                test: Dataset | None = None) -> BoundReport:
    """Full report for one concrete model: own-norm sup bound plus the posterior bounds."""
    rep = corollary2_posterior(model, train, p, q, delta, test)
    caps = own_caps(model, p, q)
    inp = model_inputs(model, p, q, caps=caps)
    outs = forward(model, train.a)
    slack = math.inf
    worst_bound, worst_emp = 0.0, 0.0
    for a, o in zip(train.a, outs):
        b = sup_bound(inp, input_norm(a, p))
        e = output_norm(o, p)
        if b - e < slack:
            slack, worst_bound, worst_emp = b - e, b, e
    rep.record("lemma3_sup", worst_bound, worst_emp)
    a_norms = [input_norm(a, p) for a in train.a]
    full = model_inputs(model, p, q, a_norms, caps=caps, gamma=rep.info["gamma"])
    rep.record("theorem1_rademacher", rademacher_bound(full))
    rep.record("corollary1_rademacher", corollary1_bound(full))
    return rep
