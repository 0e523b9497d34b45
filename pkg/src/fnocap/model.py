"""Fourier neural operator: configuration, weights, forward pass, file format.

Data layout is channels-last: a batch of discretized functions has shape
``(B, N_1, ..., N_d, C)``.  Weight layouts (``in``/``out`` = channel axes):

* ``P``  ``(d_a, d_v)``, ``Q`` ``(d_v, d_u)``
* ``A{i}`` ``(N_1..N_d, N_1..N_d, d_v, d_v)``, output position first
* ``K{i}`` ``(c_1..c_d, d_v, d_v)``
* ``R{i}_re``/``R{i}_im`` ``(k_1..k_d, d_v, d_v)``, modes ``0..k_j-1`` per axis

There are no bias terms anywhere.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import norms
from . import tensor as T
from .activations import Activation

LAYER_KINDS = ("dense", "cnn", "spectral_only")
MODEL_MAGIC = "FNOCAP-MODEL v1"


@dataclass(frozen=True)
class FnoConfig:
    grid: tuple[int, ...]
    d_a: int
    d_v: int
    d_u: int
    depth: int
    k_max: tuple[int, ...]
    layer_kind: str = "cnn"
    kernel: tuple[int, ...] | None = None
    activation: str = "gelu"

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        object.__setattr__(self, "k_max", tuple(int(k) for k in self.k_max))
        if self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(c) for c in self.kernel))
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"layer_kind must be one of {LAYER_KINDS}, got {self.layer_kind!r}")
        if not self.grid or min(self.grid) < 1:
            raise ValueError("grid sizes must be >= 1")
        if min(self.d_a, self.d_v, self.d_u, self.depth) < 1:
            raise ValueError("channel sizes and depth must be >= 1")
        if len(self.k_max) != self.d:
            raise ValueError("k_max needs one entry per spatial axis")
        for k, n in zip(self.k_max, self.grid):
            if not 1 <= k <= n:
                raise ValueError(f"k_max entry {k} outside [1, {n}]")
        if self.layer_kind == "cnn":
            if self.kernel is None or len(self.kernel) != self.d:
                raise ValueError("cnn layers need one kernel size per spatial axis")
            for c, n in zip(self.kernel, self.grid):
                if c % 2 == 0:
                    raise ValueError(f"kernel sizes must be odd, got {c}")
                if not 1 <= c <= n:
                    raise ValueError(f"kernel size {c} outside [1, {n}]")
        Activation(self.activation)

    @property
    def d(self) -> int:
        return len(self.grid)

    @property
    def N(self) -> int:
        return int(np.prod(self.grid))

    @property
    def act(self) -> Activation:
        return Activation(self.activation)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        H = self.d_v
        shapes = {"P": (self.d_a, H)}
        for i in range(1, self.depth + 1):
            if self.layer_kind == "dense":
                shapes[f"A{i}"] = self.grid + self.grid + (H, H)
            elif self.layer_kind == "cnn":
                shapes[f"K{i}"] = self.kernel + (H, H)
            shapes[f"R{i}_re"] = self.k_max + (H, H)
            shapes[f"R{i}_im"] = self.k_max + (H, H)
        shapes["Q"] = (H, self.d_u)
        return shapes

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = list(self.grid)
        out["k_max"] = list(self.k_max)
        out["kernel"] = None if self.kernel is None else list(self.kernel)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FnoConfig":
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        d["k_max"] = tuple(d["k_max"])
        if d.get("kernel") is not None:
            d["kernel"] = tuple(d["kernel"])
        return cls(**d)


@dataclass
class FnoModel:
    config: FnoConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        validate_params(self.config, self.params)

    def copy(self) -> "FnoModel":
        return FnoModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def __call__(self, a, spectral: str = "dft") -> np.ndarray:
        return forward(self, a, spectral=spectral)

    def layer_groups(self) -> list[list[str]]:
        """Parameter names grouped the way the layer norms group them."""
        groups = [["P"]]
        for i in range(1, self.config.depth + 1):
            g = [n for n in (f"A{i}", f"K{i}") if n in self.params]
            groups.append(g + [f"R{i}_re", f"R{i}_im"])
        groups.append(["Q"])
        return groups


def validate_params(config: FnoConfig, params: dict[str, np.ndarray]) -> None:
    shapes = config.param_shapes()
    if set(params) != set(shapes):
        raise ValueError(f"parameter names {sorted(params)} != expected {sorted(shapes)}")
    for name, shape in shapes.items():
        arr = params[name]
        if tuple(arr.shape) != shape:
            raise ValueError(f"{name}: shape {arr.shape} != expected {shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite entries")


def zeros_model(config: FnoConfig) -> FnoModel:
    return FnoModel(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})


def init_model(config: FnoConfig, rng: np.random.Generator) -> FnoModel:
    """Fan-in uniform init for real weights; U(0, 1/H^2) for spectral weights."""
    params = {}
    H = config.d_v
    for name, shape in config.param_shapes().items():
        if name == "P":
            bound = 1.0 / math.sqrt(config.d_a)
        elif name == "Q":
            bound = 1.0 / math.sqrt(H)
        elif name.startswith("K"):
            bound = 1.0 / math.sqrt(H * int(np.prod(config.kernel)))
        elif name.startswith("A"):
            bound = 1.0 / math.sqrt(H * config.N)
        else:
            params[name] = rng.uniform(0.0, 1.0 / (H * H), size=shape)
            continue
        params[name] = rng.uniform(-bound, bound, size=shape)
    return FnoModel(config, params)


# -- forward pass ---------------------------------------------------------------

def masked_spectrum(v: T.Tensor, R: T.Tensor, config: FnoConfig) -> T.Tensor:
    """R . FFT(v) on the retained modes, zero elsewhere, at full grid size."""
    sp_axes = tuple(range(1, config.d + 1))
    V = T.fft(v, sp_axes)
    keep = (slice(None),) + tuple(slice(0, k) for k in config.k_max) + (slice(None),)
    W = T.mode_mix(V[keep], R)
    widths = [(0, 0)] + [(0, n - k) for n, k in zip(config.grid, config.k_max)] + [(0, 0)]
    return T.pad(W, widths)


def spectral_branch(v: T.Tensor, R: T.Tensor, config: FnoConfig, spectral: str = "dft") -> T.Tensor:
    """Re IFFT(R . FFT(v)|_K) for a batch ``v`` of shape (B, *grid, H).

    ``spectral="fft"`` runs the full radix-2 transforms and zero-fills the
    discarded modes; ``"dft"`` evaluates the same unitary kernel only on the
    retained modes.  Both give the same result to rounding error.
    """
    d = config.d
    sp_axes = tuple(range(1, d + 1))
    if spectral == "fft":
        return T.real(T.ifft(masked_spectrum(v, R, config), sp_axes))
    if spectral != "dft":
        raise ValueError(f"unknown spectral route {spectral!r}")
    V = v
    for ax, k in zip(sp_axes, config.k_max):
        V = T.truncated_dft(V, ax, k)
    W = T.mode_mix(V, R)
    for j, (ax, n) in enumerate(zip(sp_axes, config.grid)):
        W = T.truncated_idft(W, ax, n, real_out=(j == d - 1))
    return W


def cnn_apply(K: T.Tensor, v: T.Tensor) -> T.Tensor:
    """Zero-padded, centred multi-channel cross-correlation.

    ``K`` is (c_1..c_d, in, out) with odd c_j; ``v`` is (B, N_1..N_d, in).
    out[b, z, j] = sum_{o, k} K[o, k, j] * v[b, z + o - (c-1)/2, k].
    """
    sizes = K.shape[:-2]
    d = len(sizes)
    if any(c % 2 == 0 for c in sizes):
        raise ValueError(f"kernel sizes must be odd, got {sizes}")
    if v.ndim != d + 2 or v.shape[-1] != K.shape[-2]:
        raise ValueError(f"cnn_apply: input shape {v.shape} incompatible with kernel {K.shape}")
    widths = [(0, 0)] + [((c - 1) // 2, (c - 1) // 2) for c in sizes] + [(0, 0)]
    win = T.windows(T.pad(v, widths), tuple(range(1, d + 1)), sizes)
    # win: (B, N..., in, c...) ; K: (c..., in, out)
    return T.contract(win, K, ([d + 1] + list(range(d + 2, 2 * d + 2)), [d] + list(range(d))))


def dense_apply(A: T.Tensor, v: T.Tensor, config: FnoConfig) -> T.Tensor:
    B = v.shape[0]
    N, H = config.N, config.d_v
    A2 = T.reshape(A, (N, N, H, H))
    out = T.einsum("xzio,bzi->bxo", A2, T.reshape(v, (B, N, H)))
    return T.reshape(out, (B,) + config.grid + (H,))


def forward_tensors(config: FnoConfig, w: dict[str, T.Tensor], a: T.Tensor, spectral: str = "dft") -> T.Tensor:
    """Batched forward on autodiff tensors; ``a`` is (B, *grid, d_a)."""
    expect = config.grid + (config.d_a,)
    if tuple(a.shape[1:]) != expect:
        raise ValueError(f"input shape {a.shape} does not match (B,)+{expect}")
    act = config.act
    last = a.ndim - 1
    v = T.contract(a, w["P"], ([last], [0]))
    for i in range(1, config.depth + 1):
        R = T.complex_(w[f"R{i}_re"], w[f"R{i}_im"])
        pre = spectral_branch(v, R, config, spectral)
        if config.layer_kind == "dense":
            pre = pre + dense_apply(w[f"A{i}"], v, config)
        elif config.layer_kind == "cnn":
            pre = pre + cnn_apply(w[f"K{i}"], v)
        v = act(pre)
    return T.contract(v, w["Q"], ([last], [0]))


def forward(model: FnoModel, a, spectral: str = "dft") -> np.ndarray:
    """Evaluate the model on one sample (*grid, d_a) or a batch (B, *grid, d_a)."""
    cfg = model.config
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == cfg.d + 1
    if single:
        a = a[None]
    validate_params(cfg, model.params)
    with T.no_grad():
        w = {k: T.Tensor(v) for k, v in model.params.items()}
        out = forward_tensors(cfg, w, T.Tensor(a), spectral).data
    return out[0] if single else out


# -- hypothesis classes -----------------------------------------------------------

@dataclass(frozen=True)
class HypothesisClassSpec:
    """Per-layer caps (C_P, C_1..C_D, C_Q) or a single capacity cap ``gamma``."""

    config: FnoConfig
    p: float
    q: float
    c_p: float | None = None
    c_layers: tuple[float, ...] | None = None
    c_q: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        caps = (self.c_p, self.c_layers, self.c_q)
        if self.gamma is None and any(c is None for c in caps):
            raise ValueError("give either all per-layer caps or gamma")
        if self.c_layers is not None and len(self.c_layers) != self.config.depth:
            raise ValueError("need one cap per Fourier layer")

    @property
    def uses_gamma(self) -> bool:
        return self.gamma is not None

    def cap_product(self) -> float:
        if self.uses_gamma:
            return float(self.gamma)
        return float(self.c_p * np.prod(self.c_layers) * self.c_q)


def is_member(model: FnoModel, cls: HypothesisClassSpec) -> bool:
    """Inclusive (<=) check of every cap; Q is measured in ||.||_{p,inf}."""
    p, q = cls.p, cls.q
    if cls.uses_gamma:
        return norms.capacity(model, p, q).gamma <= cls.gamma
    prm = model.params
    if norms.output_axis_norm(prm["P"], p, q) > cls.c_p:
        return False
    for i, cap in enumerate(cls.c_layers, start=1):
        if norms.layer_norm(model, i, p, q) > cap:
            return False
    return norms.output_axis_norm(prm["Q"], p, norms.INF) <= cls.c_q


# -- serialization ----------------------------------------------------------------

def save_model(model: FnoModel, path, extra: dict | None = None) -> None:
    """JSON header line followed by little-endian float64 payload."""
    manifest, offset, blobs = [], 0, []
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                         "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    header = {"magic": MODEL_MAGIC, "config": model.config.to_dict(),
              "tensors": manifest, "meta": extra or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for b in blobs:
            fh.write(b)


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline().decode("utf-8"))


def load_model(path) -> FnoModel:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("magic") != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    payload = raw[nl + 1:]
    params = {}
    for t in header["tensors"]:
        buf = payload[t["offset"]:t["offset"] + t["nbytes"]]
        params[t["name"]] = np.frombuffer(buf, dtype=t["dtype"]).astype(np.float64).reshape(t["shape"])
    return FnoModel(FnoConfig.from_dict(header["config"]), params)
