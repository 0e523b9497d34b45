"""Burgers-equation operator-learning data on the periodic interval [0, 2 pi).

Inputs are Gaussian random fields with squared-exponential covariance
``exp(-r^2 / l^2)`` (``r`` the wrapped distance on the circle), sampled
exactly by circulant embedding.  Targets are the viscous Burgers solution at
``t_final``, computed pseudo-spectrally: nonlinear term in physical space
with 2/3-rule dealiasing, diffusion through an integrating factor, RK4 in
time.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

DATASET_MAGIC = "FNOCAP-DS v1"
TWO_PI = 2.0 * math.pi


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class GrfSpec:
    N: int
    length_scale: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("GRF needs N >= 2")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")


def grid_points(N: int) -> np.ndarray:
    return TWO_PI * np.arange(N) / N


def wrapped_distance(x, y) -> np.ndarray:
    r = np.abs(np.asarray(x) - np.asarray(y)) % TWO_PI
    return np.minimum(r, TWO_PI - r)


def covariance_row(spec: GrfSpec) -> np.ndarray:
    x = grid_points(spec.N)
    r = wrapped_distance(x, 0.0)
    return np.exp(-(r / spec.length_scale) ** 2)


def covariance_matrix(spec: GrfSpec) -> np.ndarray:
    x = grid_points(spec.N)
    r = wrapped_distance(x[:, None], x[None, :])
    return np.exp(-(r / spec.length_scale) ** 2)


def circulant_eigenvalues(spec: GrfSpec, tol: float = 1e-8) -> np.ndarray:
    """Eigenvalues of the periodic covariance, negatives within tolerance clipped."""
    lam = np.fft.fft(covariance_row(spec)).real
    top = lam.max()
    if lam.min() < -tol * top:
        raise ValueError(f"covariance embedding not PSD: min eigenvalue {lam.min():.3e}")
    return np.clip(lam, 0.0, None)


def grf_sample(spec: GrfSpec, count: int, start: int = 0, stream: int = 0) -> np.ndarray:
    """``count`` zero-mean draws of shape (N,), one RNG stream per draw.

    Draw ``i`` uses the stream keyed by ``(spec.seed, stream, start + i)``, so
    any subset of draws can be regenerated independently.
    """
    sqrt_lam = np.sqrt(circulant_eigenvalues(spec))
    out = np.empty((count, spec.N))
    for i in range(count):
        rng = np.random.default_rng([spec.seed, stream, start + i])
        w = rng.standard_normal(spec.N) + 1j * rng.standard_normal(spec.N)
        out[i] = np.fft.ifft(sqrt_lam * w, norm="ortho").real
    return out


# -- Burgers -----------------------------------------------------------------------

@dataclass(frozen=True)
class BurgersSpec:
    N: int
    nu: float = 0.01
    t_final: float = 0.5
    dt: float | None = None          # default 1e-4 * 1024 / N
    literal_diffusion: bool = False  # u_t = -u u_x + nu * u * u_xx

    @property
    def step(self) -> float:
        return 1e-4 * 1024 / self.N if self.dt is None else self.dt

    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.t_final / self.step - 1e-9)))

    def cfl_ok(self, u_max: float) -> bool:
        """Advective RK4 stability check: dt * max|u| * k_max stays below 2.8."""
        dt = self.t_final / self.n_steps()
        return dt * u_max * (self.N // 2) < 2.8


def _wavenumbers(N: int) -> np.ndarray:
    return np.arange(N // 2 + 1, dtype=np.float64)


def _derivative_factor(N: int, order: int) -> np.ndarray:
    ik = 1j * _wavenumbers(N)
    if N % 2 == 0:
        ik[-1] = 0.0  # Nyquist mode has no odd derivative
    return ik ** order


def _dealias_mask(N: int) -> np.ndarray:
    return (_wavenumbers(N) <= N / 3.0).astype(np.float64)


def _steps(u0: np.ndarray, spec: BurgersSpec):
    """Yield (step, t, u_hat) after every RK4 step; u0 has shape (..., N)."""
    N = u0.shape[-1]
    if N != spec.N:
        raise ValueError(f"u0 has {N} points, spec expects {spec.N}")
    n = spec.n_steps()
    dt = spec.t_final / n
    d1 = _derivative_factor(N, 1)
    d2 = -_wavenumbers(N) ** 2
    mask = _dealias_mask(N)
    nu = spec.nu

    def nonlinear(uh):
        u = np.fft.irfft(uh, n=N)
        ux = np.fft.irfft(d1 * uh, n=N)
        rhs = -u * ux
        if spec.literal_diffusion:
            rhs = rhs + nu * u * np.fft.irfft(d2 * uh, n=N)
        return mask * np.fft.rfft(rhs)

    uh = np.fft.rfft(u0)
    if spec.literal_diffusion:
        for s in range(1, n + 1):
            a = nonlinear(uh)
            b = nonlinear(uh + 0.5 * dt * a)
            c = nonlinear(uh + 0.5 * dt * b)
            e = nonlinear(uh + dt * c)
            uh = uh + dt / 6.0 * (a + 2 * b + 2 * c + e)
            _check(uh, s)
            yield s, s * dt, uh
        return
    E = np.exp(nu * d2 * dt)
    E2 = np.exp(nu * d2 * dt / 2)
    for s in range(1, n + 1):
        a = nonlinear(uh)
        b = nonlinear(E2 * (uh + 0.5 * dt * a))
        c = nonlinear(E2 * uh + 0.5 * dt * b)
        e = nonlinear(E * uh + dt * E2 * c)
        uh = E * uh + dt / 6.0 * (E * a + 2 * E2 * (b + c) + e)
        _check(uh, s)
        yield s, s * dt, uh


def _check(uh: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(uh)) or np.max(np.abs(uh)) > 1e12:
        raise BlowUpError(f"Burgers integration blew up at step {step}")


def burgers_solve(u0, spec: BurgersSpec) -> np.ndarray:
    """Solution at ``spec.t_final`` for one (N,) or a batch (m, N) of initial data."""
    u0 = np.asarray(u0, dtype=np.float64)
    uh = np.fft.rfft(u0)
    for _, _, uh in _steps(u0, spec):
        pass
    return np.fft.irfft(uh, n=spec.N)


def burgers_energy_history(u0, spec: BurgersSpec, every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Times and energies 0.5 * integral(u^2) sampled every ``every`` steps."""
    u0 = np.asarray(u0, dtype=np.float64)
    dx = TWO_PI / spec.N
    times, energies = [0.0], [0.5 * np.sum(u0 ** 2, axis=-1) * dx]
    for s, t, uh in _steps(u0, spec):
        if s % every == 0:
            u = np.fft.irfft(uh, n=spec.N)
            times.append(t)
            energies.append(0.5 * np.sum(u ** 2, axis=-1) * dx)
    return np.array(times), np.array(energies)


# -- datasets ----------------------------------------------------------------------

@dataclass
class Dataset:
    a: np.ndarray  # (m, N, d_a)
    u: np.ndarray  # (m, N, d_u)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a.ndim != 3 or self.u.ndim != 3:
            raise ValueError("dataset arrays must be (m, N, channels)")
        if self.a.shape[:2] != self.u.shape[:2]:
            raise ValueError(f"input/target shapes disagree: {self.a.shape} vs {self.u.shape}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.u))):
            raise ValueError("dataset has non-finite entries")

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def N(self) -> int:
        return self.a.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.a[idx], self.u[idx], dict(self.provenance))


def default_solve_N(N: int) -> int:
    """Smallest multiple of N that is >= 1024: the coarse grids under-resolve the shocks."""
    return N * max(1, -(-1024 // N))


def make_pairs(grf: GrfSpec, burgers: BurgersSpec, count: int, stream: int,
               out_N: int | None = None) -> Dataset:
    """Draw inputs on the solver grid, solve, then subsample both to ``out_N`` points."""
    if grf.N != burgers.N:
        raise ValueError("GRF and solver grids must coincide")
    out_N = grf.N if out_N is None else out_N
    if grf.N % out_N:
        raise ValueError(f"solver grid {grf.N} is not a multiple of output grid {out_N}")
    a = grf_sample(grf, count, stream=stream)
    u = burgers_solve(a, burgers)
    stride = grf.N // out_N
    prov = {"grf": asdict(grf), "burgers": asdict(burgers), "stream": stream, "N": out_N}
    return Dataset(a[:, ::stride, None], u[:, ::stride, None], prov)


def make_dataset(grf: GrfSpec, burgers: BurgersSpec, m_train: int, m_test: int,
                 seed: int) -> tuple[Dataset, Dataset]:
    """Independent train (stream 0) and test (stream 1) draws, deterministic in ``seed``.

    ``grf.N`` is the output grid; ``burgers.N`` the (possibly finer) solver grid.
    """
    if m_train < 1 or m_test < 1:
        raise ValueError("dataset sizes must be >= 1")
    fine = GrfSpec(burgers.N, grf.length_scale, seed)
    return (make_pairs(fine, burgers, m_train, 0, grf.N),
            make_pairs(fine, burgers, m_test, 1, grf.N))


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "magic": DATASET_MAGIC,
        "m": ds.m,
        "N": ds.N,
        "d": 1,
        "domain": [0.0, TWO_PI],
        "d_a": ds.a.shape[2],
        "d_u": ds.u.shape[2],
        "provenance": ds.provenance,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(ds.a, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.u, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("magic") != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    m, N, da, du = header["m"], header["N"], header["d_a"], header["d_u"]
    payload = np.frombuffer(raw[nl + 1:], dtype="<f8")
    na = m * N * da
    if payload.size != na + m * N * du:
        raise ValueError(f"{path}: payload size mismatch")
    a = payload[:na].reshape(m, N, da).astype(np.float64)
    u = payload[na:].reshape(m, N, du).astype(np.float64)
    return Dataset(a, u, header.get("provenance", {}))


def save_pair(train: Dataset, test: Dataset, path) -> None:
    """Train and test splits in one file: train records first, ``n_train`` in the header."""
    both = Dataset(np.concatenate([train.a, test.a]), np.concatenate([train.u, test.u]),
                   {**train.provenance, "n_train": train.m, "n_test": test.m,
                    "test_stream": test.provenance.get("stream")})
    save_dataset(both, path)


def load_pair(path) -> tuple[Dataset, Dataset]:
    ds = load_dataset(path)
    n = int(ds.provenance.get("n_train", ds.m))
    return ds.subset(slice(0, n)), ds.subset(slice(n, ds.m))
