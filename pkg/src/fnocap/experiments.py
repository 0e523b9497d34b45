"""Capacity-versus-gap studies: the (p, q) sweep and the k_max dependency study.

Each run trains one model on a shared dataset, records train/test loss and
their gap, and evaluates capacities over a (p, q) grid.  Run ``i`` of a
sweep draws its hyperparameters and initial weights from RNG streams keyed
by ``(seed, i)``, so results do not depend on scheduling or worker count.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import bounds, norms
from .burgers import BurgersSpec, Dataset, GrfSpec, default_solve_N, make_dataset
from .model import FnoConfig, init_model, save_model
from .norms import INF, conjugate
from .train import TrainConfig, dataset_loss, train

WEIGHT_DECAYS = (0.0, 0.02, 0.04, 0.06, 0.08)
KMAX_CHOICES = (8, 12, 16, 20)
KERNEL_CHOICES = (1, 3, 5, 7)
PQ_GRID = (1.0, 1.2, 1.6, 2.0, 4.0, INF)
KMAX_VALUES = tuple(range(13, 38, 4))
KMAX_P_GRID = {1: (2.0, 2.5, 4.0, 8.0, 20.0, INF), 2: (2.0, 4.0, 8.0, 12.0, 20.0, INF)}
KMAX_Q_GRID = (1.0, 2.0, 4.0, 8.0, INF)
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class Scale:
    name: str
    N: int
    m_train: int
    m_test: int
    width: int
    epochs: int
    solve_N: int

    def dataset(self, seed: int) -> tuple[Dataset, Dataset]:
        return make_dataset(GrfSpec(self.N), BurgersSpec(self.solve_N), self.m_train, self.m_test, seed)


SCALES = {
    "paper": Scale("paper", 1024, 800, 200, 64, 500, 1024),
    "desk": Scale("desk", 128, 200, 50, 32, 500, default_solve_N(128)),
}


# -- statistics ----------------------------------------------------------------------

def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | str:
    """Sample Pearson correlation, or ``"degenerate"`` when either input is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D sequences of equal length")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    scale = max(1.0, float(np.max(np.abs(x))), float(np.max(np.abs(y))))
    if sx <= 1e-14 * scale * math.sqrt(x.size) or sy <= 1e-14 * scale * math.sqrt(y.size):
        return DEGENERATE
    r = float(dx @ dy) / (sx * sy)
    return min(1.0, max(-1.0, r))


def fmt_exp(p: float) -> str:
    return "inf" if p == INF else repr(float(p))


def parse_exp(s: str) -> float:
    return INF if s.strip().lower() in ("inf", "infinity") else float(s)


@dataclass
class CorrelationTable:
    """Pearson r on a (q rows) x (p columns) grid."""

    experiment: str
    ps: tuple[float, ...]
    qs: tuple[float, ...]
    r: dict[tuple[float, float], float | str]
    runs: int

    def value(self, p: float, q: float) -> float | str:
        return self.r[(p, q)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["q\\p"] + [fmt_exp(p) for p in self.ps])
        for q in self.qs:
            row = [fmt_exp(q)]
            for p in self.ps:
                v = self.r[(p, q)]
                row.append(v if isinstance(v, str) else repr(v))
            w.writerow(row)
        return buf.getvalue()

    def best(self) -> tuple[float, float, float]:
        vals = [(v, p, q) for (p, q), v in self.r.items() if not isinstance(v, str)]
        v, p, q = max(vals)
        return p, q, v


def capacity_table(records: Sequence[dict], ps=PQ_GRID, qs=PQ_GRID, experiment="pq") -> CorrelationTable:
    gaps = [r["gap"] for r in records]
    table = {}
    for p in ps:
        for q in qs:
            table[(p, q)] = pearson([r[f"gamma_p{fmt_exp(p)}_q{fmt_exp(q)}"] for r in records], gaps)
    return CorrelationTable(experiment, tuple(ps), tuple(qs), table, len(records))


def kmax_table(records: Sequence[dict], depth: int, ps=None, qs=KMAX_Q_GRID,
               experiment="kmax") -> CorrelationTable:
    """r between k_max^(D/p*) and gap / prod_i ||R_i||_{p,q}."""
    ps = KMAX_P_GRID[depth] if ps is None else ps
    table = {}
    for p in ps:
        x = [float(r["k_max"]) ** (depth * norms.inv(conjugate(p))) for r in records]
        for q in qs:
            y = [r["gap"] / r[f"rnorm_p{fmt_exp(p)}_q{fmt_exp(q)}"] for r in records]
            table[(p, q)] = pearson(x, y)
    return CorrelationTable(experiment, tuple(ps), tuple(qs), table, len(records))


# -- runs ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    run: int
    seed: int
    weight_decay: float
    k_max: int
    kernel: int
    depth: int
    width: int
    layer_kind: str
    epochs: int
    lr: float = 1e-3
    activation: str = "gelu"

    def config(self, N: int) -> FnoConfig:
        kernel = (self.kernel,) if self.layer_kind == "cnn" else None
        return FnoConfig((N,), 1, self.width, 1, self.depth, (self.k_max,), self.layer_kind,
                         kernel, self.activation)

    def train_seed(self) -> int:
        return int(np.random.SeedSequence([self.seed, self.run]).generate_state(1)[0])


def sample_pq_run(seed: int, run: int, scale: Scale, depth: int = 2) -> RunSpec:
    rng = np.random.default_rng([seed, run, 7])
    return RunSpec(run=run, seed=seed,
                   weight_decay=float(rng.choice(WEIGHT_DECAYS)),
                   k_max=int(rng.choice(KMAX_CHOICES)),
                   kernel=int(rng.choice(KERNEL_CHOICES)),
                   depth=depth, width=scale.width, layer_kind="cnn", epochs=scale.epochs)


def kmax_runs(seed: int, depth: int, runs_per_k: int, scale: Scale,
              k_values: Sequence[int] = KMAX_VALUES) -> list[RunSpec]:
    specs = []
    for j, k in enumerate(k_values):
        for r in range(runs_per_k):
            run = j * runs_per_k + r
            rng = np.random.default_rng([seed, run, 7])
            specs.append(RunSpec(run=run, seed=seed, weight_decay=float(rng.choice(WEIGHT_DECAYS)),
                                 k_max=int(k), kernel=1, depth=depth, width=scale.width,
                                 layer_kind="spectral_only", epochs=scale.epochs))
    return specs


def corollary2_flags(model, train_ds: Dataset, gap: float, pairs, delta: float = 0.05) -> tuple[bool, float]:
    """Gap <= posterior gap bound at every (p, q); returns (all ok, min bound/gap ratio)."""
    eps = bounds.loss_radius(model, train_ds)
    ok, ratio = True, INF
    a_norm_cache: dict[float, list[float]] = {}
    for p, q in pairs:
        if p not in a_norm_cache:
            a_norm_cache[p] = [bounds.input_norm(a, p) for a in train_ds.a]
        gamma = norms.capacity(model, p, q).gamma
        inp = bounds.model_inputs(model, p, q, a_norm_cache[p], gamma=gamma, eps=eps, delta=delta)
        b, _ = bounds.corollary2_bounds(inp)
        ok &= gap <= b
        if gap > 0:
            ratio = min(ratio, b / gap)
    return ok, ratio


def execute_run(spec: RunSpec, train_ds: Dataset, test_ds: Dataset, ps: Sequence[float],
                qs: Sequence[float], model_dir: str | None = None) -> dict:
    """Train one model and measure its gap, capacities and spectral norm products."""
    t0 = time.perf_counter()
    cfg = spec.config(train_ds.N)
    model = init_model(cfg, np.random.default_rng([spec.seed, spec.run, 11]))
    tcfg = TrainConfig(epochs=spec.epochs, lr=spec.lr, weight_decay=spec.weight_decay,
                       seed=spec.train_seed())
    model, _ = train(model, train_ds, tcfg)
    train_loss = dataset_loss(model, train_ds)
    test_loss = dataset_loss(model, test_ds)
    gap = test_loss - train_loss
    rec = {"run": spec.run, "seed": spec.seed, "layer_kind": spec.layer_kind, "depth": spec.depth,
           "width": spec.width, "k_max": spec.k_max, "kernel": spec.kernel,
           "weight_decay": spec.weight_decay, "epochs": spec.epochs, "lr": spec.lr,
           "train_loss": train_loss, "test_loss": test_loss, "gap": gap}
    pairs = [(p, q) for p in ps for q in qs]
    for p, q in pairs:
        tag = f"p{fmt_exp(p)}_q{fmt_exp(q)}"
        rec[f"gamma_{tag}"] = norms.capacity(model, p, q).gamma
        rec[f"rnorm_{tag}"] = norms.spectral_norm_product(model, p, q)
    ok, ratio = corollary2_flags(model, train_ds, gap, pairs)
    rec["cor2_ok"] = int(ok)
    rec["cor2_min_ratio"] = ratio
    if model_dir is not None:
        Path(model_dir).mkdir(parents=True, exist_ok=True)
        meta = {"train": tcfg.to_dict(), "train_loss": train_loss, "test_loss": test_loss,
                "gap": gap, "run": spec.run,
                "note": "optimizer, lr, epochs and batch size are harness choices"}
        save_model(model, Path(model_dir) / f"run{spec.run:04d}.fno", meta)
    rec["_seconds"] = time.perf_counter() - t0
    return rec


class RunFailed(RuntimeError):
    def __init__(self, run: int, message: str):
        super().__init__(f"run {run} failed: {message}")
        self.run = run
        self.message = message

    def __reduce__(self):
        return RunFailed, (self.run, self.message)


def _execute(args):
    try:
        return execute_run(*args)
    except Exception as exc:  # noqa: BLE001 - tag with the run id and re-raise
        raise RunFailed(args[0].run, str(exc)) from exc


def run_all(specs: Sequence[RunSpec], train_ds: Dataset, test_ds: Dataset, ps, qs,
            workers: int = 1, model_dir: str | None = None,
            progress: Callable[[dict], None] | None = None) -> list[dict]:
    """Execute runs, optionally in worker processes; results come back in run order."""
    jobs = [(s, train_ds, test_ds, tuple(ps), tuple(qs), model_dir) for s in specs]
    records = []
    if workers <= 1:
        for rec in map(_execute, jobs):
            _finish(rec, progress, records)
        return records
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for rec in pool.map(_execute, jobs):
            _finish(rec, progress, records)
    return records


def _finish(rec: dict, progress, records: list) -> None:
    if progress is not None:
        progress(rec)
    records.append(rec)


# -- CSV -------------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, float):
        return "inf" if v == INF else repr(v)
    return str(v)


def records_to_csv(records: Sequence[dict]) -> str:
    """Run table; timing columns (leading underscore) are left out for byte-stable output."""
    cols = [k for k in records[0] if not k.startswith("_")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow([_cell(r[c]) for c in cols])
    return buf.getvalue()


_INT_COLS = {"run", "seed", "depth", "width", "k_max", "kernel", "epochs", "cor2_ok"}


def read_records(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = {}
        for k, v in row.items():
            if k == "layer_kind":
                rec[k] = v
            elif k in _INT_COLS:
                rec[k] = int(v)
            else:
                rec[k] = parse_exp(v)
        out.append(rec)
    return out


# -- studies ---------------------------------------------------------------------------

@dataclass
class StudyResult:
    records: list[dict]
    table: CorrelationTable
    meta: dict = field(default_factory=dict)


def pq_sweep(runs: int, scale: str | Scale = "desk", seed: int = 0, workers: int = 1,
             data: tuple[Dataset, Dataset] | None = None, model_dir: str | None = None,
             progress=None, **overrides) -> StudyResult:
    """Train ``runs`` CNN-layer models with hyperparameters drawn from the sweep grids."""
    if runs < 10:
        raise ValueError("pq_sweep needs at least 10 runs")
    sc = SCALES[scale] if isinstance(scale, str) else scale
    sc = replace(sc, **overrides) if overrides else sc
    train_ds, test_ds = data if data is not None else sc.dataset(seed)
    specs = [sample_pq_run(seed, i, sc) for i in range(runs)]
    records = _guarded(specs, train_ds, test_ds, PQ_GRID, PQ_GRID, workers, model_dir, progress)
    return StudyResult(records, capacity_table(records), {"scale": sc.name, "seed": seed})


def kmax_study(depth: int, runs_per_k: int, seed: int = 0, scale: str | Scale = "desk",
               k_values: Sequence[int] = KMAX_VALUES, workers: int = 1,
               data: tuple[Dataset, Dataset] | None = None, model_dir: str | None = None,
               progress=None, **overrides) -> StudyResult:
    """Spectral-only models over a range of k_max, correlated against k_max^(D/p*)."""
    if depth not in KMAX_P_GRID:
        raise ValueError("depth must be 1 or 2")
    if runs_per_k < 1:
        raise ValueError("runs_per_k must be >= 1")
    sc = SCALES[scale] if isinstance(scale, str) else scale
    sc = replace(sc, **overrides) if overrides else sc
    train_ds, test_ds = data if data is not None else sc.dataset(seed)
    specs = kmax_runs(seed, depth, runs_per_k, sc, k_values)
    ps = KMAX_P_GRID[depth]
    records = _guarded(specs, train_ds, test_ds, ps, KMAX_Q_GRID, workers, model_dir, progress)
    return StudyResult(records, kmax_table(records, depth), {"scale": sc.name, "seed": seed,
                                                             "depth": depth})


class SweepAborted(RuntimeError):
    def __init__(self, run: int, message: str):
        super().__init__(f"sweep aborted at run {run}: {message}")
        self.run = run


def _guarded(specs, train_ds, test_ds, ps, qs, workers, model_dir, progress) -> list[dict]:
    try:
        return run_all(specs, train_ds, test_ds, ps, qs, workers, model_dir, progress)
    except RunFailed as exc:
        raise SweepAborted(exc.run, exc.message) from exc
