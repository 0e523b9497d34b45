"""Command-line front end: data generation, training, capacities, bound checks, sweeps."""
from __future__ import annotations

import contextlib
import json
import sys

import click
import numpy as np

from . import bounds, experiments, norms
from .burgers import BlowUpError, BurgersSpec, GrfSpec, default_solve_N, load_pair, make_dataset, save_pair
from .experiments import SCALES, parse_exp
from .model import FnoConfig, init_model, load_model, save_model
from .train import TrainConfig, dataset_loss, train

LAYER_NAMES = {"dense": "dense", "cnn": "cnn", "spectral": "spectral_only"}


def _exponent(ctx, param, value):
    try:
        p = parse_exp(value)
    except ValueError:
        raise click.BadParameter(f"not a number: {value!r}")
    if not p >= 1:
        raise click.BadParameter("exponent must be >= 1 (or 'inf')")
    return p


@click.group()
def main():
    """Fourier neural operators, group-norm capacities and generalization bounds."""


@main.command("gen-data")
@click.option("--n", "n", type=int, required=True, help="Output grid size.")
@click.option("--train", "m_train", type=int, required=True)
@click.option("--test", "m_test", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--solve-n", type=int, default=None, help="Solver grid (default: multiple of N >= 1024).")
@click.option("--length-scale", type=float, default=0.05, show_default=True)
@click.option("--literal-diffusion", is_flag=True, help="Use the nu*u*u_xx diffusion term.")
def gen_data(n, m_train, m_test, seed, out, solve_n, length_scale, literal_diffusion):
    """Sample GRF initial data and solve Burgers to t=0.5."""
    solve_n = default_solve_N(n) if solve_n is None else solve_n
    try:
        tr, te = make_dataset(GrfSpec(n, length_scale),
                              BurgersSpec(solve_n, literal_diffusion=literal_diffusion),
                              m_train, m_test, seed)
    except (ValueError, BlowUpError) as exc:
        raise click.ClickException(str(exc)) from exc
    save_pair(tr, te, out)
    click.echo(json.dumps({"out": out, "N": n, "solve_N": solve_n, "train": tr.m, "test": te.m}))


@main.command("train")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--depth", type=int, default=2, show_default=True)
@click.option("--kmax", type=int, required=True)
@click.option("--kernel", type=int, default=1, show_default=True)
@click.option("--wd", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--layer", type=click.Choice(sorted(LAYER_NAMES)), default="cnn", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--width", type=int, default=32, show_default=True)
@click.option("--epochs", type=int, default=500, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--batch-size", type=int, default=None, help="Default: full batch.")
@click.option("--activation", type=click.Choice(["gelu", "relu"]), default="gelu", show_default=True)
def train_cmd(data, depth, kmax, kernel, wd, seed, layer, out, width, epochs, lr, batch_size, activation):
    """Train one model on a dataset file and save it."""
    tr, te = load_pair(data)
    kind = LAYER_NAMES[layer]
    cfg = FnoConfig((tr.N,), tr.a.shape[2], width, tr.u.shape[2], depth, (kmax,), kind,
                    (kernel,) if kind == "cnn" else None, activation)
    model = init_model(cfg, np.random.default_rng([seed, 0, 11]))
    tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr=lr, weight_decay=wd, seed=seed)
    model, history = train(model, tr, tcfg)
    train_loss = dataset_loss(model, tr)
    summary = {"train_loss": train_loss, "epochs": epochs}
    if te.m:
        summary["test_loss"] = dataset_loss(model, te)
        summary["gap"] = summary["test_loss"] - train_loss
    save_model(model, out, {"train": tcfg.to_dict(), **summary, "history": history})
    click.echo(json.dumps(summary))


@main.command("capacity")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--p", "p", type=str, callback=_exponent, required=True)
@click.option("--q", "q", type=str, callback=_exponent, required=True)
def capacity_cmd(model_path, p, q):
    """Per-layer norms and capacity as JSON."""
    click.echo(norms.capacity(load_model(model_path), p, q).to_json())


@main.command("check-bounds")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--p", "p", type=str, callback=_exponent, required=True)
@click.option("--q", "q", type=str, callback=_exponent, required=True)
@click.option("--delta", type=float, default=0.05, show_default=True)
def check_bounds(model_path, data, p, q, delta):
    """Evaluate the bounds for a trained model; exit 1 if any check fails."""
    if not 0 < delta < 1:
        raise click.BadParameter("delta must lie in (0, 1)", param_hint="--delta")
    tr, te = load_pair(data)
    rep = bounds.check_model(load_model(model_path), tr, p, q, delta, te if te.m else None)
    click.echo(rep.to_json())
    sys.exit(0 if rep.ok else 1)


@main.group()
def sweep():
    """Capacity-correlation studies."""


def _progress(rec):
    click.echo(f"run {rec['run']}: k_max={rec['k_max']} gap={rec['gap']:.6g} "
               f"({rec['_seconds']:.1f}s)", err=True)


@contextlib.contextmanager
def _aborts():
    try:
        yield
    except experiments.SweepAborted as exc:
        raise click.ClickException(str(exc)) from exc


def _write_study(res, out, table):
    with open(out, "w", newline="") as fh:
        fh.write(experiments.records_to_csv(res.records))
    text = res.table.to_csv()
    if table:
        with open(table, "w", newline="") as fh:
            fh.write(text)
    click.echo(text, nl=False)


@sweep.command("pq")
@click.option("--runs", type=int, default=20, show_default=True)
@click.option("--scale", type=click.Choice(sorted(SCALES)), default="desk", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="Per-run CSV.")
@click.option("--table", type=click.Path(dir_okay=False), default=None, help="Correlation table CSV.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reuse a dataset file instead of generating one.")
@click.option("--epochs", type=int, default=None, help="Override the scale's epoch count.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--models-dir", type=click.Path(file_okay=False), default=None)
def sweep_pq(runs, scale, seed, out, table, data, epochs, workers, models_dir):
    """Random hyperparameter sweep of CNN-layer models; r(capacity, gap) per (p, q)."""
    kw = {} if epochs is None else {"epochs": epochs}
    if runs < 10:
        raise click.BadParameter("a sweep needs at least 10 runs", param_hint="--runs")
    with _aborts():
        res = experiments.pq_sweep(runs, scale, seed, workers, load_pair(data) if data else None,
                                   models_dir, _progress, **kw)
    _write_study(res, out, table)


@sweep.command("kmax")
@click.option("--depth", type=click.Choice(["1", "2"]), required=True)
@click.option("--runs-per-k", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--scale", type=click.Choice(sorted(SCALES)), default="desk", show_default=True)
@click.option("--table", type=click.Path(dir_okay=False), default=None)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--models-dir", type=click.Path(file_okay=False), default=None)
def sweep_kmax(depth, runs_per_k, seed, out, scale, table, data, epochs, workers, models_dir):
    """Spectral-only models over k_max; r(k_max^(D/p*), gap / prod ||R_i||)."""
    kw = {} if epochs is None else {"epochs": epochs}
    with _aborts():
        res = experiments.kmax_study(int(depth), runs_per_k, seed, scale, workers=workers,
                                     data=load_pair(data) if data else None, model_dir=models_dir,
                                     progress=_progress, **kw)
    _write_study(res, out, table)


@main.command("correlate")
@click.option("--in", "path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--against", type=click.Choice(["capacity", "kmax"]), required=True)
def correlate(path, against):
    """Recompute a correlation table from a per-run CSV."""
    records = experiments.read_records(path)
    if len(records) < 2:
        raise click.ClickException("need at least two runs")
    if against == "capacity":
        table = experiments.capacity_table(records)
    else:
        depths = {r["depth"] for r in records}
        if len(depths) != 1:
            raise click.ClickException("k_max correlation needs runs of a single depth")
        table = experiments.kmax_table(records, depths.pop())
    click.echo(table.to_csv(), nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
