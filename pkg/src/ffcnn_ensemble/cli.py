"""Command line entry point: ``ffcnn train | eval | report``.

Exit codes: 0 ok, 1 configuration error, 2 data error.
"""
from __future__ import annotations

import logging
import sys

import click

from .config import ConfigError, load_config
from .data_io import DataFormatError
from .modelfile import ModelFileError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path, seed):
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot read config: {exc}")
    return cfg.with_seed(seed) if seed is not None else cfg


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (FileNotFoundError, DataFormatError, ModelFileError) as exc:
        _fail(EXIT_DATA, str(exc))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Ensembles of feedforward-designed CNNs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment TOML file.")
@click.option("--out", default=None, help="Output directory (overrides output.dir).")
@click.option("--workers", default=1, show_default=True, help="Conv groups trained concurrently.")
@click.option("--seed", default=None, type=int, help="Override the experiment seed.")
def train(config_path, out, workers, seed):
    """Train the roster and its ensemble; write model.ffcn and train_report.csv."""
    from .experiment import run_train

    cfg = _load(config_path, seed)
    result = _guard(run_train, cfg, out, workers)
    click.echo(f"model: {result['model']}")
    click.echo(f"report: {result['report']}")


@main.command(name="eval")
@click.option("--model", "model_path", required=True, type=click.Path(), help="Model file from `train`.")
@click.option("--config", "config_path", default=None, type=click.Path(), help="Override the embedded config.")
@click.option("--out", required=True, help="Output directory.")
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=None, type=int, help="Override the experiment seed.")
def eval_cmd(model_path, config_path, out, split, workers, seed):
    """Evaluate a model: accuracies, easy/hard table and confidence records."""
    from .experiment import run_eval

    cfg = _load(config_path, seed) if config_path else None
    result = _guard(run_eval, model_path, out, cfg, split, workers)
    click.echo(f"ensemble accuracy: {result['ensemble_accuracy']:.4f}")
    click.echo(f"two-stage accuracy: {result['two_stage_accuracy']:.4f}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--kind", type=click.Choice(["diversity", "correlation", "size-sweep"]), required=True)
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--out", required=True)
@click.option("--split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--seed", default=None, type=int)
def report(model_path, kind, config_path, out, split, workers, seed):
    """Write diversity, correlation or size-sweep CSVs."""
    from .experiment import run_report

    cfg = _load(config_path, seed) if config_path else None
    for path in _guard(run_report, model_path, kind, out, cfg, split, workers):
        click.echo(str(path))


if __name__ == "__main__":
    main()
