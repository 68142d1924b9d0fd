"""Batch experiment driver behind the `train`, `eval` and `report` commands."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .config import ConfigError, DatasetSpec, ExperimentConfig, parse_config
from .data_io import DataFormatError, LabeledImageSet, load_cifar10, load_mnist, subset
from .ensemble import (
    EnsembleModel,
    accuracy,
    diversity,
    fit_ensemble,
    fit_meta,
    fuse,
    predict_two_stage,
)
from .ffcnn import predict_roster, prepare_images
from .modelfile import load_model, save_model
from .numerics import project_pca
from .saab import channel_correlation, write_correlation_csv
from .svm import decision_scores

log = logging.getLogger(__name__)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}


def _find(root: Path, name: str, subdirs=("", "mnist", "MNIST/raw", "cifar-10-batches-bin")) -> Path:
    for sub in subdirs:
        for candidate in (root / sub / name, root / sub / (name + ".gz")):
            if candidate.is_file():
                return candidate
    raise FileNotFoundError(f"dataset file {name!r} not found under {root}")


def dataset_files(spec: DatasetSpec, split: str) -> list[Path]:
    """Locate the files of one split; raises FileNotFoundError if any is missing."""
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = spec.resolved_root()
    names = MNIST_FILES[split] if spec.name == "mnist" else CIFAR_FILES[split]
    return [_find(root, n) for n in names]


def load_split(spec: DatasetSpec, split: str, seed: int = 0) -> LabeledImageSet:
    """Load the train or test split of the configured dataset, subset if requested."""
    files = dataset_files(spec, split)
    if spec.name == "mnist":
        data = load_mnist(*files, name=f"mnist-{split}")
    else:
        data = load_cifar10(files, name=f"cifar10-{split}")
    per_class = spec.per_class if split == "train" else spec.test_per_class
    if per_class:
        try:
            data = subset(data, per_class, seed)
        except ValueError as exc:
            raise DataFormatError(f"{data.name}: {exc}") from exc
    return data


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)
    return path


def _acc(x: float) -> str:
    return f"{x:.4f}"


def run_train(config: ExperimentConfig, out_dir=None, workers: int = 1) -> dict:
    """Train roster + ensemble; write model.ffcn, train_report.csv and config.toml."""
    train = load_split(config.dataset, "train", config.seed)
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training %d bases on %d images", len(config.roster), len(train))
    opts = config.ensemble
    model, pred = fit_ensemble(
        config.roster, train, opts.energy, opts.svm_params(), opts.t1, opts.t2,
        hard_stage=opts.hard_stage, workers=workers, return_train=True, min_hard=opts.min_hard_samples,
    )
    rows = [
        [b.config.name, b.config.tag, _acc(accuracy(pred.base_labels[:, i], train.labels))]
        for i, b in enumerate(model.bases)
    ]
    rows.append(["ENSEMBLE", "ALL", _acc(accuracy(pred.labels, train.labels))])
    if opts.hard_stage:
        labels, _, _ = predict_two_stage(model, train, workers)
        rows.append(["TWO_STAGE", "ALL", _acc(accuracy(labels, train.labels))])
    model_path = out / "model.ffcn"
    save_model(model_path, model, config.to_dict())
    (out / "config.toml").write_text(config.dumps())
    report = _write_csv(out / "train_report.csv", ["name", "tag", "accuracy"], rows)
    return {"model": model_path, "report": report, "ensemble": model}


def _model_and_config(model_path, config: ExperimentConfig | None):
    model, cfg_dict = load_model(model_path)
    if config is None:
        if cfg_dict is None:
            raise ConfigError("model file carries no experiment config; pass --config")
        config = parse_config(cfg_dict)
    return model, config


def run_eval(model_path, out_dir, config: ExperimentConfig | None = None, split: str = "test",
             workers: int = 1) -> dict:
    """Evaluate a saved model: per-base/ensemble accuracy, easy/hard table, confidence records."""
    model, config = _model_and_config(model_path, config)
    data = load_split(config.dataset, split, config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels2, rec, pred = predict_two_stage(model, data, workers)
    truth = data.labels

    rows = [
        [b.config.name, b.config.tag, _acc(accuracy(pred.base_labels[:, i], truth))]
        for i, b in enumerate(model.bases)
    ]
    rows.append(["ENSEMBLE", "ALL", _acc(accuracy(pred.labels, truth))])
    rows.append(["TWO_STAGE", "ALL", _acc(accuracy(labels2, truth))])
    report = _write_csv(out / "eval_report.csv", ["name", "tag", "accuracy"], rows)

    hard = rec.is_hard
    easy_hard = _write_csv(
        out / "easy_hard.csv",
        ["split", "Easy", "Hard", "Hard+", "FF", "FF+", "n_easy", "n_hard"],
        [[
            split,
            _acc(accuracy(pred.labels[~hard], truth[~hard])),
            _acc(accuracy(pred.labels[hard], truth[hard])),
            _acc(accuracy(labels2[hard], truth[hard])),
            _acc(accuracy(pred.labels, truth)),
            _acc(accuracy(labels2, truth)),
            int((~hard).sum()),
            int(hard.sum()),
        ]],
    )
    conf = _write_csv(
        out / "confidence.csv",
        ["index", "cs1", "cs2", "is_hard"],
        [[int(i), f"{a:.6f}", f"{b:.6f}", int(h)] for i, a, b, h in zip(data.indices, rec.cs1, rec.cs2, hard)],
    )
    return {"report": report, "easy_hard": easy_hard, "confidence": conf,
            "ensemble_accuracy": accuracy(pred.labels, truth), "two_stage_accuracy": accuracy(labels2, truth)}


def diversity_rows(model: EnsembleModel, correct: np.ndarray) -> list[list]:
    tags = np.array([b.config.tag for b in model.bases])
    rows = []
    for tag in ("S1", "S2", "S3", "ALL"):
        cols = np.arange(len(tags)) if tag == "ALL" else np.flatnonzero(tags == tag)
        if len(cols) < 2:
            rows.append([tag, len(cols), "nan", "nan"])
            continue
        rep = diversity(correct[:, cols])
        rows.append([tag, len(cols), f"{rep.mean_q:.4f}", f"{rep.entropy:.4f}"])
    return rows


def run_report(model_path, kind: str, out_dir, config: ExperimentConfig | None = None,
               split: str = "test", workers: int = 1) -> list[Path]:
    model, config = _model_and_config(model_path, config)
    data = load_split(config.dataset, split, config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if kind == "diversity":
        vectors = predict_roster(model.bases, data, workers)
        correct = np.stack([np.argmax(v, axis=1) == data.labels for v in vectors], axis=1)
        rows = diversity_rows(model, correct)
        return [_write_csv(out / "diversity.csv", ["scheme", "n_bases", "q_statistic", "entropy"], rows)]

    if kind == "correlation":
        base = model.bases[0]
        _, f2 = base.conv.forward(prepare_images(base.config, data))
        paths, summary = [], []
        for k in range(f2.shape[1]):
            corr, degenerate = channel_correlation(f2, k)
            off = corr[~np.eye(len(corr), dtype=bool)]
            summary.append([k, f"{np.abs(off).mean():.6f}", int(degenerate.sum())])
            paths.append(out / f"correlation_ch{k}.csv")
            write_correlation_csv(paths[-1], corr)
        paths.append(_write_csv(out / "correlation_summary.csv",
                                ["channel", "mean_abs_offdiag", "degenerate_positions"], summary))
        return paths

    if kind == "size-sweep":
        train = load_split(config.dataset, "train", config.seed)
        train_vecs = predict_roster(model.bases, train, workers)
        test_vecs = predict_roster(model.bases, data, workers)
        opts = config.ensemble
        rows = []
        for k in range(1, len(model.bases) + 1):
            basis, meta = fit_meta(fuse(train_vecs[:k]), train.labels, opts.energy, opts.svm_params(),
                                   train.class_count)
            p = decision_scores(meta, project_pca(basis, fuse(test_vecs[:k])))
            rows.append([k, model.bases[k - 1].config.name, _acc(accuracy(np.argmax(p, axis=1), data.labels))])
        return [_write_csv(out / "size_sweep.csv", ["n_bases", "last_base", "accuracy"], rows)]

    raise ValueError(f"unknown report kind {kind!r}")

