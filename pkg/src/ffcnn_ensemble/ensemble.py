"""Decision fusion, confidence scores, easy/hard routing and diversity measures."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data_io import LabeledImageSet
from .ffcnn import BaseClassifier, predict_roster, reseed, train_roster
from .numerics import PCABasis, fit_pca, project_pca
from .svm import SVMModel, SVMParams, decision_scores, fit_svm

log = logging.getLogger(__name__)

DEFAULT_ENERGY = 0.995
THRESHOLDS = {"mnist": (0.98, 0.7), "cifar10": (0.97, 0.65)}
HARD_RESEED = 1000
# below a few hundred images the hard stage cannot estimate its conv and FC statistics
MIN_HARD_SAMPLES = 500


@dataclass(frozen=True)
class EnsembleModel:
    bases: tuple[BaseClassifier, ...]
    fusion: PCABasis
    meta: SVMModel
    t1: float = 0.98
    t2: float = 0.7
    energy: float = DEFAULT_ENERGY
    hard: "EnsembleModel | None" = None

    def __post_init__(self):
        if not (0 < self.t1 < 1 and 0 < self.t2 < 1):
            raise ValueError("thresholds must lie in (0, 1)")
        if self.fusion.input_dim != sum(b.fc.output_dim for b in self.bases):
            raise ValueError("fusion basis does not match the base decision-vector layout")


@dataclass(frozen=True)
class EnsemblePrediction:
    labels: np.ndarray
    p_final: np.ndarray  # (n, C)
    base_labels: np.ndarray  # (n, n_bases)
    base_vectors: list = field(repr=False, default_factory=list)


@dataclass(frozen=True)
class ConfidenceRecords:
    cs1: np.ndarray
    cs2: np.ndarray
    majority: np.ndarray
    is_hard: np.ndarray

    def __len__(self):
        return len(self.cs1)


@dataclass(frozen=True)
class DiversityReport:
    mean_q: float
    entropy: float
    pair_q: dict  # (i, j) -> Q
    degenerate_pairs: tuple = ()


def fuse(vector_sets) -> np.ndarray:
    vector_sets = [np.asarray(v, dtype=np.float64) for v in vector_sets]
    if not vector_sets:
        raise ValueError("nothing to fuse")
    n = {len(v) for v in vector_sets}
    if len(n) != 1:
        raise ValueError(f"decision vector sets differ in length: {sorted(n)}")
    return np.hstack(vector_sets)


def fit_meta(fused, labels, energy: float = DEFAULT_ENERGY, params: SVMParams | None = None,
             class_count: int = 10) -> tuple[PCABasis, SVMModel]:
    basis = fit_pca(fused, energy=energy)
    meta = fit_svm(project_pca(basis, fused), labels, params, class_count=class_count)
    return basis, meta


def fit_ensemble(configs, train: LabeledImageSet, energy: float = DEFAULT_ENERGY,
                 svm_params: SVMParams | None = None, t1: float = 0.98, t2: float = 0.7,
                 hard_stage: bool = False, workers: int = 1, return_train: bool = False,
                 min_hard: int = MIN_HARD_SAMPLES):
    """Train the roster and the fusion meta-classifier (plus the hard stage if asked).

    With `return_train`, also returns the first stage's EnsemblePrediction on `train`.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("roster is empty")
    bases, vectors = train_roster(configs, train, workers)
    basis, meta = fit_meta(fuse(vectors), train.labels, energy, svm_params, train.class_count)
    model = EnsembleModel(tuple(bases), basis, meta, t1, t2, energy)
    train_pred = predict_from_vectors(model, vectors)
    if hard_stage:
        model = attach_hard_stage(model, configs, train, svm_params, workers, train_pred, min_hard)
    return (model, train_pred) if return_train else model


def predict_from_vectors(model: EnsembleModel, vectors) -> EnsemblePrediction:
    """Ensemble output given the bases' decision vectors (in roster order)."""
    p = decision_scores(model.meta, project_pca(model.fusion, fuse(vectors)))
    base_labels = np.stack([np.argmax(v, axis=1) for v in vectors], axis=1)
    return EnsemblePrediction(np.argmax(p, axis=1), p, base_labels, list(vectors))


def predict_ensemble(model: EnsembleModel, data: LabeledImageSet, workers: int = 1) -> EnsemblePrediction:
    return predict_from_vectors(model, predict_roster(model.bases, data, workers))


def majority_label(base_labels: np.ndarray, class_count: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Mode of each row (ties -> lowest label) and its vote count."""
    base_labels = np.asarray(base_labels, dtype=np.int64)
    counts = np.zeros((len(base_labels), class_count), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(base_labels)), base_labels.shape[1]), base_labels.ravel()), 1)
    maj = np.argmax(counts, axis=1)
    return maj, counts[np.arange(len(maj)), maj]


def confidence_scores(p_final, base_labels, t1: float, t2: float) -> ConfidenceRecords:
    """CS1 = max of the ensemble score vector; CS2 = share of bases voting the majority label.

    A sample is hard when CS1 < t1 and CS2 < t2.
    """
    p_final = np.asarray(p_final, dtype=np.float64)
    base_labels = np.atleast_2d(np.asarray(base_labels, dtype=np.int64))
    n_all = base_labels.shape[1]
    if n_all < 1:
        raise ValueError("need at least one base classifier")
    cs1 = p_final.max(axis=1)
    maj, votes = majority_label(base_labels, max(p_final.shape[1], int(base_labels.max()) + 1))
    cs2 = votes / n_all
    return ConfidenceRecords(cs1=cs1, cs2=cs2, majority=maj, is_hard=(cs1 < t1) & (cs2 < t2))


def split_easy_hard(records: ConfidenceRecords, data: LabeledImageSet):
    if len(records) != len(data):
        raise ValueError("records and data are not aligned")
    hard_idx = np.flatnonzero(records.is_hard)
    easy_idx = np.flatnonzero(~records.is_hard)
    return data.take(easy_idx), data.take(hard_idx)


def fit_hard_ensemble(hard_train: LabeledImageSet, configs, energy: float = DEFAULT_ENERGY,
                      svm_params: SVMParams | None = None, t1: float = 0.98, t2: float = 0.7,
                      offset: int = HARD_RESEED, workers: int = 1) -> EnsembleModel:
    if len(hard_train) == 0:
        raise ValueError("hard training subset is empty")
    roster = [reseed(c, offset) for c in configs]
    return fit_ensemble(roster, hard_train, energy, svm_params, t1, t2, workers=workers)


def attach_hard_stage(model: EnsembleModel, configs, train: LabeledImageSet,
                      svm_params: SVMParams | None = None, workers: int = 1,
                      train_pred: EnsemblePrediction | None = None,
                      min_samples: int = MIN_HARD_SAMPLES) -> EnsembleModel:
    pred = train_pred if train_pred is not None else predict_ensemble(model, train, workers)
    rec = confidence_scores(pred.p_final, pred.base_labels, model.t1, model.t2)
    _, hard = split_easy_hard(rec, train)
    n_classes = len(np.unique(hard.labels))
    if len(hard) < max(min_samples, 1) or n_classes < 2:
        log.warning("only %d hard training samples over %d classes; no hard stage", len(hard), n_classes)
        return model
    log.info("training hard-sample ensemble on %d samples", len(hard))
    sub = fit_hard_ensemble(hard, [b.config for b in model.bases] if configs is None else configs,
                            model.energy, svm_params, model.t1, model.t2, workers=workers)
    return EnsembleModel(model.bases, model.fusion, model.meta, model.t1, model.t2, model.energy, sub)


def predict_two_stage(model: EnsembleModel, data: LabeledImageSet, workers: int = 1):
    """Route by the first stage's confidence: easy samples keep its label,
    hard ones take the hard ensemble's label. Returns (labels, records, first-stage prediction)."""
    pred = predict_ensemble(model, data, workers)
    rec = confidence_scores(pred.p_final, pred.base_labels, model.t1, model.t2)
    labels = pred.labels.copy()
    if model.hard is not None and rec.is_hard.any():
        idx = np.flatnonzero(rec.is_hard)
        labels[idx] = predict_ensemble(model.hard, data.take(idx), workers).labels
    return labels, rec, pred


# --- diversity ---------------------------------------------------------------


def q_statistic(correct_a, correct_b) -> tuple[float, bool]:
    """Yule's Q of two correctness vectors; (0.0, True) when the denominator vanishes."""
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("correctness vectors differ in length")
    n11 = np.sum(a & b)
    n00 = np.sum(~a & ~b)
    n10 = np.sum(a & ~b)
    n01 = np.sum(~a & b)
    den = float(n11 * n00 + n01 * n10)
    if den == 0.0:
        return 0.0, True
    return float(n11 * n00 - n01 * n10) / den, False


def entropy_measure(correct) -> float:
    """Ensemble disagreement in [0, 1] from an (n samples x L classifiers) correctness matrix."""
    correct = np.asarray(correct, dtype=bool)
    if correct.ndim != 2 or correct.shape[1] < 2:
        raise ValueError("need an (n, L) correctness matrix with L >= 2")
    big_l = correct.shape[1]
    l_j = correct.sum(axis=1)
    return float(np.mean(np.minimum(l_j, big_l - l_j) / (big_l - np.ceil(big_l / 2))))


def diversity(correct) -> DiversityReport:
    correct = np.asarray(correct, dtype=bool)
    pair_q, degenerate = {}, []
    for i, j in combinations(range(correct.shape[1]), 2):
        q, flag = q_statistic(correct[:, i], correct[:, j])
        pair_q[(i, j)] = q
        if flag:
            degenerate.append((i, j))
    return DiversityReport(
        mean_q=float(np.mean(list(pair_q.values()))),
        entropy=entropy_measure(correct),
        pair_q=pair_q,
        degenerate_pairs=tuple(degenerate),
    )


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    return float(np.mean(pred == truth)) if len(truth) else float("nan")
