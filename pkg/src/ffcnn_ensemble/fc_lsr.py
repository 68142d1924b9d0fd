"""Supervised FC module built from cascaded least-squares regressions.

Hidden stages regress onto one-hot pseudo-labels obtained by clustering each
class separately; the last stage regresses onto the true one-hot labels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import LinearMap, kmeans, least_squares_fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FCArch:
    dims: tuple[int, ...] = (120, 84, 10)
    class_count: int = 10

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims or dims[-1] != self.class_count:
            raise ValueError(f"last FC dim must equal class count {self.class_count}, got {dims}")
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise ValueError(f"FC dims must be strictly decreasing, got {dims}")


@dataclass(frozen=True)
class PseudoLabeling:
    n_clusters: int
    cluster_of_sample: np.ndarray  # (n,)
    class_of_cluster: np.ndarray  # (n_clusters,), -1 for unused slots

    def one_hot(self) -> np.ndarray:
        return one_hot(self.cluster_of_sample, self.n_clusters)


@dataclass(frozen=True)
class FCStage:
    map: LinearMap
    rectified: bool

    def __call__(self, x):
        y = self.map(x)
        return np.maximum(y, 0.0) if self.rectified else y


@dataclass(frozen=True)
class FCModel:
    stages: tuple[FCStage, ...]

    @property
    def output_dim(self) -> int:
        return self.stages[-1].map.weights.shape[0]


def one_hot(index, width: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((len(index), width))
    out[np.arange(len(index)), index] = 1.0
    return out


def cluster_quotas(n_clusters: int, class_count: int) -> list[int]:
    """floor(K_o / C) clusters per class; the first K_o mod C classes get one more."""
    base, extra = divmod(n_clusters, class_count)
    return [base + (1 if c < extra else 0) for c in range(class_count)]


def make_pseudo_labels(features, labels, n_clusters: int, class_count: int = 10, seed: int = 0) -> PseudoLabeling:
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if n_clusters < class_count:
        raise ValueError(f"need at least one cluster per class ({n_clusters} < {class_count})")
    quotas = cluster_quotas(n_clusters, class_count)
    cluster_of_sample = np.empty(len(labels), dtype=np.int64)
    class_of_cluster = np.full(n_clusters, -1, dtype=np.int64)
    offset = 0
    for c, quota in enumerate(quotas):
        members = np.flatnonzero(labels == c)
        if len(members) < quota:
            log.info("class %d has %d samples for a quota of %d clusters; shrinking", c, len(members), quota)
            quota = len(members)
        if quota == 0:
            continue
        if quota == 1:
            assign = np.zeros(len(members), dtype=np.int64)
        else:
            assign = kmeans(x[members], quota, seed=seed + c).assignment
        cluster_of_sample[members] = offset + assign
        class_of_cluster[offset : offset + quota] = c
        offset += quota
    return PseudoLabeling(n_clusters=n_clusters, cluster_of_sample=cluster_of_sample, class_of_cluster=class_of_cluster)


def fit_fc_stage(features, targets, rectified: bool = True) -> FCStage:
    return FCStage(map=least_squares_fit(features, targets), rectified=rectified)


def fit_fc_module(features, labels, arch: FCArch, seed: int = 0) -> FCModel:
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    stages = []
    for dim in arch.dims[:-1]:
        pseudo = make_pseudo_labels(x, labels, dim, arch.class_count, seed=seed)
        stage = fit_fc_stage(x, pseudo.one_hot())
        stages.append(stage)
        x = stage(x)
    stages.append(fit_fc_stage(x, one_hot(labels, arch.class_count), rectified=False))
    return FCModel(stages=tuple(stages))


def apply_fc(model: FCModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    for stage in model.stages:
        x = stage(x)
    return x
