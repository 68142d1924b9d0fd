"""RBF soft-margin SVM trained by SMO, one-vs-one for multiclass.

The binary solver follows the maximal-violating-pair scheme with
second-order working set selection (Fan, Chen & Lin, JMLR 2005).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

TAU = 1e-12
_FULL_KERNEL_LIMIT = 6000


@dataclass(frozen=True)
class SVMParams:
    C: float = 1.0
    gamma: float | None = None  # None -> 1 / (d * var(X)) on standardized X
    tol: float = 1e-3
    max_iter: int = 200_000
    scaling: str = "global"  # "global": one shared scale; "feature": per-feature unit variance

    def __post_init__(self):
        if self.scaling not in ("global", "feature"):
            raise ValueError(f"scaling must be 'global' or 'feature', got {self.scaling!r}")
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class BinarySVM:
    support: np.ndarray  # (n_sv, d) standardized support vectors
    coef: np.ndarray  # alpha_i * y_i
    intercept: float  # f(x) = sum coef_i k(sv_i, x) + intercept
    kkt_gap: float
    n_iter: int


@dataclass(frozen=True)
class SVMModel:
    classes: np.ndarray  # labels present at fit time, ascending
    class_count: int
    pairs: tuple[tuple[int, int], ...]  # (a, b) class labels; f > 0 votes a
    machines: tuple[BinarySVM, ...]
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    params: SVMParams = field(default_factory=SVMParams)

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", a, a)[:, None]
        - 2.0 * a @ b.T
        + np.einsum("ij,ij->i", b, b)[None, :]
    )
    return np.exp(-gamma * np.clip(d2, 0.0, None))


class _KernelColumns:
    """Kernel rows on demand; whole matrix when it fits."""

    def __init__(self, x: np.ndarray, gamma: float, cache_size: int = 2000):
        self.x, self.gamma = x, gamma
        n = len(x)
        self.full = rbf_kernel(x, x, gamma) if n <= _FULL_KERNEL_LIMIT else None
        self.cache: dict[int, np.ndarray] = {}
        self.cache_size = cache_size

    def __getitem__(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        col = self.cache.get(i)
        if col is None:
            if len(self.cache) >= self.cache_size:
                self.cache.pop(next(iter(self.cache)))
            col = rbf_kernel(self.x[i : i + 1], self.x, self.gamma)[0]
            self.cache[i] = col
        return col


def solve_binary_dual(kernel, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 200_000):
    """Solve min 1/2 a^T Q a - e^T a, 0 <= a <= C, y^T a = 0 with Q_ij = y_i y_j K_ij.

    `kernel` is a square matrix or anything indexable by row. Returns
    (alpha, rho, gap, n_iter) with decision f(x) = sum a_i y_i K(x_i, x) - rho.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    diag = np.array([kernel[i][i] for i in range(n)])
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    gap = np.inf
    it = 0
    while it < max_iter:
        yg = -y * grad
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        g_max = yg[i]
        g_min = yg[low].min()
        gap = g_max - g_min
        if gap < tol:
            break
        ki = kernel[i]
        cand = low & (yg < g_max)
        b = g_max - yg[cand]
        a = diag[i] + diag[cand] - 2.0 * ki[cand]
        a = np.where(a > 0, a, TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])
        kj = kernel[j]

        old_i, old_j = alpha[i], alpha[j]
        qij = y[i] * y[j] * ki[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * qij, TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * qij, TAU)
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        di, dj = alpha[i] - old_i, alpha[j] - old_j
        grad += y * (y[i] * di * ki + y[j] * dj * kj)
        it += 1

    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub = np.where((pos & (alpha <= 0)) | (~pos & (alpha >= C)), yg, np.inf).min()
        lb = np.where((pos & (alpha >= C)) | (~pos & (alpha <= 0)), yg, -np.inf).max()
        rho = float((ub + lb) / 2.0)
    return alpha, rho, float(gap), it


def dual_objective(kernel: np.ndarray, y, alpha) -> float:
    """Dual objective to maximize: sum(alpha) - 1/2 sum a_i a_j y_i y_j K_ij."""
    ay = np.asarray(alpha) * np.asarray(y, dtype=np.float64)
    return float(np.sum(alpha) - 0.5 * ay @ kernel @ ay)


def fit_svm(X, y, params: SVMParams | None = None, class_count: int | None = None) -> SVMModel:
    params = params or SVMParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("SVM needs at least two classes")
    class_count = int(class_count if class_count is not None else classes.max() + 1)

    # A shared scale keeps the relative variances of the inputs; per-feature
    # scaling inflates near-constant directions to unit variance.
    mean = X.mean(axis=0)
    if params.scaling == "feature":
        scale = X.std(axis=0)
    else:
        scale = np.full(X.shape[1], np.sqrt(np.mean((X - mean) ** 2)))
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    if params.gamma is None:
        var = Z.var()
        gamma = 1.0 / (Z.shape[1] * var) if var > 0 else 1.0
    else:
        gamma = params.gamma

    pairs, machines = [], []
    for a, b in combinations(classes.tolist(), 2):
        idx = np.flatnonzero((y == a) | (y == b))
        yy = np.where(y[idx] == a, 1.0, -1.0)
        kern = _KernelColumns(Z[idx], gamma)
        alpha, rho, gap, it = solve_binary_dual(kern, yy, params.C, params.tol, params.max_iter)
        sv = alpha > 0
        machines.append(
            BinarySVM(
                support=Z[idx][sv].copy(),
                coef=(alpha * yy)[sv],
                intercept=-rho,
                kkt_gap=gap,
                n_iter=it,
            )
        )
        pairs.append((a, b))
    return SVMModel(
        classes=classes,
        class_count=class_count,
        pairs=tuple(pairs),
        machines=tuple(machines),
        gamma=float(gamma),
        mean=mean,
        scale=scale,
        params=params,
    )


def pairwise_decisions(model: SVMModel, X) -> np.ndarray:
    """Decision value of every pairwise machine, shape (n, n_pairs)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got shape {X.shape}")
    Z = (X - model.mean) / model.scale
    out = np.empty((len(Z), len(model.machines)))
    for p, m in enumerate(model.machines):
        out[:, p] = rbf_kernel(Z, m.support, model.gamma) @ m.coef + m.intercept
    return out


def _votes_and_margins(model: SVMModel, dec: np.ndarray):
    n = len(dec)
    votes = np.zeros((n, model.class_count))
    margin_sum = np.zeros((n, model.class_count))
    for p, (a, b) in enumerate(model.pairs):
        f = dec[:, p]
        votes[:, a] += f > 0
        votes[:, b] += f <= 0
        margin_sum[:, a] += f
        margin_sum[:, b] -= f
    return votes, margin_sum


def predict_svm(model: SVMModel, X) -> np.ndarray:
    """One-vs-one voting; ties go to the larger summed decision value, then the lower label."""
    votes, margins = _votes_and_margins(model, pairwise_decisions(model, X))
    present = np.zeros(model.class_count, dtype=bool)
    present[model.classes] = True
    votes[:, ~present] = -np.inf
    top = votes == votes.max(axis=1, keepdims=True)
    m = np.where(top, margins, -np.inf)
    best = m >= m.max(axis=1, keepdims=True) - 1e-9
    return np.argmax(best, axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def decision_scores(model: SVMModel, X) -> np.ndarray:
    """Per-class scores on the simplex, shape (n, class_count).

    Binary models give (sigmoid(f), 1 - sigmoid(f)). Otherwise each class
    scores its vote count plus 1e-3 * sigmoid(mean pairwise margin) as a
    tiebreak, normalized to sum to one; absent classes score 0.
    """
    dec = pairwise_decisions(model, X)
    n = len(dec)
    scores = np.zeros((n, model.class_count))
    if len(model.classes) == 2:
        a, b = model.pairs[0]
        s = _sigmoid(dec[:, 0])
        scores[:, a] = s
        scores[:, b] = 1.0 - s
        return scores
    votes, margins = _votes_and_margins(model, dec)
    k = len(model.classes)
    cls = model.classes
    raw = votes[:, cls] + 1e-3 * _sigmoid(margins[:, cls] / (k - 1))
    scores[:, cls] = raw / raw.sum(axis=1, keepdims=True)
    return scores
