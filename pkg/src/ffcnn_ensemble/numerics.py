"""Dense linear-algebra and clustering primitives.

Everything here is deterministic given its inputs (and seed, for k-means):
PCA by eigendecomposition of the sample covariance, ridge-damped least
squares on bias-augmented inputs, and Lloyd's k-means with k-means++ seeding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE_FACTOR = 1e-6


def _as_matrix(samples, name="samples") -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class PCABasis:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (d, m), columns ordered by descending eigenvalue
    eigenvalues: np.ndarray  # (m,)

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class LinearMap:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[1]:
            raise ValueError(
                f"input dim {x.shape[-1]} does not match map input dim {self.weights.shape[1]}"
            )
        return x @ self.weights.T + self.bias


@dataclass(frozen=True)
class Clustering:
    k: int
    centroids: np.ndarray  # (k, d)
    assignment: np.ndarray  # (n,) int
    inertia: float
    history: tuple = ()  # inertia after each Lloyd iteration


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    if components.size == 0:
        return components
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def energy_dimension(eigenvalues, energy: float) -> int:
    """Smallest count whose cumulative eigenvalue fraction reaches `energy`."""
    ev = np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None)
    total = ev.sum()
    if total <= 0.0:
        return 1
    frac = np.cumsum(ev) / total
    m = int(np.searchsorted(frac, energy - 1e-12, side="left")) + 1
    return min(m, len(ev))


def fit_pca(samples, n_components: int | None = None, energy: float | None = None) -> PCABasis:
    """Fit a PCA basis to the rows of `samples`.

    Give either a fixed `n_components` or an `energy` fraction in (0, 1];
    with neither, all d components are kept.
    """
    x = _as_matrix(samples)
    n, d = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    if d < 1:
        raise ValueError("PCA needs at least one feature")
    if n_components is not None and energy is not None:
        raise ValueError("give either n_components or energy, not both")
    if energy is not None and not (0.0 < energy <= 1.0):
        raise ValueError(f"energy must lie in (0, 1], got {energy}")
    if n_components is not None and not (1 <= n_components <= min(n, d)):
        raise ValueError(f"n_components={n_components} must be in [1, min(n, d)={min(n, d)}]")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    if energy is not None:
        m = energy_dimension(evals, energy)
    elif n_components is not None:
        m = n_components
    else:
        m = d
    comps = fix_signs(evecs[:, :m])
    return PCABasis(mean=mean, components=np.ascontiguousarray(comps), eigenvalues=evals[:m].copy())


def project_pca(basis: PCABasis, samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.input_dim:
        raise ValueError(f"expected samples with {basis.input_dim} columns, got shape {x.shape}")
    return (x - basis.mean) @ basis.components


def back_project_pca(basis: PCABasis, coords) -> np.ndarray:
    return np.asarray(coords, dtype=np.float64) @ basis.components.T + basis.mean


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * x @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.clip(d2, 0.0, None)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_distances(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centroids
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[0])
        else:
            nxt = int(rng.choice(n, p=closest / total))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_distances(x, x[nxt][None, :])[:, 0])
    return x[chosen].copy()


def _inertia(x, centroids, assignment) -> float:
    diff = x - centroids[assignment]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans(samples, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-4) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative inertia improvement drops below `tol`. An empty
    cluster takes the point of the largest cluster farthest from its centroid.
    """
    x = _as_matrix(samples)
    n = x.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k={k} must be in [1, n_samples={n}]")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)

    history = []
    prev = None
    for _ in range(max_iter):
        assignment = np.argmin(_sq_distances(x, centroids), axis=1)
        counts = np.bincount(assignment, minlength=k)
        for j in np.flatnonzero(counts == 0):
            big = int(np.argmax(counts))
            members = np.flatnonzero(assignment == big)
            far = members[np.argmax(((x[members] - centroids[big]) ** 2).sum(axis=1))]
            assignment[far] = j
            counts[big] -= 1
            counts[j] += 1
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignment, x)
        centroids = sums / counts[:, None]
        inertia = _inertia(x, centroids, assignment)
        history.append(inertia)
        if prev is not None and (prev <= 0.0 or (prev - inertia) / prev < tol):
            break
        prev = inertia

    return Clustering(
        k=k,
        centroids=centroids,
        assignment=assignment.astype(np.int64),
        inertia=inertia,
        history=tuple(history),
    )


def least_squares_fit(inputs, targets, ridge: float = RIDGE_FACTOR) -> LinearMap:
    """Solve min ||W x + b - t||^2 via damped normal equations.

    The Gram matrix of the bias-augmented inputs is damped by
    ``ridge * trace(G) / dim`` on the diagonal.
    """
    x = _as_matrix(inputs, "inputs")
    t = _as_matrix(targets, "targets")
    if x.shape[0] != t.shape[0]:
        raise ValueError(f"inputs have {x.shape[0]} rows but targets have {t.shape[0]}")
    if x.shape[0] < 1:
        raise ValueError("least squares needs at least one sample")
    a = np.hstack([x, np.ones((x.shape[0], 1))])
    gram = a.T @ a
    dim = gram.shape[0]
    lam = ridge * np.trace(gram) / dim
    if lam <= 0.0:
        lam = np.finfo(np.float64).tiny
    sol = np.linalg.solve(gram + lam * np.eye(dim), a.T @ t)
    return LinearMap(weights=np.ascontiguousarray(sol[:-1].T), bias=sol[-1].copy())
