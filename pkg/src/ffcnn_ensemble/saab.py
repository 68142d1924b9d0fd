"""Unsupervised conv module: Saab layers, max pooling and channel-wise PCA.

Feature maps are plain arrays shaped (n_images, spectral, height, width).
Patches are flattened channel-major, i.e. (channel, row, col).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numerics import PCABasis, fit_pca, fix_signs, project_pca

MAX_COV_PATCHES = 200_000
_BATCH_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class ConvArch:
    filter_sizes: tuple[int, int] = (5, 5)
    kernel_counts: tuple[int, int] = (6, 16)
    in_channels: int = 1

    def __post_init__(self):
        if len(self.filter_sizes) != 2 or len(self.kernel_counts) != 2:
            raise ValueError("a conv arch has exactly two layers")
        if any(s not in (3, 5) for s in self.filter_sizes):
            raise ValueError(f"filter sizes must be 3 or 5, got {self.filter_sizes}")
        if any(m < 1 for m in self.kernel_counts):
            raise ValueError("kernel counts must be >= 1")


@dataclass(frozen=True)
class SaabLayer:
    kernels: np.ndarray  # (M, N); row 0 is the DC kernel
    bias: float
    size: int
    in_channels: int

    @property
    def n_kernels(self) -> int:
        return self.kernels.shape[0]


@dataclass(frozen=True)
class ConvModel:
    arch: ConvArch
    layers: tuple[SaabLayer, SaabLayer]

    def forward(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return the pooled outputs of conv1 and conv2."""
        f1 = pool_layer(apply_saab(images, self.layers[0]))
        f2 = pool_layer(apply_saab(f1, self.layers[1]))
        return f1, f2


@dataclass(frozen=True)
class CPCABank:
    bases: tuple[PCABasis, ...]
    positions: tuple[np.ndarray, ...] | None = None  # spatial indices used per channel

    @property
    def output_dim(self) -> int:
        return sum(b.n_components for b in self.bases)


def _check_maps(maps) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 4:
        raise ValueError(f"feature maps must be (n, S, H, W), got shape {maps.shape}")
    return maps


def extract_patches(maps, size: int, max_patches: int | None = None, seed: int = 0) -> np.ndarray:
    """All stride-1 size x size patches in raster order, or a seeded sample of them."""
    maps = _check_maps(maps)
    n, c, h, w = maps.shape
    if size > h or size > w:
        raise ValueError(f"patch size {size} exceeds map size {h}x{w}")
    view = sliding_window_view(maps, (size, size), axis=(2, 3))  # n, c, h', w', s, s
    oh, ow = h - size + 1, w - size + 1
    total = n * oh * ow
    if max_patches is None or max_patches >= total:
        return view.transpose(0, 2, 3, 1, 4, 5).reshape(total, c * size * size)
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=max_patches, replace=False))
    i, rem = np.divmod(flat, oh * ow)
    y, x = np.divmod(rem, ow)
    return view[i, :, y, x].reshape(max_patches, c * size * size)


def max_patch_norm(maps, size: int) -> float:
    """Largest L2 norm over every size x size patch of `maps`."""
    maps = _check_maps(maps)
    sq = np.einsum("nchw,nchw->nhw", maps, maps)
    win = sliding_window_view(sq, (size, size), axis=(1, 2)).sum(axis=(-2, -1))
    return float(np.sqrt(win.max()))


def _dc_complement(n: int) -> np.ndarray:
    """Orthonormal basis (n x n-1) of the complement of the constant vector."""
    q, _ = np.linalg.qr(np.hstack([np.ones((n, 1)), np.eye(n)[:, : n - 1]]))
    return q[:, 1:]


def fit_saab(
    patches, kernel_count: int, bias: float | None = None, size: int | None = None, in_channels: int = 1
) -> SaabLayer:
    """Fit one Saab layer: a constant DC kernel plus kernel_count-1 AC kernels.

    The AC kernels are the leading principal directions of the patches after
    removing each patch's DC projection. `bias` defaults to the largest
    patch norm seen here; pass a larger value computed over all training
    patches when `patches` is a subsample.
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("patches must be a 2-D matrix")
    p, n = x.shape
    if kernel_count > n:
        raise ValueError(f"kernel count {kernel_count} exceeds patch dimension {n}")
    if kernel_count < 1:
        raise ValueError("kernel count must be >= 1")
    if p < 2:
        raise ValueError("Saab fit needs at least 2 patches")
    dc = np.full(n, 1.0 / np.sqrt(n))
    kernels = [dc[None, :]]
    if kernel_count > 1:
        # PCA in coordinates of the DC complement keeps AC kernels exactly orthogonal to DC
        q = _dc_complement(n)
        coords = x @ q
        evals, evecs = _cov_eig(coords)
        ac = fix_signs(q @ evecs[:, : kernel_count - 1])
        kernels.append(ac.T)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    b = float(norms.max()) if bias is None else float(bias)
    if b < norms.max() - 1e-12:
        raise ValueError("bias must be at least the largest patch norm")
    if size is None:
        size = int(round(np.sqrt(n / in_channels)))
    if size * size * in_channels != n:
        raise ValueError(f"patch dimension {n} is not {in_channels} x size^2")
    k = np.ascontiguousarray(np.vstack(kernels))
    return SaabLayer(kernels=k, bias=b, size=size, in_channels=in_channels)


def _cov_eig(x: np.ndarray):
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    return evals[order], evecs[:, order]


def saab_response(maps, layer: SaabLayer) -> np.ndarray:
    """Unclipped Saab responses a_k^T x + bias, shaped (n, M, H', W')."""
    maps = _check_maps(maps)
    n, c, h, w = maps.shape
    s = layer.size
    if c * s * s != layer.kernels.shape[1]:
        raise ValueError(
            f"maps with {c} channels do not match layer input ({layer.kernels.shape[1]} = C*{s}*{s})"
        )
    oh, ow = h - s + 1, w - s + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"filter size {s} exceeds map size {h}x{w}")
    out = np.empty((n, layer.n_kernels, oh, ow))
    step = max(1, _BATCH_ELEMENTS // (oh * ow * c * s * s))
    for start in range(0, n, step):
        chunk = maps[start : start + step]
        b = chunk.shape[0]
        view = sliding_window_view(chunk, (s, s), axis=(2, 3))  # b, c, oh, ow, s, s
        patches = view.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * s * s)
        resp = (patches @ layer.kernels.T).reshape(b, oh, ow, -1).transpose(0, 3, 1, 2)
        out[start : start + step] = resp + layer.bias
    return out


def apply_saab(maps, layer: SaabLayer) -> np.ndarray:
    return np.maximum(saab_response(maps, layer), 0.0)


def max_pool(maps) -> np.ndarray:
    maps = _check_maps(maps)
    n, c, h, w = maps.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x2 pooling needs even dims, got {h}x{w}")
    return maps.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def crop_even(maps: np.ndarray) -> np.ndarray:
    h, w = maps.shape[-2:]
    return maps[..., : h - h % 2, : w - w % 2]


def pool_layer(maps: np.ndarray) -> np.ndarray:
    """Crop a trailing odd row/column, then 2x2 max pool."""
    return max_pool(crop_even(maps))


def fit_conv_pipeline(images, arch: ConvArch, seed: int = 0, max_patches: int = MAX_COV_PATCHES) -> ConvModel:
    """Fit both Saab layers from image statistics alone (no labels)."""
    images = _check_maps(images)
    if images.shape[1] != arch.in_channels:
        raise ValueError(f"arch expects {arch.in_channels} channels, images have {images.shape[1]}")
    layers = []
    maps = images
    for i, (s, m) in enumerate(zip(arch.filter_sizes, arch.kernel_counts)):
        patches = extract_patches(maps, s, max_patches=max_patches, seed=seed + i)
        layer = fit_saab(patches, m, bias=max_patch_norm(maps, s), size=s, in_channels=maps.shape[1])
        layers.append(layer)
        if i == 0:
            maps = pool_layer(apply_saab(maps, layer))
    return ConvModel(arch=arch, layers=tuple(layers))


def _resolve_positions(positions, channels: int, spatial: int):
    if positions is None:
        return [np.arange(spatial)] * channels
    if isinstance(positions, np.ndarray) and positions.ndim == 1:
        return [positions] * channels
    positions = [np.asarray(p, dtype=np.int64) for p in positions]
    if len(positions) != channels:
        raise ValueError("need one position list per channel")
    return positions


def fit_cpca(maps, n_components, positions=None) -> CPCABank:
    """Per-channel PCA over spatial positions.

    `n_components` is one L_k for all channels or a sequence of them;
    `positions` optionally restricts each channel to a subset of flattened
    spatial indices (shared array or one array per channel).
    """
    maps = _check_maps(maps)
    n, c, h, w = maps.shape
    flat = maps.reshape(n, c, h * w)
    pos = _resolve_positions(positions, c, h * w)
    dims = [int(n_components)] * c if np.isscalar(n_components) else [int(v) for v in n_components]
    bases = []
    for k in range(c):
        if dims[k] >= len(pos[k]):
            raise ValueError(f"channel {k}: L_k={dims[k]} must be below its spatial dimension {len(pos[k])}")
        bases.append(fit_pca(flat[:, k, pos[k]], n_components=dims[k]))
    return CPCABank(bases=tuple(bases), positions=None if positions is None else tuple(pos))


def apply_cpca(bank: CPCABank, maps) -> np.ndarray:
    maps = _check_maps(maps)
    n, c, h, w = maps.shape
    if c != len(bank.bases):
        raise ValueError(f"bank has {len(bank.bases)} channels, maps have {c}")
    flat = maps.reshape(n, c, h * w)
    pos = bank.positions or [slice(None)] * c
    return np.hstack([project_pca(b, flat[:, k, pos[k]]) for k, b in enumerate(bank.bases)])


def channel_correlation(maps, channel: int) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation across images between spatial positions of one channel.

    Returns (matrix, degenerate) where `degenerate` flags zero-variance
    positions whose rows/columns were set to 0.
    """
    maps = _check_maps(maps)
    n = maps.shape[0]
    if n < 2:
        raise ValueError("correlation needs at least 2 images")
    x = maps[:, channel].reshape(n, -1)
    centered = x - x.mean(axis=0)
    std = np.sqrt((centered**2).sum(axis=0))
    degenerate = std <= 1e-12 * max(1.0, float(np.abs(x).max()))
    safe = np.where(degenerate, 1.0, std)
    z = centered / safe
    corr = z.T @ z
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    return corr, degenerate


def write_correlation_csv(path, corr: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["row", "col", "value"])
        for i in range(corr.shape[0]):
            for j in range(corr.shape[1]):
                out.writerow([i, j, f"{corr[i, j]:.10g}"])
