import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ffcnn_ensemble.saab import (
    ConvArch,
    apply_cpca,
    apply_saab,
    channel_correlation,
    extract_patches,
    fit_conv_pipeline,
    fit_cpca,
    fit_saab,
    max_patch_norm,
    max_pool,
    pool_layer,
    saab_response,
    write_correlation_csv,
)


def test_extract_patches_counts():
    img = np.random.default_rng(0).random((2, 1, 32, 32))
    assert extract_patches(img, 5).shape == (2 * 784, 25)
    pooled = np.random.default_rng(1).random((1, 6, 14, 14))
    assert extract_patches(pooled, 5).shape == (100, 150)
    const = np.full((1, 1, 8, 8), 0.5)
    p = extract_patches(const, 3)
    assert np.all(p == p[0])
    with pytest.raises(ValueError):
        extract_patches(np.zeros((1, 1, 4, 4)), 5)


def test_extract_patches_subsample_is_seeded():
    img = np.random.default_rng(0).random((4, 1, 12, 12))
    a = extract_patches(img, 3, max_patches=50, seed=3)
    b = extract_patches(img, 3, max_patches=50, seed=3)
    assert a.shape == (50, 9)
    np.testing.assert_array_equal(a, b)


def test_dc_kernel_and_orthonormality():
    patches = np.random.default_rng(2).random((500, 25))
    layer = fit_saab(patches, 6)
    np.testing.assert_allclose(layer.kernels[0], 0.2)
    np.testing.assert_allclose(layer.kernels @ layer.kernels.T, np.eye(6), atol=1e-8)
    assert layer.bias >= np.linalg.norm(patches, axis=1).max()
    assert layer.n_kernels == 6  # 1 DC + 5 AC


def test_ac_kernel_follows_dominant_direction():
    rng = np.random.default_rng(3)
    direction = rng.normal(size=9)
    direction -= direction.mean()
    direction /= np.linalg.norm(direction)
    patches = rng.normal(size=(400, 1)) * direction + 0.3
    layer = fit_saab(patches, 2)
    assert abs(layer.kernels[1] @ direction) > 0.999


def test_fit_saab_errors():
    with pytest.raises(ValueError):
        fit_saab(np.ones((10, 9)), 10)
    with pytest.raises(ValueError):
        fit_saab(np.ones((10, 9)), 2, bias=0.1)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (40, 9), elements=st.floats(0, 1)))
def test_full_saab_preserves_energy_and_stays_nonnegative(patches):
    layer = fit_saab(patches, 9)
    coeff = patches @ layer.kernels.T
    np.testing.assert_allclose(np.linalg.norm(coeff, axis=1), np.linalg.norm(patches, axis=1), atol=1e-9)
    assert np.all(coeff + layer.bias >= -1e-12)


def test_zero_image_response_is_bias():
    rng = np.random.default_rng(4)
    images = rng.random((3, 1, 32, 32))
    layer = fit_saab(extract_patches(images, 5), 6, bias=max_patch_norm(images, 5), size=5)
    out = apply_saab(np.zeros((1, 1, 32, 32)), layer)
    np.testing.assert_allclose(out, layer.bias)


def test_max_pool():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    assert max_pool(m)[0, 0, 0, 0] == 4.0
    assert max_pool(np.zeros((1, 6, 28, 28))).shape == (1, 6, 14, 14)
    assert max_pool(np.zeros((1, 16, 10, 10))).shape == (1, 16, 5, 5)
    with pytest.raises(ValueError):
        max_pool(np.zeros((1, 1, 13, 13)))
    assert pool_layer(np.zeros((1, 1, 13, 13))).shape == (1, 1, 6, 6)


def test_mnist_pipeline_shapes_and_no_train_clips(small_train):
    arch = ConvArch((5, 5), (6, 16), 1)
    model = fit_conv_pipeline(small_train.images, arch, seed=0)
    r1 = saab_response(small_train.images, model.layers[0])
    assert r1.shape[1:] == (6, 28, 28)
    assert r1.min() >= 0.0
    f1 = pool_layer(np.maximum(r1, 0))
    assert f1.shape[1:] == (6, 14, 14)
    r2 = saab_response(f1, model.layers[1])
    assert r2.shape[1:] == (16, 10, 10)
    assert r2.min() >= 0.0
    _, f2 = model.forward(small_train.images)
    assert f2.shape[1:] == (16, 5, 5)
    assert apply_cpca(fit_cpca(f2, 20), f2).shape[1] == 320
    assert apply_cpca(fit_cpca(f1, 30), f1).shape[1] == 180


def test_rgb_and_3x3_pipeline_shapes(rgb_set):
    model = fit_conv_pipeline(rgb_set.images, ConvArch((5, 5), (32, 64), 3))
    f1, f2 = model.forward(rgb_set.images)
    assert f1.shape[1:] == (32, 14, 14) and f2.shape[1:] == (64, 5, 5)
    assert apply_cpca(fit_cpca(f2, 12), f2).shape[1] == 768
    small = fit_conv_pipeline(rgb_set.images, ConvArch((3, 3), (24, 48), 3))
    f1, f2 = small.forward(rgb_set.images)
    assert f1.shape[2:] == (15, 15) and f2.shape[2:] == (6, 6)


def test_conv_arch_validation():
    with pytest.raises(ValueError):
        ConvArch((7, 5), (6, 16))
    with pytest.raises(ValueError):
        ConvArch((5, 5, 5), (6, 16, 32))


def test_cpca_dimension_errors_and_positions():
    maps = np.random.default_rng(5).random((30, 2, 5, 5))
    with pytest.raises(ValueError):
        fit_cpca(maps, 25)
    bank = fit_cpca(maps, 4, positions=[np.arange(10), np.arange(5, 25)])
    assert apply_cpca(bank, maps).shape == (30, 8)
    assert bank.output_dim == 8


def test_channel_correlation_degenerate():
    maps = np.tile(np.random.default_rng(6).random((1, 1, 4, 4)), (5, 1, 1, 1))
    corr, degenerate = channel_correlation(maps, 0)
    assert degenerate.all() and np.all(corr == 0)


def test_channel_correlation_matches_numpy(tmp_path):
    maps = np.random.default_rng(7).random((50, 2, 3, 3))
    corr, degenerate = channel_correlation(maps, 1)
    assert not degenerate.any()
    np.testing.assert_allclose(corr, np.corrcoef(maps[:, 1].reshape(50, -1), rowvar=False), atol=1e-12)
    write_correlation_csv(tmp_path / "c.csv", corr)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["row", "col", "value"] and len(rows) == 82


def test_dc_channel_more_correlated_than_high_frequency(digits_split):
    train, _ = digits_split
    model = fit_conv_pipeline(train.images, ConvArch((5, 5), (6, 16), 1))
    _, f2 = model.forward(train.images)

    def mean_offdiag(k):
        c, _ = channel_correlation(f2, k)
        return np.abs(c[~np.eye(len(c), dtype=bool)]).mean()

    assert mean_offdiag(0) > mean_offdiag(15)
