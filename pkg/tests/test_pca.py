"""PCA data modification: spectral identities, noise statistics, determinism."""

import warnings

import numpy as np
import pytest

from aidkit.core import LabeledDataset
from aidkit.pca import (
    ModificationConfig,
    fit_pca,
    modify_dataset,
    modify_image,
)


def image_dataset(images, name="d"):
    images = np.asarray(images)
    return LabeledDataset(images, np.zeros(len(images), dtype=int), 1, name=name)


@pytest.fixture(scope="module")
def small_pca():
    rng = np.random.default_rng(50)
    imgs = rng.uniform(0.1, 0.9, (40, 4, 4, 2))  # D = 32
    ds = image_dataset(imgs)
    return ds, fit_pca(ds)


class TestFit:
    def test_two_point_closed_form(self):
        # two distinct images: single nonzero eigenvalue, eigenvector is the
        # normalized difference direction, lambda = ||a-b||^2 / 4
        rng = np.random.default_rng(51)
        a = rng.uniform(0.2, 0.8, (3, 3, 1))
        b = rng.uniform(0.2, 0.8, (3, 3, 1))
        pca = fit_pca(image_dataset(np.stack([a, b])))
        diff = (a - b).ravel()
        lam_expected = (diff @ diff) / 4.0
        assert pca.eigenvalues[0] == pytest.approx(lam_expected, rel=1e-9)
        assert np.all(pca.eigenvalues[1:] <= 1e-12 * pca.eigenvalues[0] + 1e-15)
        v = pca.eigenvectors[:, 0]
        cos = abs(v @ (diff / np.linalg.norm(diff)))
        assert cos == pytest.approx(1.0, abs=1e-9)

    def test_identical_images_degenerate(self):
        img = np.full((2, 2, 1), 0.4)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            with pytest.raises(UserWarning):
                fit_pca(image_dataset(np.stack([img, img, img])))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pca = fit_pca(image_dataset(np.stack([img, img, img])))
        np.testing.assert_allclose(pca.mean, img.ravel())
        np.testing.assert_allclose(pca.eigenvalues, 0.0, atol=1e-15)

    def test_orthonormality(self, small_pca):
        _, pca = small_pca
        V = pca.eigenvectors
        gram = V.T @ V
        assert np.abs(gram - np.eye(V.shape[1])).max() <= 1e-5

    def test_eigenvalues_sorted(self, small_pca):
        _, pca = small_pca
        assert np.all(np.diff(pca.eigenvalues) <= 1e-15)
        assert np.all(pca.eigenvalues >= 0.0)

    def test_energy_ordering(self, small_pca):
        # projected training variance along v_i equals lambda_i (ddof=0)
        ds, pca = small_pca
        X = ds.images.reshape(len(ds), -1)
        proj = (X - pca.mean) @ pca.eigenvectors
        var = proj.var(axis=0)
        np.testing.assert_allclose(var, pca.eigenvalues, rtol=1e-8, atol=1e-12)

    def test_needs_two_images(self):
        with pytest.raises(ValueError):
            fit_pca(image_dataset(np.zeros((1, 2, 2, 1))))


class TestModify:
    def test_full_rank_identity(self, small_pca):
        ds, pca = small_pca
        cfg = ModificationConfig(d=pca.dim, m=0, c=10.0, seed=0)
        x = ds.images[0]
        out = modify_image(x, pca, cfg)
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_projection_idempotent(self, small_pca):
        ds, pca = small_pca
        cfg = ModificationConfig(d=5, m=0, c=10.0, seed=0)
        once = modify_image(ds.images[1], pca, cfg, clip=False)
        twice = modify_image(once, pca, cfg, clip=False)
        np.testing.assert_allclose(twice, once, atol=1e-6)

    def test_zero_noise_dims_is_pure_projection(self, small_pca):
        ds, pca = small_pca
        cfg = ModificationConfig(d=4, m=0, c=1.0, seed=3)
        x = ds.images[2]
        out = modify_image(x, pca, cfg, clip=False)
        V = pca.eigenvectors[:, :4]
        expected = (V @ (V.T @ (x.ravel() - pca.mean)) + pca.mean).reshape(x.shape)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_noise_coefficient_variance(self, small_pca):
        # sample variance of the noised coefficients over many draws must be
        # c^2 * lambda_i within 5%
        ds, pca = small_pca
        d, m, c = 3, 4, 10.0
        n_draws = 10000
        cfg = ModificationConfig(d=d, m=m, c=c, seed=0)
        rng = np.random.default_rng(123)
        V = pca.eigenvectors[:, d:d + m]
        coeffs = np.empty((n_draws, m))
        x = ds.images[0]
        for i in range(n_draws):
            out = modify_image(x, pca, cfg, rng=rng, clip=False)
            coeffs[i] = (out.ravel() - pca.mean) @ V
        target = c * c * pca.eigenvalues[d:d + m]
        np.testing.assert_allclose(coeffs.var(axis=0), target, rtol=0.05)

    def test_d_plus_m_exceeding_dim_rejected(self, small_pca):
        ds, pca = small_pca
        with pytest.raises(ValueError):
            modify_image(ds.images[0], pca, ModificationConfig(d=pca.dim, m=1))

    def test_seeded_determinism(self, small_pca):
        ds, pca = small_pca
        cfg = ModificationConfig(d=5, m=3, c=10.0, seed=9)
        a = modify_dataset(ds, pca, cfg)
        b = modify_dataset(ds, pca, cfg)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, ds.labels)

    def test_dataset_matches_single_image_stream(self, small_pca):
        # first image of the dataset modification equals a modify_image call
        # with the same seed (shared generator stream)
        ds, pca = small_pca
        cfg = ModificationConfig(d=5, m=2, c=10.0, seed=11)
        full = modify_dataset(ds.subset([0]), pca, cfg)
        single = modify_image(ds.images[0], pca, cfg, clip=True)
        np.testing.assert_allclose(full.images[0], single, atol=1e-12)

    def test_clip_applied_by_default(self, small_pca):
        ds, pca = small_pca
        cfg = ModificationConfig(d=2, m=5, c=50.0, seed=2)
        out = modify_dataset(ds, pca, cfg)
        assert out.images.min() >= 0.0 and out.images.max() <= 1.0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModificationConfig(d=-1)
        with pytest.raises(ValueError):
            ModificationConfig(d=1, c=0.0)
