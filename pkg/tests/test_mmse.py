import warnings

import numpy as np
import pytest
from scipy.linalg import cho_solve

from ffdvlc.channel import VlcScene
from ffdvlc.dataset import SceneRanges, generate_dataset
from ffdvlc.mmse import (
    MMSE_MAGIC,
    MmseModel,
    assemble_patches,
    decode_mmse,
    encode_mmse,
    fit_mmse,
    image_patches,
    load_mmse,
    mmse_denoise,
    regularized_factor,
    save_mmse,
)
from ffdvlc.utils import (
    ArtifactMissingError,
    DomainError,
    FormatError,
    IllConditionedWarning,
    NumericalError,
    ShapeError,
    StatisticsError,
    make_rng,
)


@pytest.fixture(scope="module")
def images():
    records = generate_dataset(VlcScene(), 6, seed=0, ranges=SceneRanges())
    return [r.clean_image for r in records]


@pytest.fixture(scope="module")
def gaussian_model():
    """A full-rank 4x4 patch prior with known statistics."""
    rng = make_rng(11)
    A = rng.standard_normal((16, 16)) * 0.05
    cov = A @ A.T + 1e-3 * np.eye(16)
    mean = rng.uniform(0.2, 0.8, size=16)
    return MmseModel(patch_size=4, mean=mean, covariance=cov)


def test_constant_images():
    imgs = [np.full((16, 16), 0.3) for _ in range(3)]
    model = fit_mmse(imgs, patch_size=8)
    np.testing.assert_allclose(model.mean, 0.3)
    assert np.abs(model.covariance).max() <= 1e-12


def test_hand_computed_covariance():
    a = np.array([[0.0, 1.0], [2.0, 3.0]])
    b = np.array([[1.0, 1.0], [0.0, 5.0]])
    with pytest.warns(IllConditionedWarning):
        model = fit_mmse([a, b], patch_size=2)
    X = np.array([a.ravel(), b.ravel()])
    mu = X.mean(axis=0)
    expected = sum(np.outer(x - mu, x - mu) for x in X) / (2 - 1)
    np.testing.assert_allclose(model.mean, mu)
    np.testing.assert_allclose(model.covariance, expected)


def test_covariance_symmetric(images):
    model = fit_mmse(images, patch_size=8)
    assert model.covariance.shape == (64, 64)
    assert np.abs(model.covariance - model.covariance.T).max() <= 1e-12
    assert np.linalg.eigvalsh(model.covariance).min() >= -1e-10


def test_max_patches(images):
    a = fit_mmse(images, patch_size=8, max_patches=100, seed=1)
    b = fit_mmse(images, patch_size=8, max_patches=100, seed=1)
    c = fit_mmse(images, patch_size=8)
    np.testing.assert_array_equal(a.covariance, b.covariance)
    assert not np.array_equal(a.covariance, c.covariance)


def test_fit_errors():
    with pytest.raises(StatisticsError):
        fit_mmse([np.zeros((4, 4))], patch_size=8)
    with pytest.raises(StatisticsError):
        fit_mmse([np.zeros((8, 8))], patch_size=8)


def test_no_warning_with_enough_patches(images):
    with warnings.catch_warnings():
        warnings.simplefilter("error", IllConditionedWarning)
        fit_mmse(images, patch_size=8)


def test_model_validation():
    with pytest.raises(ShapeError):
        MmseModel(2, np.zeros(3), np.eye(4))
    with pytest.raises(StatisticsError):
        MmseModel(2, np.zeros(4), np.triu(np.ones((4, 4))))
    with pytest.raises(DomainError):
        MmseModel(1, np.zeros(1), np.eye(1), jitter=0.0)


def test_patch_tiling():
    x = np.arange(48.0).reshape(6, 8)
    patches, padded_shape = image_patches(x, 4)
    assert padded_shape == (8, 8)
    assert patches.shape == (4, 16)
    np.testing.assert_array_equal(patches[0], x[:4, :4].ravel())
    np.testing.assert_array_equal(patches[1], x[:4, 4:].ravel())
    back = assemble_patches(patches, padded_shape, x.shape, 4)
    np.testing.assert_array_equal(back, x)


def test_zero_noise_returns_input(gaussian_model):
    y = make_rng(2).random((8, 12))
    out = mmse_denoise(gaussian_model, y, 0)
    assert np.abs(out - y).max() <= 1e-8


def test_huge_noise_returns_mean(gaussian_model):
    y = make_rng(3).random((8, 8))
    out = mmse_denoise(gaussian_model, y, 1e6)
    mean_image = assemble_patches(
        np.tile(gaussian_model.mean, (4, 1)), (8, 8), (8, 8), 4
    )
    assert np.abs(out - mean_image).max() <= 1e-6


def test_scalar_wiener_factor():
    # prior variance equal to the noise variance halves the deviation
    s = (25 / 255) ** 2
    model = MmseModel(1, np.array([0.5]), np.array([[s]]))
    y = np.array([[0.9, 0.1], [0.5, 0.7]])
    out = mmse_denoise(model, y, 25)
    np.testing.assert_allclose(out, 0.5 + (y - 0.5) / 2)


def test_shrinkage_is_monotone():
    model = MmseModel(1, np.array([0.0]), np.array([[0.01]]))
    y = np.ones((2, 2))
    outs = [mmse_denoise(model, y, s)[0, 0] for s in (0, 5, 10, 25, 50)]
    assert all(a > b for a, b in zip(outs, outs[1:]))


def test_solve_residual(gaussian_model):
    y = make_rng(4).random((8, 8))
    Y, _ = image_patches(y, 4)
    sigma = 30 / 255
    factor = regularized_factor(gaussian_model, sigma)
    rhs = (Y - gaussian_model.mean).T
    Z = cho_solve(factor, rhs)
    system = gaussian_model.covariance + sigma**2 * np.eye(16)
    residual = np.linalg.norm(system @ Z - rhs, axis=0)
    assert np.all(residual / np.linalg.norm(rhs, axis=0) < 1e-8)


def test_beats_identity_on_gaussian_data(gaussian_model):
    rng = make_rng(5)
    L = np.linalg.cholesky(gaussian_model.covariance)
    for sigma_o in (5, 25, 50):
        mse_mmse = mse_id = 0.0
        for _ in range(100):
            patch = gaussian_model.mean + L @ rng.standard_normal(16)
            clean = patch.reshape(4, 4)
            noisy = clean + rng.standard_normal((4, 4)) * sigma_o / 255
            est = mmse_denoise(gaussian_model, noisy, sigma_o)
            mse_mmse += np.mean((est - clean) ** 2)
            mse_id += np.mean((noisy - clean) ** 2)
        assert mse_mmse <= mse_id


def test_singular_prior_uses_jitter():
    imgs = [np.full((8, 8), 0.3), np.full((8, 8), 0.3)]
    model = fit_mmse(imgs, patch_size=4)
    out = mmse_denoise(model, np.full((8, 8), 0.3), 0)
    np.testing.assert_allclose(out, 0.3)


def test_factorization_failure():
    cov = -np.eye(4)
    model = MmseModel(2, np.zeros(4), cov)
    with pytest.raises(NumericalError):
        mmse_denoise(model, np.zeros((2, 2)), 0)


def test_negative_sigma(gaussian_model):
    with pytest.raises(DomainError):
        mmse_denoise(gaussian_model, np.zeros((4, 4)), -1)


def test_file_round_trip(tmp_path, gaussian_model):
    path = tmp_path / "prior.mmse"
    save_mmse(gaussian_model, path)
    data = path.read_bytes()
    assert data[:4] == MMSE_MAGIC
    assert len(data) == 4 + 4 + 4 + 8 * 16 + 8 * 256 + 8
    loaded = load_mmse(path)
    assert loaded.patch_size == 4
    np.testing.assert_array_equal(loaded.mean, gaussian_model.mean)
    np.testing.assert_array_equal(loaded.covariance, gaussian_model.covariance)
    assert loaded.jitter == gaussian_model.jitter


def test_file_errors(tmp_path, gaussian_model):
    data = encode_mmse(gaussian_model)
    with pytest.raises(FormatError, match="magic"):
        decode_mmse(b"VLCH" + data[4:])
    with pytest.raises(FormatError, match="truncated"):
        decode_mmse(data[:100])
    with pytest.raises(ArtifactMissingError, match="MMSE model not found"):
        load_mmse(tmp_path / "missing.mmse")
