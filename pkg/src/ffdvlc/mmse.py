"""Patchwise linear MMSE (empirical Wiener) baseline.

The prior is the sample mean and covariance of non-overlapping
``p x p`` patches of clean training images. A noisy image is tiled the same
way and every patch is replaced by ``mu + C (C + s^2 I)^-1 (y - mu)`` with
``s = sigma_o / 255``.
"""

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .binio import BinaryReader, BinaryWriter
from .imaging import noise_std, pixels_of
from .utils import (
    ArtifactMissingError,
    DomainError,
    FormatError,
    IllConditionedWarning,
    NumericalError,
    ShapeError,
    StatisticsError,
    make_rng,
)

logger = logging.getLogger(__name__)

MMSE_MAGIC = b"MMSE"
MMSE_VERSION = 1
MAX_JITTER_STEPS = 8


@dataclass(frozen=True)
class MmseConfig:
    patch_size: int = 8
    max_patches: int = 20000
    seed: int = 0


@dataclass(frozen=True, eq=False)
class MmseModel:
    patch_size: int
    mean: np.ndarray
    covariance: np.ndarray
    jitter: float = 1e-8

    def __post_init__(self):
        d = self.patch_size**2
        if self.patch_size < 1:
            raise DomainError(f"patch_size={self.patch_size} must be positive")
        if self.mean.shape != (d,) or self.covariance.shape != (d, d):
            raise ShapeError(
                f"A {self.patch_size}x{self.patch_size} model needs a ({d},)"
                f" mean and a ({d}, {d}) covariance, got {self.mean.shape}"
                f" and {self.covariance.shape}"
            )
        if not np.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-10):
            raise StatisticsError("Covariance matrix is not symmetric")
        if not self.jitter > 0:
            raise DomainError(f"jitter={self.jitter} must be positive")

    @property
    def dimension(self):
        return self.patch_size**2


def tile(pixels, p):
    h, w = pixels.shape
    return (
        pixels.reshape(h // p, p, w // p, p)
        .transpose(0, 2, 1, 3)
        .reshape(-1, p * p)
    )


def image_patches(image, p):
    """Non-overlapping ``p x p`` patches as rows, reflect-padding the image
    up to a multiple of ``p``.

    Returns ``(patches, padded_shape)``.
    """
    pixels = pixels_of(image)
    h, w = pixels.shape
    pad = ((0, -h % p), (0, -w % p))
    padded = np.pad(pixels, pad, mode="reflect") if any(pad[0] + pad[1]) else pixels
    return tile(padded, p), padded.shape


def assemble_patches(patches, padded_shape, shape, p):
    """Inverse of ``image_patches``, cropped back to ``shape``."""
    ph, pw = padded_shape
    full = (
        patches.reshape(ph // p, pw // p, p, p)
        .transpose(0, 2, 1, 3)
        .reshape(ph, pw)
    )
    return full[: shape[0], : shape[1]]


def fit_mmse(images, patch_size=8, max_patches=None, seed=0, jitter=1e-8):
    """Estimate the patch prior from clean images.

    Only complete tiles are used for fitting. If there are more than
    ``max_patches`` of them, a random subset drawn with ``seed`` is kept.
    """
    p = patch_size
    rows = []
    for image in images:
        pixels = pixels_of(image).astype(np.float64)
        h, w = pixels.shape
        if h >= p and w >= p:
            rows.append(tile(pixels[: h - h % p, : w - w % p], p))
    if not rows:
        raise StatisticsError(f"No image holds a complete {p}x{p} patch")
    X = np.concatenate(rows)
    if max_patches is not None and len(X) > max_patches:
        keep = make_rng(seed).choice(len(X), size=max_patches, replace=False)
        X = X[np.sort(keep)]
    n, d = X.shape
    if n < 2:
        raise StatisticsError("At least two patches are needed for a covariance")
    if n < d:
        warnings.warn(
            f"Fitting a {d}-dimensional covariance from only {n} patches",
            IllConditionedWarning,
            stacklevel=2,
        )
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2
    logger.info("Fitted %dx%d MMSE prior on %d patches", p, p, n)
    return MmseModel(patch_size=p, mean=mean, covariance=cov, jitter=jitter)


def regularized_factor(model, sigma):
    """Cholesky factor of ``C + sigma^2 I``.

    The model's jitter is added to the diagonal only when the plain
    factorization fails, growing tenfold per attempt.
    """
    system = model.covariance + sigma**2 * np.eye(model.dimension)
    try:
        return cho_factor(system, lower=True)
    except LinAlgError:
        pass
    jitter = model.jitter
    for _ in range(MAX_JITTER_STEPS):
        try:
            factor = cho_factor(
                system + jitter * np.eye(model.dimension), lower=True
            )
        except LinAlgError:
            jitter *= 10
            continue
        logger.debug("Factorized with jitter %g", jitter)
        return factor
    raise NumericalError(
        f"C + sigma^2 I is not positive definite even with jitter {jitter / 10:g}"
    )


def mmse_denoise(model, noisy, sigma_o):
    """Patchwise Wiener estimate of the clean image, given the true noise
    level ``sigma_o`` (0-255 scale).
    """
    if sigma_o < 0:
        raise DomainError(f"sigma_o={sigma_o} is negative")
    pixels = pixels_of(noisy)
    p = model.patch_size
    Y, padded_shape = image_patches(pixels.astype(np.float64), p)
    factor = regularized_factor(model, noise_std(sigma_o))
    Z = cho_solve(factor, (Y - model.mean).T)
    estimate = model.mean + (model.covariance @ Z).T
    out = assemble_patches(estimate, padded_shape, pixels.shape, p)
    return out.astype(pixels.dtype)


def encode_mmse(model):
    out = BinaryWriter()
    out.raw(MMSE_MAGIC)
    out.u32(MMSE_VERSION)
    out.u32(model.patch_size)
    out.raw(np.ascontiguousarray(model.mean, dtype="<f8").tobytes())
    out.raw(np.ascontiguousarray(model.covariance, dtype="<f8").tobytes())
    out.f64(model.jitter)
    return out.getvalue()


def decode_mmse(data, source="<bytes>"):
    reader = BinaryReader(data, source)
    reader.expect_magic(MMSE_MAGIC)
    reader.expect_version(MMSE_VERSION)
    p = reader.u32()
    if not 1 <= p <= 64:
        raise FormatError(f"{source}: implausible patch size {p}")
    d = p * p
    mean = np.frombuffer(reader.take(8 * d), dtype="<f8").astype(np.float64)
    cov = np.frombuffer(reader.take(8 * d * d), dtype="<f8").astype(np.float64)
    jitter = reader.f64()
    reader.finish()
    try:
        return MmseModel(p, mean, cov.reshape(d, d), jitter)
    except (DomainError, StatisticsError, ShapeError) as exc:
        raise FormatError(f"{source}: {exc}") from exc


def save_mmse(model, path):
    Path(path).write_bytes(encode_mmse(model))
    logger.info("Saved MMSE model %s", path)


def load_mmse(path):
    path = Path(path)
    if not path.exists():
        raise ArtifactMissingError(f"MMSE model not found: {path}")
    return decode_mmse(path.read_bytes(), source=str(path))


__all__ = [
    "MMSE_MAGIC",
    "MMSE_VERSION",
    "MmseConfig",
    "MmseModel",
    "image_patches",
    "assemble_patches",
    "fit_mmse",
    "regularized_factor",
    "mmse_denoise",
    "encode_mmse",
    "decode_mmse",
    "save_mmse",
    "load_mmse",
]
