"""Channel matrices as grayscale images: normalization, AWGN, patches, PSNR.

Pixels live on the unit scale. Noise levels follow the 0-255 convention, so
a real noise level ``sigma_o`` corresponds to a pixel standard deviation of
``sigma_o / 255`` and the PSNR peak is 1.
"""

import math
from dataclasses import dataclass

import numpy as np
from ovld import ovld, recurse

from .channel import ChannelMatrix
from .utils import DegenerateImageError, DomainError, ShapeError, make_rng


@dataclass(frozen=True)
class ChannelImage:
    """Min-max normalized channel matrix.

    The source gains are recovered as ``pixels * norm_scale + norm_min``.
    """

    pixels: np.ndarray
    norm_min: float
    norm_scale: float

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ShapeError("A channel image must be two-dimensional")
        if not self.norm_scale > 0:
            raise DegenerateImageError(f"norm_scale={self.norm_scale}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise DomainError("Channel image pixels must lie in [0, 1]")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class NoisyChannelImage:
    """Channel image after AWGN; pixels may leave [0, 1] (never clipped)."""

    pixels: np.ndarray
    sigma_o: float

    def __post_init__(self):
        if self.sigma_o < 0:
            raise DomainError(f"sigma_o={self.sigma_o} is negative")

    @property
    def shape(self):
        return self.pixels.shape


@ovld
def pixels_of(image: ChannelImage | NoisyChannelImage):
    return image.pixels


@ovld
def pixels_of(image: ChannelMatrix):
    return image.entries


@ovld
def pixels_of(image: np.ndarray):
    return image


def noise_std(sigma_o):
    """Pixel-scale standard deviation for a noise level on the 0-255 scale."""
    return sigma_o / 255.0


@ovld
def matrix_to_image(matrix: ChannelMatrix):
    return recurse(matrix.entries)


@ovld
def matrix_to_image(matrix: np.ndarray):
    if matrix.ndim != 2 or any(s % 2 for s in matrix.shape):
        raise ShapeError(
            f"Channel images need even dimensions, got {matrix.shape}"
        )
    matrix = matrix.astype(np.float64)
    lo = float(matrix.min())
    scale = float(matrix.max()) - lo
    if not scale > 0:
        raise DegenerateImageError(
            "Cannot normalize a constant channel matrix"
        )
    pixels = (matrix - lo) / scale
    return ChannelImage(pixels=pixels, norm_min=lo, norm_scale=scale)


def image_to_matrix(image):
    """Map normalized pixels back to physical channel gains."""
    entries = pixels_of(image).astype(np.float64) * image.norm_scale
    return ChannelMatrix(entries=entries + image.norm_min)


def awgn(shape, sigma_o, rng):
    """Zero-mean Gaussian noise with std ``sigma_o / 255``."""
    if sigma_o < 0:
        raise DomainError(f"sigma_o={sigma_o} is negative")
    return rng.standard_normal(shape) * noise_std(sigma_o)


def add_awgn(image, sigma_o, seed):
    """Corrupt a channel image with AWGN at real noise level ``sigma_o``."""
    pixels = pixels_of(image)
    if sigma_o < 0:
        raise DomainError(f"sigma_o={sigma_o} is negative")
    if sigma_o == 0:
        return NoisyChannelImage(pixels=pixels.copy(), sigma_o=0.0)
    noise = awgn(pixels.shape, sigma_o, make_rng(seed))
    return NoisyChannelImage(
        pixels=pixels + noise.astype(pixels.dtype, copy=False),
        sigma_o=float(sigma_o),
    )


def psnr(reference, estimate):
    """Peak signal-to-noise ratio in dB with peak 1 (``inf`` if identical)."""
    ref = pixels_of(reference)
    est = pixels_of(estimate)
    if ref.shape != est.shape:
        raise ShapeError(f"Shape mismatch: {ref.shape} vs {est.shape}")
    mse = float(np.mean((ref.astype(np.float64) - est.astype(np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(1.0 / mse)


def patch_corners(shape, patch, count, rng):
    """Uniformly random top-left corners of ``patch`` x ``patch`` windows."""
    height, width = shape
    if patch % 2:
        raise ShapeError(f"Patch size must be even, got {patch}")
    if patch > min(height, width):
        raise ShapeError(
            f"Patch size {patch} exceeds the {height}x{width} image"
        )
    rows = rng.integers(0, height - patch + 1, size=count)
    cols = rng.integers(0, width - patch + 1, size=count)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def extract_patches(image, patch, count, seed):
    """Cut ``count`` random square patches out of a channel image."""
    pixels = pixels_of(image)
    corners = patch_corners(pixels.shape, patch, count, make_rng(seed))
    return [pixels[r : r + patch, c : c + patch].copy() for r, c in corners]


__all__ = [
    "ChannelImage",
    "NoisyChannelImage",
    "pixels_of",
    "noise_std",
    "matrix_to_image",
    "image_to_matrix",
    "awgn",
    "add_awgn",
    "psnr",
    "patch_corners",
    "extract_patches",
]
