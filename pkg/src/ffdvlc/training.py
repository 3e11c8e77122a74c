"""Adam training of the denoiser on random patches of clean channel images."""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import patch_corners, pixels_of
from .model import ForwardState, backward, forward, init_params, save_checkpoint
from .tensor import mse_loss
from .utils import (
    ArtifactMissingError,
    DomainError,
    FormatError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
    make_rng,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise DomainError(
                f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )
        if not self.epsilon > 0:
            raise DomainError(f"Adam epsilon={self.epsilon} must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    Attributes:
        epochs: Passes over freshly sampled patches.
        batch_size: Patches per Adam step.
        learning_rate: Initial step size, halved after each third of
            the epochs.
        patch_size: Side of the square training patches (even).
        patches_per_image: Patches drawn from each image per epoch.
        sigma_range: Bounds of the uniform per-patch noise level.
        adam: Moment decay rates and epsilon.
        seed: Seeds the initialization and every data draw.
    """

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    patch_size: int = 70
    patches_per_image: int = 8
    sigma_range: tuple[float, float] = (0.0, 55.0)
    adam: AdamConfig = AdamConfig()
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs={self.epochs} must be at least 1")
        if self.batch_size < 1:
            raise DomainError(f"batch_size={self.batch_size} must be at least 1")
        if self.patches_per_image < 1:
            raise DomainError(
                f"patches_per_image={self.patches_per_image} must be at least 1"
            )
        if not self.learning_rate > 0:
            raise DomainError(f"learning_rate={self.learning_rate}")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ShapeError(
                f"patch_size={self.patch_size} must be even and at least 2"
            )
        lo, hi = self.sigma_range
        if lo < 0 or hi < lo:
            raise DomainError(f"Invalid sigma_range {self.sigma_range}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainResult:
    params: object
    losses: list
    train_ids: list


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, epsilon=1e-8, t=None):
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``params`` and ``grads`` map names to arrays. ``t`` defaults to
    ``state.t + 1``; ``state.t`` is set to the step that was applied.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise DomainError(f"Adam step t={t} must be at least 1")
    if set(grads) != set(params):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeError(f"Parameter/gradient names differ: {missing}")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + epsilon)
    state.t = t
    return params, state


def learning_rate(config, epoch):
    """Step size for 0-based ``epoch``: halved after each third of the run."""
    halvings = min(3 * epoch // config.epochs, 2)
    return config.learning_rate / 2**halvings


def sample_patches(records, config, rng):
    """Shuffled clean patches, ``patches_per_image`` from every record."""
    patches = []
    p = config.patch_size
    for record in records:
        pixels = pixels_of(record.clean_image)
        for r, c in patch_corners(pixels.shape, p, config.patches_per_image, rng):
            patches.append(pixels[r : r + p, c : c + p])
    order = rng.permutation(len(patches))
    return np.stack([patches[i] for i in order])[:, None].astype(np.float32)


def corrupt(clean, sigma_range, rng):
    """Add AWGN with a uniformly drawn level per patch; return (noisy, sigmas)."""
    lo, hi = sigma_range
    sigmas = rng.uniform(lo, hi, size=clean.shape[0])
    noise = rng.standard_normal(clean.shape) * (sigmas / 255.0)[:, None, None, None]
    return (clean + noise).astype(clean.dtype), sigmas


def train_step(params, clean, noisy, sigmas, adam_state, lr, adam):
    """One Adam step on a batch; returns the batch loss."""
    state = ForwardState()
    out = forward(params, noisy, sigmas, mode="train", state=state)
    loss, grad = mse_loss(out, clean, 1.0 / (2 * clean.shape[0]))
    if not np.isfinite(loss):
        raise NonFiniteError(f"loss is {loss}")
    grads = backward(params, state, grad)
    adam_step(
        params.trainable(),
        grads,
        adam_state,
        lr,
        adam.beta1,
        adam.beta2,
        adam.epsilon,
    )
    return loss


def train(records, model_config, train_config, params=None):
    """Train a denoiser on ``records``.

    Arguments:
        records: Training ``DatasetRecord`` list (ids must be disjoint from
            any set later used for evaluation).
        model_config: Architecture of the network.
        train_config: A ``TrainConfig``.
        params: Optional initial parameters (fresh He initialization from
            ``train_config.seed`` otherwise).
    """
    if not records:
        raise DomainError("Cannot train on an empty dataset")
    records = sorted(records, key=lambda r: r.id)
    if params is None:
        params = init_params(model_config, train_config.seed)
    rng = make_rng(train_config.seed, 1)
    adam_state = AdamState()
    losses = []
    for epoch in range(train_config.epochs):
        start = time.perf_counter()
        lr = learning_rate(train_config, epoch)
        patches = sample_patches(records, train_config, rng)
        batch_losses = []
        for i in range(0, len(patches), train_config.batch_size):
            clean = patches[i : i + train_config.batch_size]
            noisy, sigmas = corrupt(clean, train_config.sigma_range, rng)
            try:
                loss = train_step(
                    params, clean, noisy, sigmas, adam_state, lr, train_config.adam
                )
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"Training diverged at epoch {epoch + 1},"
                    f" step {adam_state.t + 1} (lr={lr:g}): {exc}"
                ) from exc
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
        logger.info(
            "epoch %d/%d lr=%.3g loss=%.6g (%.1fs)",
            epoch + 1,
            train_config.epochs,
            lr,
            losses[-1],
            time.perf_counter() - start,
        )
    return TrainResult(
        params=params, losses=losses, train_ids=[r.id for r in records]
    )


def ids_path(checkpoint):
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".ids")


def save_train_ids(ids, checkpoint):
    ids_path(checkpoint).write_text("".join(f"{i}\n" for i in sorted(ids)))


def load_train_ids(checkpoint):
    path = ids_path(checkpoint)
    if not path.exists():
        raise ArtifactMissingError(f"Training id list not found: {path}")
    try:
        return [int(line) for line in path.read_text().split()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_training(result, model_config, checkpoint):
    """Write the checkpoint and its training-id sidecar."""
    save_checkpoint(result.params, model_config, checkpoint)
    save_train_ids(result.train_ids, checkpoint)


__all__ = [
    "AdamConfig",
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "adam_step",
    "learning_rate",
    "sample_patches",
    "corrupt",
    "train_step",
    "train",
    "ids_path",
    "save_train_ids",
    "load_train_ids",
    "save_training",
]
