"""Evaluation protocol: noise-level sensitivity sweeps and the comparison of
the denoiser (fixed and tunable input level) with the MMSE baseline.

Every evaluation corrupts each test image with noise drawn from
``(seed, record id, sigma_o index)``, so all methods evaluated at the same
``sigma_o`` see the same noisy images.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from ovld import ovld

from .channel import VlcScene
from .config import config_hash
from .dataset import DatasetConfig, SceneRanges, check_disjoint
from .imaging import NoisyChannelImage, awgn, pixels_of, psnr
from .mmse import MmseConfig, mmse_denoise
from .model import ModelConfig, denoise
from .training import TrainConfig
from .utils import ConfigError, DomainError, FormatError, make_rng
from .version import version

logger = logging.getLogger(__name__)

CSV_FIELDS = ["sigma_o", "method", "sigma_input", "psnr_mean", "psnr_std"]
SENSITIVITY_LABEL = "ffdnet"
MMSE_LABEL = "mmse-patchwise-wiener"
NOISY_LABEL = "noisy"


@dataclass(frozen=True)
class SweepSpec:
    """Evaluation grid.

    Attributes:
        sigma_o_grid: Real noise levels to corrupt the test images with.
        sigma_inputs: Input noise levels of the sensitivity sweep.
        seeds: One noise realization per seed and test image.
        mode: ``fixed`` sweeps every ``sigma_inputs`` value; ``tunable``
            sets the input level from ``sigma_o`` with ``tunable_policy``.
        fixed_sigma: Input level of the fixed-level comparison curve.
        tunable_policy: ``matched`` (sigma = sigma_o) or ``plus5``
            (sigma = sigma_o + 5).
        workers: Threads evaluating curve points.
        include_noisy: Also report the PSNR of the noisy input.
    """

    sigma_o_grid: tuple[float, ...] = tuple(float(s) for s in range(0, 55, 5))
    sigma_inputs: tuple[float, ...] = (5.0, 15.0, 25.0, 50.0)
    seeds: tuple[int, ...] = (0,)
    mode: str = "fixed"
    fixed_sigma: float = 15.0
    tunable_policy: str = "matched"
    workers: int = 1
    include_noisy: bool = False

    def __post_init__(self):
        if not self.sigma_o_grid or not self.sigma_inputs or not self.seeds:
            raise DomainError("Sweep grids and seeds must be nonempty")
        if min(self.sigma_o_grid) < 0 or min(self.sigma_inputs) < 0:
            raise DomainError("Noise levels must be nonnegative")
        if self.fixed_sigma < 0:
            raise DomainError(f"fixed_sigma={self.fixed_sigma} is negative")
        if self.mode not in ("fixed", "tunable"):
            raise DomainError(
                f"mode must be 'fixed' or 'tunable', got {self.mode!r}"
            )
        if self.tunable_policy not in ("matched", "plus5"):
            raise DomainError(
                "tunable_policy must be 'matched' or 'plus5',"
                f" got {self.tunable_policy!r}"
            )
        if self.workers < 1:
            raise DomainError(f"workers={self.workers} must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    scene: VlcScene = VlcScene()
    ranges: SceneRanges = SceneRanges()
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    mmse: MmseConfig = MmseConfig()
    sweep: SweepSpec = SweepSpec()


@dataclass(frozen=True)
class CurvePoint:
    sigma_o: float
    method: str
    sigma_input: float = None
    psnr_mean: float = 0.0
    psnr_std: float = 0.0

    def __post_init__(self):
        if not self.psnr_std >= 0:
            raise DomainError(f"psnr_std={self.psnr_std} must be nonnegative")

    def sort_key(self):
        s = -1.0 if self.sigma_input is None else self.sigma_input
        return (self.sigma_o, self.method, s)


@ovld
def tunable_sigma(policy: Literal["matched"], sigma_o: int | float):
    return float(sigma_o)


@ovld
def tunable_sigma(policy: Literal["plus5"], sigma_o: int | float):
    return float(sigma_o) + 5.0


@ovld
def tunable_sigma(policy: str, sigma_o: int | float):
    raise ConfigError(f"Unknown tunable policy {policy!r}")


def tunable_label(policy):
    return f"ffdnet-tunable-{policy}"


def fixed_label(sigma):
    return f"ffdnet-{sigma:g}"


def noisy_observation(record, sigma_o, seed, index):
    """The noisy version of ``record`` evaluated at grid position ``index``."""
    clean = pixels_of(record.clean_image)
    if sigma_o == 0:
        return NoisyChannelImage(pixels=clean.copy(), sigma_o=0.0)
    noise = awgn(clean.shape, sigma_o, make_rng(seed, record.id, index))
    return NoisyChannelImage(
        pixels=clean + noise.astype(clean.dtype), sigma_o=float(sigma_o)
    )


def summarize(values):
    """Mean and population std of PSNR values (``inf`` means lossless)."""
    values = np.asarray(values, dtype=np.float64)
    if np.isinf(values).any():
        return math.inf, 0.0
    return float(values.mean()), float(values.std())


def evaluate_point(estimator, records, sigma_o, index, seeds):
    scores = []
    for seed in seeds:
        for record in records:
            noisy = noisy_observation(record, sigma_o, seed, index)
            scores.append(psnr(record.clean_image, estimator(noisy)))
    return summarize(scores)


def _run_tasks(tasks, records, spec):
    """Evaluate ``(sigma_o index, method, sigma_input, estimator)`` tasks."""

    def run(task):
        index, method, sigma_input, estimator = task
        sigma_o = spec.sigma_o_grid[index]
        mean, std = evaluate_point(estimator, records, sigma_o, index, spec.seeds)
        logger.info(
            "sigma_o=%g %s sigma=%s psnr=%.3f",
            sigma_o,
            method,
            "-" if sigma_input is None else f"{sigma_input:g}",
            mean,
        )
        return CurvePoint(
            sigma_o=float(sigma_o),
            method=method,
            sigma_input=sigma_input,
            psnr_mean=mean,
            psnr_std=std,
        )

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            points = list(pool.map(run, tasks))
    else:
        points = [run(task) for task in tasks]
    return sorted(points, key=CurvePoint.sort_key)


def _ffdnet(params, sigma):
    def estimate(noisy):
        x = pixels_of(noisy).astype(np.float32)
        return denoise(params, x, sigma)

    return estimate


def _noisy_task(index):
    return (index, NOISY_LABEL, None, lambda noisy: noisy)


def _prepare(records, train_ids):
    if not records:
        raise DomainError("The test set is empty")
    if train_ids is not None:
        check_disjoint(train_ids, [r.id for r in records])
    return sorted(records, key=lambda r: r.id)


def run_sensitivity_sweep(params, records, spec, train_ids=None):
    """PSNR of the denoiser over the ``sigma_o`` grid.

    In ``fixed`` mode every ``sigma_inputs`` value gives one curve; in
    ``tunable`` mode a single curve follows ``spec.tunable_policy``.
    """
    records = _prepare(records, train_ids)
    tasks = []
    for index, sigma_o in enumerate(spec.sigma_o_grid):
        if spec.mode == "fixed":
            for sigma in spec.sigma_inputs:
                tasks.append(
                    (index, SENSITIVITY_LABEL, float(sigma), _ffdnet(params, sigma))
                )
        else:
            sigma = tunable_sigma(spec.tunable_policy, sigma_o)
            tasks.append(
                (
                    index,
                    tunable_label(spec.tunable_policy),
                    sigma,
                    _ffdnet(params, sigma),
                )
            )
        if spec.include_noisy:
            tasks.append(_noisy_task(index))
    return _run_tasks(tasks, records, spec)


def run_mmse_comparison(params, mmse_model, records, spec, train_ids=None):
    """Fixed-level denoiser, tunable-level denoiser and MMSE (at the true
    ``sigma_o``) on the same noisy images.
    """
    records = _prepare(records, train_ids)
    tasks = []
    for index, sigma_o in enumerate(spec.sigma_o_grid):
        sigma = tunable_sigma(spec.tunable_policy, sigma_o)
        tasks.extend(
            [
                (
                    index,
                    fixed_label(spec.fixed_sigma),
                    float(spec.fixed_sigma),
                    _ffdnet(params, spec.fixed_sigma),
                ),
                (
                    index,
                    tunable_label(spec.tunable_policy),
                    sigma,
                    _ffdnet(params, sigma),
                ),
                (
                    index,
                    MMSE_LABEL,
                    None,
                    lambda noisy, s=sigma_o: mmse_denoise(mmse_model, noisy, s),
                ),
            ]
        )
        if spec.include_noisy:
            tasks.append(_noisy_task(index))
    return _run_tasks(tasks, records, spec)


def denoising_gain(points, sigma, method=SENSITIVITY_LABEL):
    """PSNR improvement over the noisy input at ``sigma_input = sigma_o = sigma``."""
    denoised = noisy = None
    for p in points:
        if p.sigma_o != sigma:
            continue
        if p.method == method and p.sigma_input == sigma:
            denoised = p.psnr_mean
        elif p.method == NOISY_LABEL:
            noisy = p.psnr_mean
    if denoised is None or noisy is None:
        raise DomainError(
            f"Need both a {method!r} point and a {NOISY_LABEL!r} point"
            f" at sigma_o = sigma = {sigma:g}"
        )
    return denoised - noisy


def csv_comment(config):
    seeds = " ".join(
        [
            f"dataset={config.dataset.seed}",
            f"train={config.train.seed}",
            f"mmse={config.mmse.seed}",
            "sweep=" + ",".join(map(str, config.sweep.seeds)),
        ]
    )
    return f"ffdvlc {version} config={config_hash(config)} seeds={seeds}"


def _fmt(x):
    return "inf" if math.isinf(x) else f"{x:.6f}"


def write_curve_csv(points, path, comment):
    """Write curve points, preceded by ``# comment``."""
    path = Path(path)
    with path.open("w", newline="") as f:
        f.write(f"# {comment}\n")
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for p in points:
            writer.writerow(
                {
                    "sigma_o": f"{p.sigma_o:g}",
                    "method": p.method,
                    "sigma_input": ""
                    if p.sigma_input is None
                    else f"{p.sigma_input:g}",
                    "psnr_mean": _fmt(p.psnr_mean),
                    "psnr_std": _fmt(p.psnr_std),
                }
            )
    logger.info("Wrote %d curve points to %s", len(points), path)


def read_curve_csv(path):
    """Return ``(comment, points)`` from a file made by ``write_curve_csv``."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise FormatError(f"{path}: missing comment header")
    reader = csv.DictReader(lines[1:])
    if reader.fieldnames != CSV_FIELDS:
        raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
    points = []
    try:
        for row in reader:
            points.append(
                CurvePoint(
                    sigma_o=float(row["sigma_o"]),
                    method=row["method"],
                    sigma_input=float(row["sigma_input"])
                    if row["sigma_input"]
                    else None,
                    psnr_mean=float(row["psnr_mean"]),
                    psnr_std=float(row["psnr_std"]),
                )
            )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return lines[0][2:], points


__all__ = [
    "CSV_FIELDS",
    "SENSITIVITY_LABEL",
    "MMSE_LABEL",
    "NOISY_LABEL",
    "SweepSpec",
    "ExperimentConfig",
    "CurvePoint",
    "tunable_sigma",
    "tunable_label",
    "fixed_label",
    "noisy_observation",
    "summarize",
    "evaluate_point",
    "run_sensitivity_sweep",
    "run_mmse_comparison",
    "denoising_gain",
    "csv_comment",
    "write_curve_csv",
    "read_curve_csv",
]
