"""Channel-image corpora: randomized scene generation and on-disk layout.

A dataset directory holds one ``record_NNNNN.vlch`` file per record and an
``index.txt`` listing each record id with the flat description of the scene
that produced it.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .binio import BinaryReader, BinaryWriter
from .channel import (
    PlaneOffset,
    VlcScene,
    build_channel_matrix,
    image_size,
)
from .config import apply_flat, flatten, parse_config_text
from .imaging import ChannelImage, matrix_to_image
from .utils import (
    ArtifactMissingError,
    ConfigError,
    DegenerateImageError,
    DomainError,
    FormatError,
    GeometryError,
    ProtocolError,
    ShapeError,
    make_rng,
)

logger = logging.getLogger(__name__)

RECORD_MAGIC = b"VLCH"
RECORD_VERSION = 1
INDEX_FILE = "index.txt"


@dataclass(frozen=True)
class SceneRanges:
    """Additive (low, high) perturbations drawn uniformly for each record."""

    vertical_distance: tuple[float, float] = (-0.5, 0.5)
    pd_offset_x: tuple[float, float] = (-0.5, 0.5)
    pd_offset_y: tuple[float, float] = (-0.5, 0.5)
    led_spacing: tuple[float, float] = (-0.02, 0.02)
    pd_spacing: tuple[float, float] = (-0.02, 0.02)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DomainError(f"{name}: low {lo} exceeds high {hi}")

    @classmethod
    def zero(cls):
        return cls(*[(0.0, 0.0)] * 5)


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 250
    seed: int = 0
    workers: int = 1
    test_fraction: float = 0.2
    max_retries: int = 20

    def __post_init__(self):
        if self.count < 1:
            raise DomainError(f"count={self.count} must be at least 1")
        if not 0 <= self.test_fraction < 1:
            raise DomainError(f"test_fraction={self.test_fraction}")
        if self.workers < 1:
            raise DomainError(f"workers={self.workers} must be at least 1")


@dataclass(frozen=True)
class DatasetRecord:
    clean_image: ChannelImage
    scene_descriptor: VlcScene = field(repr=False)
    id: int = 0

    def __post_init__(self):
        expected = image_size(self.scene_descriptor)
        if self.clean_image.shape != expected:
            raise ShapeError(
                f"Record {self.id}: image {self.clean_image.shape} does not"
                f" match the scene's {expected}"
            )


def randomize_scene(base, ranges, rng):
    """Perturb vertical distance, PD-plane offset and array spacings."""
    delta_l, dx, dy, dled, dpd = (
        float(rng.uniform(lo, hi))
        for lo, hi in (
            ranges.vertical_distance,
            ranges.pd_offset_x,
            ranges.pd_offset_y,
            ranges.led_spacing,
            ranges.pd_spacing,
        )
    )
    return replace(
        base,
        led_grid=replace(base.led_grid, spacing=base.led_grid.spacing + dled),
        pd_grid=replace(
            base.pd_grid,
            spacing=base.pd_grid.spacing + dpd,
            height=base.pd_grid.height - delta_l,
        ),
        pd_plane_offset=PlaneOffset(
            base.pd_plane_offset.dx + dx, base.pd_plane_offset.dy + dy
        ),
    )


def generate_record(base_scene, ranges, seed, record_id, max_retries=20):
    """Draw one valid scene for ``record_id`` and render its channel image."""
    rng = make_rng(seed, record_id)
    for attempt in range(1, max_retries + 1):
        try:
            scene = randomize_scene(base_scene, ranges, rng)
            image = matrix_to_image(build_channel_matrix(scene))
        except (GeometryError, DomainError, DegenerateImageError) as exc:
            logger.debug(
                "Record %d, attempt %d rejected: %s", record_id, attempt, exc
            )
            continue
        return DatasetRecord(
            clean_image=image, scene_descriptor=scene, id=record_id
        )
    raise GeometryError(
        f"Could not draw a valid scene for record {record_id}"
        f" after {max_retries} attempts"
    )


def generate_dataset(base_scene, count, seed, ranges, workers=1, max_retries=20):
    """Generate ``count`` records with ids ``0 .. count - 1``.

    Each record draws from its own generator derived from ``(seed, id)``,
    so the result does not depend on ``workers``.
    """
    if count < 1:
        raise DomainError(f"count={count} must be at least 1")

    def make(record_id):
        return generate_record(base_scene, ranges, seed, record_id, max_retries)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(make, range(count)))
    else:
        records = [make(i) for i in range(count)]
    logger.info(
        "Generated %d channel images of size %dx%d (seed %d)",
        count,
        *image_size(base_scene),
        seed,
    )
    return records


def split_ids(ids, test_fraction=0.2):
    """Sorted ids split into ``(train_ids, test_ids)``; the highest ids
    form the test split.
    """
    ids = sorted(ids)
    n_test = min(math.ceil(test_fraction * len(ids)), len(ids) - 1)
    n_test = max(n_test, 0)
    return ids[: len(ids) - n_test], ids[len(ids) - n_test :]


def check_disjoint(train_ids, test_ids):
    overlap = sorted(set(train_ids) & set(test_ids))
    if overlap:
        shown = ", ".join(map(str, overlap[:10]))
        raise ProtocolError(
            f"{len(overlap)} record id(s) are both in the training and"
            f" the test set: {shown}"
        )


def encode_record(image):
    out = BinaryWriter()
    out.raw(RECORD_MAGIC)
    out.u32(RECORD_VERSION)
    rows, cols = image.shape
    out.u32(rows)
    out.u32(cols)
    out.raw(np.ascontiguousarray(image.pixels, dtype="<f4").tobytes())
    out.f64(image.norm_min)
    out.f64(image.norm_scale)
    return out.getvalue()


def decode_record(data, source="<bytes>"):
    reader = BinaryReader(data, source)
    reader.expect_magic(RECORD_MAGIC)
    reader.expect_version(RECORD_VERSION)
    rows = reader.u32()
    cols = reader.u32()
    pixels = np.frombuffer(reader.take(rows * cols * 4), dtype="<f4")
    pixels = pixels.reshape(rows, cols).astype(np.float32)
    norm_min = reader.f64()
    norm_scale = reader.f64()
    reader.finish()
    try:
        return ChannelImage(pixels=pixels, norm_min=norm_min, norm_scale=norm_scale)
    except (DomainError, DegenerateImageError, ShapeError) as exc:
        raise FormatError(f"{source}: {exc}") from exc


def record_path(directory, record_id):
    return Path(directory) / f"record_{record_id:05d}.vlch"


def save_dataset(records, directory):
    """Write records and their index into ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# id followed by the scene that produced the record\n"]
    for record in sorted(records, key=lambda r: r.id):
        record_path(directory, record.id).write_bytes(
            encode_record(record.clean_image)
        )
        flat = flatten(record.scene_descriptor, "")
        desc = " ".join(
            f"{k}={v.replace(' ', '')}" for k, v in flat.items()
        )
        lines.append(f"{record.id} {desc}\n")
    (directory / INDEX_FILE).write_text("".join(lines))
    logger.info("Saved %d records to %s", len(records), directory)


def _parse_index_line(line, source):
    record_id, *pairs = line.split()
    try:
        record_id = int(record_id)
    except ValueError:
        raise FormatError(f"{source}: bad record id {record_id!r}")
    text = "\n".join(pairs)
    try:
        scene = apply_flat(VlcScene(), parse_config_text(text, source))
    except ConfigError as exc:
        raise FormatError(f"{source}: record {record_id}: {exc}") from exc
    return record_id, scene


def load_dataset(directory, ids=None):
    """Read the records of ``directory`` (optionally only ``ids``)."""
    directory = Path(directory)
    index = directory / INDEX_FILE
    if not index.exists():
        raise ArtifactMissingError(f"Dataset index not found: {index}")
    wanted = None if ids is None else set(ids)
    records = []
    for line in index.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        record_id, scene = _parse_index_line(line, str(index))
        if wanted is not None and record_id not in wanted:
            continue
        path = record_path(directory, record_id)
        if not path.exists():
            raise ArtifactMissingError(f"Dataset record not found: {path}")
        image = decode_record(path.read_bytes(), source=str(path))
        try:
            records.append(DatasetRecord(image, scene, record_id))
        except ShapeError as exc:
            raise FormatError(str(exc)) from exc
    return records


__all__ = [
    "RECORD_MAGIC",
    "RECORD_VERSION",
    "SceneRanges",
    "DatasetConfig",
    "DatasetRecord",
    "randomize_scene",
    "generate_record",
    "generate_dataset",
    "split_ids",
    "check_disjoint",
    "encode_record",
    "decode_record",
    "record_path",
    "save_dataset",
    "load_dataset",
]
