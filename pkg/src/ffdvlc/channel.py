"""Lambertian line-of-sight channel model for LED/PD transceiver arrays.

Angles at the public boundary are in degrees, lengths in metres. The
channel matrix follows the ``y = Hx`` convention: rows are photodetectors,
columns are LEDs.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .utils import DomainError, GeometryError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoomSize:
    length: float = 8.0
    width: float = 8.0
    height: float = 4.0


@dataclass(frozen=True)
class GridSpec:
    """Regular rectangular array of identical devices on a horizontal plane.

    Attributes:
        count_x: Number of devices along the room length.
        count_y: Number of devices along the room width.
        spacing: Distance between neighbouring devices, in metres.
        height: Height of the plane above the floor, in metres.
    """

    count_x: int = 16
    count_y: int = 8
    spacing: float = 0.1
    height: float = 3.0

    @property
    def count(self):
        return self.count_x * self.count_y


@dataclass(frozen=True)
class PlaneOffset:
    dx: float = 0.0
    dy: float = 0.0


@dataclass(frozen=True)
class VlcScene:
    """Geometry and optics of one LED-array/PD-array configuration.

    The LED plane faces straight down and the PD plane straight up; both
    grids are centered on the room footprint and the PD grid is then shifted
    by ``pd_plane_offset``. ``led_power_w`` is carried along with the other
    optical parameters but does not enter the channel gain.
    """

    room_size: RoomSize = field(default_factory=RoomSize)
    led_grid: GridSpec = field(default_factory=GridSpec)
    pd_grid: GridSpec = field(
        default_factory=lambda: GridSpec(16, 8, 0.1, 1.0)
    )
    pd_plane_offset: PlaneOffset = field(default_factory=PlaneOffset)
    semi_angle_deg: float = 50.0
    fov_deg: float = 45.0
    pd_area_m2: float = 1e-4
    filter_gain: float = 1.0
    refractive_index: float = 1.5
    led_power_w: float = 0.02

    def __post_init__(self):
        room = self.room_size
        if min(room.length, room.width, room.height) <= 0:
            raise GeometryError(f"Room dimensions must be positive: {room}")
        for name, grid in (("led_grid", self.led_grid), ("pd_grid", self.pd_grid)):
            if grid.count_x < 1 or grid.count_y < 1:
                raise GeometryError(f"{name} must hold at least one device")
            if grid.spacing <= 0:
                raise GeometryError(f"{name}.spacing must be positive")
            if not 0 <= grid.height <= room.height:
                raise GeometryError(
                    f"{name}.height={grid.height} is outside the room"
                )
        if self.led_grid.height <= self.pd_grid.height:
            raise GeometryError(
                "The LED plane must be above the PD plane"
                f" (got {self.led_grid.height} <= {self.pd_grid.height})"
            )
        if not 0 < self.semi_angle_deg < 90:
            raise DomainError(f"semi_angle_deg={self.semi_angle_deg}")
        if not 0 < self.fov_deg <= 90:
            raise DomainError(f"fov_deg={self.fov_deg}")
        if self.pd_area_m2 <= 0:
            raise DomainError(f"pd_area_m2={self.pd_area_m2}")
        if self.filter_gain <= 0:
            raise DomainError(f"filter_gain={self.filter_gain}")
        if self.refractive_index < 1:
            raise DomainError(f"refractive_index={self.refractive_index}")
        if self.led_power_w <= 0:
            raise DomainError(f"led_power_w={self.led_power_w}")

    @property
    def n_t(self):
        return self.led_grid.count

    @property
    def n_r(self):
        return self.pd_grid.count


def large_scene():
    """Scene producing 256 x 256 channel images."""
    return VlcScene(
        led_grid=GridSpec(16, 16, 0.1, 3.0),
        pd_grid=GridSpec(16, 16, 0.1, 1.0),
    )


@dataclass(frozen=True)
class ChannelMatrix:
    """N_r x N_t matrix of nonnegative LOS gains (rows: PDs, columns: LEDs)."""

    entries: np.ndarray

    def __post_init__(self):
        if self.entries.ndim != 2:
            raise GeometryError("A channel matrix must be two-dimensional")
        if np.any(self.entries < 0):
            raise GeometryError("Channel gains must be nonnegative")

    @property
    def n_r(self):
        return self.entries.shape[0]

    @property
    def n_t(self):
        return self.entries.shape[1]


def _as_result(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x


def lambertian_order(semi_angle_deg):
    """Order m of Lambertian emission for a half-power semi-angle."""
    if not 0 < semi_angle_deg < 90:
        raise DomainError(
            f"The semi-angle must be in (0, 90) degrees, got {semi_angle_deg}"
        )
    return -math.log(2) / math.log(math.cos(math.radians(semi_angle_deg)))


def radiant_intensity(order, irradiance_deg):
    """Lambertian radiant intensity ``(m + 1) / (2 pi) * cos(phi)^m``."""
    if order <= 0:
        raise DomainError(f"The Lambertian order must be positive, got {order}")
    angle = np.asarray(irradiance_deg, dtype=np.float64)
    if np.any((angle < 0) | (angle > 90)):
        raise DomainError("Irradiance angles must be in [0, 90] degrees")
    cos = np.clip(np.cos(np.radians(angle)), 0.0, None)
    return _as_result((order + 1) / (2 * np.pi) * cos**order)


def concentrator_gain(refractive_index, incidence_deg, fov_deg):
    """Optical concentrator gain, zero outside the field of view."""
    if refractive_index < 1:
        raise DomainError(f"refractive_index={refractive_index} is below 1")
    if not 0 < fov_deg <= 90:
        raise DomainError(f"The FOV must be in (0, 90] degrees, got {fov_deg}")
    angle = np.asarray(incidence_deg, dtype=np.float64)
    if np.any((angle < 0) | (angle > 90)):
        raise DomainError("Incidence angles must be in [0, 90] degrees")
    inside = refractive_index**2 / math.sin(math.radians(fov_deg)) ** 2
    return _as_result(np.where(angle <= fov_deg, inside, 0.0))


def channel_gain(
    area,
    distance,
    irradiance_deg,
    incidence_deg,
    order,
    filter_gain,
    refractive_index,
    fov_deg,
):
    """LOS gain between one LED and one PD.

    Every argument may be a scalar or an array; arrays broadcast together.
    """
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance <= 0):
        raise GeometryError("LED and PD positions coincide (distance 0)")
    incidence = np.asarray(incidence_deg, dtype=np.float64)
    gain = (
        area
        / distance**2
        * radiant_intensity(order, irradiance_deg)
        * filter_gain
        * concentrator_gain(refractive_index, incidence, fov_deg)
        * np.clip(np.cos(np.radians(incidence)), 0.0, None)
    )
    return _as_result(gain)


def _grid_positions(grid, room, dx=0.0, dy=0.0):
    xs = room.length / 2 + dx + (np.arange(grid.count_x) - (grid.count_x - 1) / 2) * grid.spacing
    ys = room.width / 2 + dy + (np.arange(grid.count_y) - (grid.count_y - 1) / 2) * grid.spacing
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    gz = np.full(gx.shape, float(grid.height))
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def led_positions(scene):
    """LED positions, shape (N_t, 3), row-major over (count_y, count_x)."""
    return _grid_positions(scene.led_grid, scene.room_size)


def pd_positions(scene):
    """PD positions, shape (N_r, 3), row-major over (count_y, count_x)."""
    offset = scene.pd_plane_offset
    return _grid_positions(scene.pd_grid, scene.room_size, offset.dx, offset.dy)


def vertical_distance(scene):
    return scene.led_grid.height - scene.pd_grid.height


def with_vertical_distance(scene, distance):
    """Move the PD plane so that it sits ``distance`` below the LED plane."""
    height = scene.led_grid.height - distance
    return replace(scene, pd_grid=replace(scene.pd_grid, height=height))


def image_size(scene):
    return (scene.n_r, scene.n_t)


def _check_inside(positions, room, what):
    x, y = positions[:, 0], positions[:, 1]
    outside = (x < 0) | (x > room.length) | (y < 0) | (y > room.width)
    if np.any(outside):
        first = int(np.argmax(outside))
        raise GeometryError(
            f"{what} #{first} at ({x[first]:.3f}, {y[first]:.3f}) m"
            f" lies outside the {room.length} x {room.width} m room"
        )


def build_channel_matrix(scene):
    """Compute the N_r x N_t LOS channel matrix of a scene."""
    leds = led_positions(scene)
    pds = pd_positions(scene)
    _check_inside(leds, scene.room_size, "LED")
    _check_inside(pds, scene.room_size, "PD")

    ray = pds[:, None, :] - leds[None, :, :]
    distance = np.sqrt(np.sum(ray**2, axis=-1))
    if np.any(distance <= 0):
        raise GeometryError("LED and PD positions coincide (distance 0)")

    led_axis = np.array([0.0, 0.0, -1.0])
    pd_axis = np.array([0.0, 0.0, 1.0])
    cos_irr = (ray @ led_axis) / distance
    cos_inc = (-ray @ pd_axis) / distance
    irradiance = np.degrees(np.arccos(np.clip(cos_irr, -1.0, 1.0)))
    incidence = np.degrees(np.arccos(np.clip(cos_inc, -1.0, 1.0)))
    # Parallel facing planes: both angles are measured from the vertical
    if not np.allclose(irradiance, incidence, rtol=0, atol=1e-9):
        raise GeometryError(
            "Irradiance and incidence angles differ for parallel planes"
        )

    entries = channel_gain(
        scene.pd_area_m2,
        distance,
        irradiance,
        incidence,
        lambertian_order(scene.semi_angle_deg),
        scene.filter_gain,
        scene.refractive_index,
        scene.fov_deg,
    )
    logger.debug(
        "Built %dx%d channel matrix (L=%.3f m, %d zero entries)",
        scene.n_r,
        scene.n_t,
        vertical_distance(scene),
        int(np.count_nonzero(entries == 0)),
    )
    return ChannelMatrix(entries=np.asarray(entries, dtype=np.float64))


__all__ = [
    "RoomSize",
    "GridSpec",
    "PlaneOffset",
    "VlcScene",
    "ChannelMatrix",
    "large_scene",
    "lambertian_order",
    "radiant_intensity",
    "concentrator_gain",
    "channel_gain",
    "led_positions",
    "pd_positions",
    "vertical_distance",
    "with_vertical_distance",
    "image_size",
    "build_channel_matrix",
]
