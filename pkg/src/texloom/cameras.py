"""Cameras and surround rigs.

Camera space: x right, y up, z along the viewing direction (depth is the
camera-space z of a point, positive in front of the eye). Pixel (0, 0) is
the top-left corner; samples are taken at pixel centers (ix + 0.5, iy + 0.5).
"""

from __future__ import annotations

import math
import uuid
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Perspective:
    fov_y_deg: float = 40.0

    def __post_init__(self):
        if not 0.0 < self.fov_y_deg < 180.0:
            raise CameraError(f"field of view must be in (0, 180), got {self.fov_y_deg}")


@dataclass(frozen=True)
class Orthographic:
    half_height: float = 1.2

    def __post_init__(self):
        if self.half_height <= 0.0:
            raise CameraError(f"half height must be positive, got {self.half_height}")


@dataclass(frozen=True)
class Camera:
    eye: np.ndarray
    target: np.ndarray
    up: np.ndarray
    projection: Perspective | Orthographic
    resolution: tuple[int, int]  # (width, height)
    near: float = 0.05
    far: float = 50.0
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False, repr=False)

    def __post_init__(self):
        for name in ("eye", "target", "up"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise CameraError(f"resolution must be positive, got {self.resolution}")
        if not 0.0 < self.near < self.far:
            raise CameraError(f"need 0 < near < far, got near={self.near} far={self.far}")
        self.basis  # validates orthonormality

    @cached_property
    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right/up/forward unit vectors; raises on a degenerate look-at."""
        fwd = self.target - self.eye
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise CameraError("camera eye and target coincide")
        fwd = fwd / n
        right = np.cross(fwd, self.up)
        rn = np.linalg.norm(right)
        if rn < 1e-8:
            raise CameraError("camera up vector is parallel to the view direction")
        right = right / rn
        up = np.cross(right, fwd)
        # orthonormality within 1e-6
        g = np.stack([right, up, fwd])
        if not np.allclose(g @ g.T, np.eye(3), atol=1e-6):
            raise CameraError("derived camera rotation is not orthonormal")
        for v in (right, up, fwd):
            v.flags.writeable = False
        return right, up, fwd

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def aspect(self) -> float:
        return self.resolution[0] / self.resolution[1]

    def view_dir(self) -> np.ndarray:
        return self.basis[2]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> camera-space (N, 3); z is depth."""
        right, up, fwd = self.basis
        d = np.asarray(points, dtype=np.float64) - self.eye
        return d @ np.stack([right, up, fwd]).T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points (N, 3) -> pixel x, pixel y, depth.

        Perspective projection divides by depth; callers must cull points at
        or behind the near plane before trusting the pixel coordinates.
        """
        cam = self.to_camera(points)
        xc, yc, zc = cam[:, 0], cam[:, 1], cam[:, 2]
        w, h = self.resolution
        if isinstance(self.projection, Perspective):
            tan_half = math.tan(math.radians(self.projection.fov_y_deg) / 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                x_ndc = xc / (zc * tan_half * self.aspect)
                y_ndc = yc / (zc * tan_half)
        else:
            hh = self.projection.half_height
            x_ndc = xc / (hh * self.aspect)
            y_ndc = yc / hh
        px = (x_ndc + 1.0) * 0.5 * w
        py = (1.0 - y_ndc) * 0.5 * h
        return px, py, zc

    def pixel_rays(self, ix: np.ndarray, iy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Rays through pixel centers, scaled so depth equals the ray parameter.

        Returns (origins, directions) with directions having unit forward
        component: a point origin + s * direction has camera depth s.
        """
        right, up, fwd = self.basis
        w, h = self.resolution
        x_ndc = 2.0 * (ix + 0.5) / w - 1.0
        y_ndc = 1.0 - 2.0 * (iy + 0.5) / h
        if isinstance(self.projection, Perspective):
            tan_half = math.tan(math.radians(self.projection.fov_y_deg) / 2.0)
            dirs = (
                fwd[None, :]
                + (x_ndc * tan_half * self.aspect)[:, None] * right[None, :]
                + (y_ndc * tan_half)[:, None] * up[None, :]
            )
            origins = np.broadcast_to(self.eye, dirs.shape).copy()
        else:
            hh = self.projection.half_height
            origins = (
                self.eye[None, :]
                + (x_ndc * hh * self.aspect)[:, None] * right[None, :]
                + (y_ndc * hh)[:, None] * up[None, :]
            )
            dirs = np.broadcast_to(fwd, origins.shape).copy()
        return origins, dirs


@dataclass(frozen=True)
class CameraRig:
    """A ring of cameras at evenly spaced azimuths, all aimed at the origin."""

    cameras: tuple[Camera, ...]
    elevation_deg: float
    distance: float
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i: int) -> Camera:
        return self.cameras[i]


def make_surround_rig(
    view_count: int = 4,
    elevation_deg: float = 0.0,
    distance: float = 2.0,
    resolution: int = 512,
    projection: Perspective | Orthographic | None = None,
    near: float = 0.05,
    far: float = 50.0,
) -> CameraRig:
    """Cameras at azimuths k*360/V looking at the origin.

    Azimuth 0 puts the eye on +x; azimuth 90 on +z; y is up. The default
    projection is a 40-degree perspective at distance 2, which keeps a
    unit-normalized mesh fully in frame.
    """
    if view_count < 1:
        raise CameraError(f"view count must be >= 1, got {view_count}")
    if distance <= 0.0:
        raise CameraError(f"distance must be positive, got {distance}")
    if resolution <= 0:
        raise CameraError(f"resolution must be positive, got {resolution}")
    if not -89.0 <= elevation_deg <= 89.0:
        raise CameraError(f"elevation must be in [-89, 89], got {elevation_deg}")
    if projection is None:
        projection = Perspective(40.0)

    el = math.radians(elevation_deg)
    cams = []
    for k in range(view_count):
        az = math.radians(360.0 * k / view_count)
        eye = distance * np.array(
            [math.cos(el) * math.cos(az), math.sin(el), math.cos(el) * math.sin(az)]
        )
        cams.append(
            Camera(
                eye=eye,
                target=np.zeros(3),
                up=np.array([0.0, 1.0, 0.0]),
                projection=projection,
                resolution=(resolution, resolution),
                near=near,
                far=far,
            )
        )
    return CameraRig(cameras=tuple(cams), elevation_deg=elevation_deg, distance=distance)
