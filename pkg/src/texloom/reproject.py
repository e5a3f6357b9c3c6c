"""Inverse rendering: lift view images onto the UV atlas as partial textures.

Gather formulation: every valid atlas texel projects its 3D position into
the camera and pulls the nearest image pixel, subject to visibility tests
(frustum, z-buffer occlusion, grazing-angle cutoff, and a nearest-sample
ownership check that guarantees the rasterize -> reproject round trip is
exact). The per-texel geometry is independent of image content and cached
per (mesh, camera, atlas, tolerances), so repeated reprojection during
sampling reduces to indexed gathers.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .cameras import Camera, CameraRig
from .grids import GridImage
from .meshes import TriMesh, UvAtlasMaps
from .raster import rasterize
from .textures import uv_to_texel

DEFAULT_DEPTH_TOLERANCE = 1e-2
DEFAULT_COS_CUTOFF = 0.087  # reject texels seen at more than ~85 degrees
DEPTH_EDGE_SCALE = 0.05  # relative depth change per pixel mapped to edge 0.5


class ReprojectError(ValueError):
    pass


@dataclass(frozen=True)
class PartialTexture:
    """One view reprojected into UV space.

    colors: (res, res, 3); covered: (res, res) bool; view_cos: (res, res) in
    [0, 1] (cosine between the texel normal and the direction to the eye);
    depth_edge: (res, res) in [0, 1], the saturated z-buffer gradient at the
    texel's source pixel (1 at silhouettes). Uncovered texels hold zeros and
    must be excluded from every reduction.
    """

    colors: np.ndarray
    covered: np.ndarray
    view_cos: np.ndarray
    depth_edge: np.ndarray
    view_id: int = 0

    @property
    def resolution(self) -> int:
        return self.colors.shape[0]


def depth_edge_image(depth: np.ndarray, rel_scale: float = DEPTH_EDGE_SCALE) -> np.ndarray:
    """Screen-space depth-gradient indicator in [0, 1].

    g / (g + rel_scale * z) where g is the largest absolute one-sided depth
    difference at the pixel; background neighbors (infinite depth) saturate
    to 1, flagging silhouettes.
    """
    h, w = depth.shape
    g = np.zeros((h, w), dtype=np.float64)
    for axis in (0, 1):
        with np.errstate(invalid="ignore"):
            d = np.abs(np.diff(depth, axis=axis))
        d = np.nan_to_num(d, nan=np.inf)  # inf - inf between background pixels
        if axis == 0:
            g[1:, :] = np.maximum(g[1:, :], d)
            g[:-1, :] = np.maximum(g[:-1, :], d)
        else:
            g[:, 1:] = np.maximum(g[:, 1:], d)
            g[:, :-1] = np.maximum(g[:, :-1], d)
    fg = np.isfinite(depth)
    out = np.zeros((h, w), dtype=np.float64)
    finite_g = np.isfinite(g) & fg
    out[finite_g] = g[finite_g] / (g[finite_g] + rel_scale * depth[finite_g])
    out[fg & ~np.isfinite(g)] = 1.0
    return out


@dataclass(frozen=True)
class TexelViewMap:
    """Texel -> source pixel mapping for one (mesh, camera, atlas) triple."""

    covered: np.ndarray  # (res, res) bool
    src_flat: np.ndarray  # (res, res) intp, flat pixel index (0 where uncovered)
    view_cos: np.ndarray  # (res, res) float64, clamped to [0, 1]
    depth_edge: np.ndarray  # (res, res) float64


_MAP_CACHE: OrderedDict[tuple, TexelViewMap] = OrderedDict()
_MAP_CACHE_LIMIT = 64


def _texel_map(
    mesh: TriMesh,
    camera: Camera,
    atlas: UvAtlasMaps,
    depth_tolerance: float,
    cos_cutoff: float,
    sample_consistency: bool,
) -> TexelViewMap:
    key = (
        mesh.token,
        camera.token,
        atlas.token,
        float(depth_tolerance),
        float(cos_cutoff),
        bool(sample_consistency),
    )
    hit = _MAP_CACHE.get(key)
    if hit is not None:
        _MAP_CACHE.move_to_end(key)
        return hit

    if atlas.triangle_count != mesh.triangles.shape[0]:
        raise ReprojectError(
            f"atlas was baked from a different mesh "
            f"({atlas.triangle_count} vs {mesh.triangles.shape[0]} triangles)"
        )
    res = atlas.resolution
    w, h = camera.resolution
    geo = rasterize(mesh, camera)
    edge_img = depth_edge_image(geo.depth)

    covered = np.zeros((res, res), dtype=bool)
    src_flat = np.zeros((res, res), dtype=np.intp)
    view_cos = np.zeros((res, res), dtype=np.float64)
    depth_edge = np.zeros((res, res), dtype=np.float64)

    valid = atlas.validity
    if valid.any():
        pos = atlas.position_map[valid]
        px, py, z = camera.project(pos)
        in_frustum = (
            (z > camera.near)
            & (z < camera.far)
            & (px >= 0.0)
            & (px < w)
            & (py >= 0.0)
            & (py < h)
        )
        ix = np.clip(np.floor(px), 0, w - 1).astype(np.intp)
        iy = np.clip(np.floor(py), 0, h - 1).astype(np.intp)
        zbuf = geo.depth[iy, ix]
        visible = in_frustum & np.isfinite(zbuf)
        visible &= np.abs(z - zbuf) <= depth_tolerance * z

        normal = atlas.normal_map[valid]
        to_eye = camera.eye[None, :] - pos
        dist = np.linalg.norm(to_eye, axis=1)
        cos = np.einsum("ij,ij->i", normal, to_eye) / np.maximum(dist, 1e-300)
        visible &= cos > cos_cutoff

        if sample_consistency:
            # the source pixel must actually sample this texel, otherwise the
            # gathered color belongs to a neighbor and the round trip breaks
            rows, cols = np.nonzero(valid)
            prow, pcol = uv_to_texel(geo.uv[iy, ix], res)
            visible &= (prow == rows) & (pcol == cols)

        covered[valid] = visible
        flat = iy * w + ix
        src_flat[valid] = np.where(visible, flat, 0)
        view_cos[valid] = np.where(visible, np.clip(cos, 0.0, 1.0), 0.0)
        depth_edge[valid] = np.where(visible, edge_img[iy, ix], 0.0)

    for a in (covered, src_flat, view_cos, depth_edge):
        a.flags.writeable = False
    out = TexelViewMap(covered=covered, src_flat=src_flat, view_cos=view_cos, depth_edge=depth_edge)
    _MAP_CACHE[key] = out
    if len(_MAP_CACHE) > _MAP_CACHE_LIMIT:
        _MAP_CACHE.popitem(last=False)
    return out


def reproject(
    image: np.ndarray,
    camera: Camera,
    mesh: TriMesh,
    atlas: UvAtlasMaps,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
    cos_cutoff: float = DEFAULT_COS_CUTOFF,
    sample_consistency: bool = True,
    view_id: int = 0,
) -> PartialTexture:
    """Lift one view image onto the atlas (nearest-pixel gather)."""
    image = np.asarray(image, dtype=np.float64)
    w, h = camera.resolution
    if image.shape[:2] != (h, w):
        raise ReprojectError(
            f"image resolution {image.shape[1]}x{image.shape[0]} does not match "
            f"camera resolution {w}x{h}"
        )
    if image.ndim == 2:
        image = image[..., None]
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)

    m = _texel_map(mesh, camera, atlas, depth_tolerance, cos_cutoff, sample_consistency)
    colors = np.zeros((atlas.resolution, atlas.resolution, 3), dtype=np.float64)
    flat = image.reshape(-1, 3)
    colors[m.covered] = flat[m.src_flat[m.covered]]
    return PartialTexture(
        colors=colors,
        covered=m.covered.copy(),
        view_cos=m.view_cos.copy(),
        depth_edge=m.depth_edge.copy(),
        view_id=view_id,
    )


def reproject_grid(
    grid: GridImage,
    rig: CameraRig,
    mesh: TriMesh,
    atlas: UvAtlasMaps,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
    cos_cutoff: float = DEFAULT_COS_CUTOFF,
    sample_consistency: bool = True,
) -> list[PartialTexture]:
    """Split a grid image and reproject each tile with its rig camera."""
    if grid.view_count != len(rig):
        raise ReprojectError(
            f"grid has {grid.view_count} tiles but the rig has {len(rig)} cameras"
        )
    return [
        reproject(
            grid.tiles[i],
            rig[i],
            mesh,
            atlas,
            depth_tolerance=depth_tolerance,
            cos_cutoff=cos_cutoff,
            sample_consistency=sample_consistency,
            view_id=i,
        )
        for i in range(len(rig))
    ]
