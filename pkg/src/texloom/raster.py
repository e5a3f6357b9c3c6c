"""Forward rendering: z-buffered rasterization of a mesh into view images.

Produces depth, facet normals, UV coordinates, coverage, and the cosine
between the surface normal and the direction to the eye; colors are sampled
from a texture when one is given. One sample per pixel center, no
anti-aliasing, back faces culled, so the pixel-to-texel mapping stays exact
and invertible for the reprojection round trip.

Triangles crossing the near plane are discarded rather than clipped; keep
geometry in front of the camera.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .cameras import Camera, CameraRig, Perspective
from .grids import GridImage, default_layout
from .meshes import TriMesh
from .textures import TextureMap, sample_bilinear, sample_nearest

BACKGROUND_COLOR = 1.0  # white, matching the generation convention
BACKGROUND_DEPTH = np.inf


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class RenderOutputs:
    """Per-pixel channels of one rendered view.

    coverage false => depth is +inf and the other channels hold background
    values (white color, zero normal/uv/view_cos). tri_id is the index of
    the visible triangle (-1 on background). color and color_valid are None
    when no texture was supplied; color_valid marks pixels whose sampled
    texel is valid in the texture.
    """

    depth: np.ndarray
    normal: np.ndarray
    uv: np.ndarray
    coverage: np.ndarray
    view_cos: np.ndarray
    tri_id: np.ndarray
    color: np.ndarray | None = None
    color_valid: np.ndarray | None = None

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.depth.shape
        return w, h


# geometry depends only on (mesh, camera); cache it so texture lookups and
# repeated sync steps reduce to gathers
_GEOMETRY_CACHE: OrderedDict[tuple[str, str], RenderOutputs] = OrderedDict()
_GEOMETRY_CACHE_LIMIT = 64


def _geometry(mesh: TriMesh, camera: Camera) -> RenderOutputs:
    key = (mesh.token, camera.token)
    hit = _GEOMETRY_CACHE.get(key)
    if hit is not None:
        _GEOMETRY_CACHE.move_to_end(key)
        return hit

    w, h = camera.resolution
    px, py, z = camera.project(mesh.positions)
    tris = mesh.triangles

    # triangle-constant front-face test: dot(n, eye - v0) is the same for
    # every point of the supporting plane, so culling is exact
    p = mesh.positions[tris]
    n_raw = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    d_plane = np.einsum("ij,ij->i", n_raw, camera.eye[None, :] - p[:, 0])
    z_tri = z[tris]
    keep = ((d_plane > 0.0) & (z_tri.min(axis=1) > camera.near)).astype(np.uint8)

    persp = isinstance(camera.projection, Perspective)
    depth, tri_id, b0, b1 = _kernels.raster_triangles(
        np.ascontiguousarray(px),
        np.ascontiguousarray(py),
        np.ascontiguousarray(z),
        np.ascontiguousarray(tris),
        np.ascontiguousarray(keep),
        persp,
        w,
        h,
        camera.near,
        camera.far,
    )

    coverage = tri_id >= 0
    uv = np.zeros((h, w, 2), dtype=np.float64)
    normal = np.zeros((h, w, 3), dtype=np.float64)
    view_cos = np.zeros((h, w), dtype=np.float64)
    if coverage.any():
        t = tri_id[coverage]
        w0 = b0[coverage][:, None]
        w1 = b1[coverage][:, None]
        w2 = 1.0 - w0 - w1
        uv[coverage] = w0 * mesh.uvs[t, 0] + w1 * mesh.uvs[t, 1] + w2 * mesh.uvs[t, 2]
        fn = mesh.facet_normals()
        normal[coverage] = fn[t]
        pos = (
            w0 * mesh.positions[tris[t, 0]]
            + w1 * mesh.positions[tris[t, 1]]
            + w2 * mesh.positions[tris[t, 2]]
        )
        dist = np.linalg.norm(camera.eye[None, :] - pos, axis=1)
        d_hat = np.einsum("ij,ij->i", fn[t], camera.eye[None, :] - mesh.positions[tris[t, 0]])
        view_cos[coverage] = np.clip(d_hat / np.maximum(dist, 1e-300), -1.0, 1.0)

    for a in (depth, tri_id, coverage, uv, normal, view_cos):
        a.flags.writeable = False  # cached buffers are shared between calls
    out = RenderOutputs(
        depth=depth, normal=normal, uv=uv, coverage=coverage, view_cos=view_cos, tri_id=tri_id
    )
    _GEOMETRY_CACHE[key] = out
    if len(_GEOMETRY_CACHE) > _GEOMETRY_CACHE_LIMIT:
        _GEOMETRY_CACHE.popitem(last=False)
    return out


def rasterize(
    mesh: TriMesh,
    camera: Camera,
    texture: TextureMap | None = None,
    sampling: str = "nearest",
) -> RenderOutputs:
    """Render one view; nearest texture sampling by default (exact gather)."""
    if sampling not in ("nearest", "bilinear"):
        raise RasterError(f"unknown sampling mode {sampling!r}")
    geo = _geometry(mesh, camera)
    if texture is None:
        return geo
    if texture.resolution == 0:
        raise RasterError("texture has zero resolution")

    sampler = sample_nearest if sampling == "nearest" else sample_bilinear
    color = np.full(geo.depth.shape + (3,), BACKGROUND_COLOR, dtype=np.float64)
    color_valid = np.zeros(geo.depth.shape, dtype=bool)
    if geo.coverage.any():
        texel_color, texel_valid = sampler(texture, geo.uv[geo.coverage])
        cov_color = np.where(texel_valid[:, None], texel_color, 0.0)
        color[geo.coverage] = cov_color
        color_valid[geo.coverage] = texel_valid
    return RenderOutputs(
        depth=geo.depth,
        normal=geo.normal,
        uv=geo.uv,
        coverage=geo.coverage,
        view_cos=geo.view_cos,
        tri_id=geo.tri_id,
        color=color,
        color_valid=color_valid,
    )


def render_views(
    texture: TextureMap,
    mesh: TriMesh,
    rig: CameraRig,
    sampling: str = "nearest",
    layout: tuple[int, int] | None = None,
) -> GridImage:
    """Render every rig camera and assemble the tiles into one grid image."""
    rows, cols = layout or default_layout(len(rig))
    if rows * cols != len(rig):
        raise RasterError(f"{len(rig)} views do not fill a {rows}x{cols} grid")
    tiles = np.stack(
        [rasterize(mesh, cam, texture, sampling).color for cam in rig]
    )
    return GridImage(tiles=tiles, rows=rows, cols=cols)


def render_depth_grid(
    mesh: TriMesh | None,
    rig: CameraRig,
    layout: tuple[int, int] | None = None,
) -> GridImage:
    """Depth conditioning grid: inverse depth scaled so the global foreground
    max is 1; background texels are 0. An empty mesh yields an all-zero grid.
    """
    rows, cols = layout or default_layout(len(rig))
    if rows * cols != len(rig):
        raise RasterError(f"{len(rig)} views do not fill a {rows}x{cols} grid")
    w, h = rig[0].resolution
    tiles = np.zeros((len(rig), h, w, 1), dtype=np.float64)
    if mesh is not None:
        for i, cam in enumerate(rig):
            geo = _geometry(mesh, cam)
            fg = geo.coverage
            tiles[i, fg, 0] = 1.0 / geo.depth[fg]
        peak = tiles.max()
        if peak > 0.0:
            tiles /= peak
    return GridImage(tiles=tiles, rows=rows, cols=cols)
