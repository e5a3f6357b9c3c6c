"""Triangle meshes with per-corner UVs, OBJ I/O, and UV-atlas baking."""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class MeshError(ValueError):
    """Invalid mesh data or unusable OBJ input."""


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh with a single UV atlas.

    positions: (N, 3) float64; triangles: (M, 3) int32; uvs: (M, 3, 2)
    per-corner coordinates in [0, 1]^2; normals: (N, 3) unit per-vertex
    vectors. All arrays are read-only after construction. Build instances
    through `from_arrays`, which validates and drops triangles that are
    degenerate in both 3D and UV (`dropped_degenerate` counts them).
    """

    positions: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray
    normals: np.ndarray
    dropped_degenerate: int = 0
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False, repr=False)

    @classmethod
    def from_arrays(cls, positions, triangles, uvs, normals=None) -> "TriMesh":
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        uvs = np.ascontiguousarray(uvs, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise MeshError(f"positions must be (N, 3), got {positions.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError(f"triangles must be (M, 3), got {triangles.shape}")
        if uvs.shape != (triangles.shape[0], 3, 2):
            raise MeshError(f"uvs must be (M, 3, 2), got {uvs.shape}")
        if positions.shape[0] == 0 or triangles.shape[0] == 0:
            raise MeshError("mesh has no geometry")
        if triangles.min(initial=0) < 0 or triangles.max(initial=-1) >= positions.shape[0]:
            raise MeshError("triangle index out of range")
        if not np.isfinite(positions).all() or not np.isfinite(uvs).all():
            raise MeshError("non-finite vertex data")
        if uvs.min() < 0.0 or uvs.max() > 1.0:
            raise MeshError("UV coordinates outside [0, 1]^2 (wrapping is not supported)")

        # drop triangles degenerate in both 3D and UV
        p = positions[triangles]
        area3 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
        eu = uvs[:, 1] - uvs[:, 0]
        ev = uvs[:, 2] - uvs[:, 0]
        area_uv = np.abs(eu[:, 0] * ev[:, 1] - eu[:, 1] * ev[:, 0])
        good = (area3 > 0.0) | (area_uv > 0.0)
        dropped = int((~good).sum())
        if not good.all():
            triangles = np.ascontiguousarray(triangles[good])
            uvs = np.ascontiguousarray(uvs[good])
        if triangles.shape[0] == 0:
            raise MeshError("all triangles are degenerate")

        if normals is None:
            normals = _vertex_normals(positions, triangles)
        else:
            normals = np.ascontiguousarray(normals, dtype=np.float64)
            if normals.shape != positions.shape:
                raise MeshError(f"normals must match positions, got {normals.shape}")
            n = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = np.where(n > 1e-12, normals / np.where(n == 0, 1, n), [0.0, 0.0, 1.0])

        for a in (positions, triangles, uvs, normals):
            a.flags.writeable = False
        return cls(
            positions=positions,
            triangles=triangles,
            uvs=uvs,
            normals=normals,
            dropped_degenerate=dropped,
        )

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def facet_normals(self) -> np.ndarray:
        """(M, 3) unit geometric normals (zero for 3D-degenerate triangles)."""
        p = self.positions[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        return np.where(ln > 1e-20, n / np.where(ln == 0, 1, ln), 0.0)


def _vertex_normals(positions, triangles) -> np.ndarray:
    p = positions[triangles]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # area-weighted
    normals = np.zeros_like(positions)
    for c in range(3):
        np.add.at(normals, triangles[:, c], fn)
    n = np.linalg.norm(normals, axis=1, keepdims=True)
    return np.where(n > 1e-12, normals / np.where(n == 0, 1, n), [0.0, 0.0, 1.0])


def normalize_mesh(mesh: TriMesh) -> TriMesh:
    """Center the bounding box at the origin and scale the max half-extent to 1."""
    lo, hi = mesh.bounds
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    scale = half.max()
    if scale <= 0.0:
        raise MeshError("mesh has zero extent")
    positions = (mesh.positions - center) / scale
    return TriMesh.from_arrays(positions, mesh.triangles, mesh.uvs, mesh.normals)


# ---------------------------------------------------------------------------
# Wavefront OBJ


def load_obj(path) -> TriMesh:
    """Parse an OBJ file (v/vt/vn/f records, 1-based indices) into a TriMesh.

    Faces with more than three corners are fan-triangulated. Every face
    corner must carry a vt reference; meshes without texture coordinates are
    rejected since every downstream stage addresses the UV atlas.
    """
    verts: list[list[float]] = []
    texco: list[list[float]] = []
    vnorms: list[list[float]] = []
    corners: list[list[tuple[int, int, int]]] = []
    face_lines: list[int] = []

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            tag = tokens[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in tokens[1:4]])
                elif tag == "vt":
                    texco.append([float(x) for x in tokens[1:3]])
                elif tag == "vn":
                    vnorms.append([float(x) for x in tokens[1:4]])
                elif tag == "f":
                    face = [_parse_corner(tok, lineno) for tok in tokens[1:]]
                    if len(face) < 3:
                        raise MeshError(f"line {lineno}: face with fewer than 3 corners")
                    corners.append(face)
                    face_lines.append(lineno)
            except MeshError:
                raise
            except (ValueError, IndexError) as exc:
                raise MeshError(f"line {lineno}: cannot parse {tag!r} record: {exc}") from exc

    if not verts or not corners:
        raise MeshError(f"{path}: no geometry found")
    if not texco:
        raise MeshError(f"{path}: mesh has no UV atlas")

    def resolve(idx: int, count: int, kind: str, lineno: int) -> int:
        if idx == 0:
            raise MeshError(f"line {lineno}: OBJ {kind} index 0 (indices are 1-based)")
        r = idx - 1 if idx > 0 else count + idx
        if not 0 <= r < count:
            raise MeshError(f"line {lineno}: {kind} index {idx} out of range (have {count})")
        return r

    tris: list[list[int]] = []
    tri_uvs: list[list[list[float]]] = []
    normals_acc: dict[int, list[float]] = {}
    for face, lineno in zip(corners, face_lines):
        resolved = []
        for vi, ti, ni in face:
            if ti is None:
                raise MeshError(f"line {lineno}: face corner without a vt index")
            v = resolve(vi, len(verts), "vertex", lineno)
            t = resolve(ti, len(texco), "texture", lineno)
            if ni is not None:
                n = resolve(ni, len(vnorms), "normal", lineno)
                normals_acc[v] = vnorms[n]
            resolved.append((v, t))
        for i in range(1, len(resolved) - 1):
            tri = [resolved[0], resolved[i], resolved[i + 1]]
            tris.append([c[0] for c in tri])
            tri_uvs.append([texco[c[1]] for c in tri])

    normals = None
    if len(normals_acc) == len(verts):
        normals = np.array([normals_acc[i] for i in range(len(verts))])
    return TriMesh.from_arrays(np.array(verts), np.array(tris), np.array(tri_uvs), normals)


def _parse_corner(token: str, lineno: int) -> tuple[int, int | None, int | None]:
    parts = token.split("/")
    try:
        vi = int(parts[0])
        ti = int(parts[1]) if len(parts) > 1 and parts[1] else None
        ni = int(parts[2]) if len(parts) > 2 and parts[2] else None
    except ValueError as exc:
        raise MeshError(f"line {lineno}: bad face corner {token!r}") from exc
    return vi, ti, ni


def save_obj(mesh: TriMesh, path) -> None:
    """Write a TriMesh as OBJ with per-corner vt records (exact round-trip)."""
    uv_index: dict[tuple[float, float], int] = {}
    uv_list: list[tuple[float, float]] = []
    with open(path, "w", encoding="utf-8") as fh:
        for p in mesh.positions:
            fh.write(f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        face_uv_ids = []
        for m in range(mesh.triangles.shape[0]):
            ids = []
            for c in range(3):
                key = (float(mesh.uvs[m, c, 0]), float(mesh.uvs[m, c, 1]))
                if key not in uv_index:
                    uv_index[key] = len(uv_list)
                    uv_list.append(key)
                ids.append(uv_index[key])
            face_uv_ids.append(ids)
        for u, v in uv_list:
            fh.write(f"vt {u!r} {v!r}\n")
        for m, ids in enumerate(face_uv_ids):
            t = mesh.triangles[m]
            fh.write(f"f {t[0] + 1}/{ids[0] + 1} {t[1] + 1}/{ids[1] + 1} {t[2] + 1}/{ids[2] + 1}\n")


# ---------------------------------------------------------------------------
# UV atlas baking


@dataclass(frozen=True)
class UvAtlasMaps:
    """Per-texel surface geometry sampled at texel centers ((i + 0.5) / res).

    position_map: (res, res, 3) 3D point per texel; normal_map: (res, res, 3)
    unit normal; validity: (res, res) bool. Texels outside every UV chart are
    invalid and hold zero sentinels. Row i spans v in [i/res, (i+1)/res), so
    the array is addressed [v_row, u_col]. contested_texels counts texels
    claimed by more than one triangle (last writer wins).
    """

    position_map: np.ndarray
    normal_map: np.ndarray
    validity: np.ndarray
    resolution: int
    contested_texels: int
    triangle_count: int
    token: str = field(default_factory=lambda: uuid.uuid4().hex, compare=False, repr=False)

    @property
    def valid_count(self) -> int:
        return int(self.validity.sum())


def bake_atlas_maps(mesh: TriMesh, resolution: int) -> UvAtlasMaps:
    """Rasterize every triangle in UV space and interpolate 3D position/normal."""
    if resolution < 4:
        raise MeshError(f"atlas resolution must be >= 4, got {resolution}")
    tu = np.ascontiguousarray(mesh.uvs[:, :, 0] * resolution)
    tv = np.ascontiguousarray(mesh.uvs[:, :, 1] * resolution)
    tri_id, b0, b1, write_count = _kernels.bake_triangles(tu, tv, resolution)

    validity = tri_id >= 0
    position = np.zeros((resolution, resolution, 3), dtype=np.float64)
    normal = np.zeros((resolution, resolution, 3), dtype=np.float64)
    if validity.any():
        t = tri_id[validity]
        w0 = b0[validity][:, None]
        w1 = b1[validity][:, None]
        w2 = 1.0 - b0[validity][:, None] - b1[validity][:, None]
        corners = mesh.positions[mesh.triangles[t]]  # (K, 3, 3)
        position[validity] = w0 * corners[:, 0] + w1 * corners[:, 1] + w2 * corners[:, 2]
        vn = mesh.normals[mesh.triangles[t]]
        n = w0 * vn[:, 0] + w1 * vn[:, 1] + w2 * vn[:, 2]
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        normal[validity] = np.where(ln > 1e-12, n / np.where(ln == 0, 1, ln), [0.0, 0.0, 1.0])

    contested = int((write_count > 1).sum())
    for a in (position, normal, validity):
        a.flags.writeable = False
    return UvAtlasMaps(
        position_map=position,
        normal_map=normal,
        validity=validity,
        resolution=resolution,
        contested_texels=contested,
        triangle_count=mesh.triangles.shape[0],
    )
