"""Procedural test meshes: quad, cube, icosphere, parallel quads.

Each builder returns a TriMesh with a complete single-atlas UV layout, so
they can exercise the full pipeline without any asset files. Charts are
inset inside their cells where adjacent charts would otherwise contest
boundary texels.
"""

from __future__ import annotations

import numpy as np

from .meshes import TriMesh


def quad(half_size: float = 1.0) -> TriMesh:
    """XY-plane square facing +z; UV spans the whole atlas."""
    s = half_size
    positions = np.array(
        [[-s, -s, 0.0], [s, -s, 0.0], [s, s, 0.0], [-s, s, 0.0]]
    )
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    corner_uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    uvs = corner_uv[triangles]
    normals = np.tile([0.0, 0.0, 1.0], (4, 1))
    return TriMesh.from_arrays(positions, triangles, uvs, normals)


def cube(half_size: float = 1.0) -> TriMesh:
    """Axis-aligned cube with one UV chart per face in a 3x2 grid.

    Vertices are split per face so vertex normals equal face normals.
    """
    s = half_size
    # each face: 4 corners in CCW order viewed from outside
    faces = [
        ([+1, 0, 0], [(s, -s, -s), (s, s, -s), (s, s, s), (s, -s, s)]),
        ([-1, 0, 0], [(-s, -s, s), (-s, s, s), (-s, s, -s), (-s, -s, -s)]),
        ([0, +1, 0], [(-s, s, -s), (-s, s, s), (s, s, s), (s, s, -s)]),
        ([0, -1, 0], [(-s, -s, s), (-s, -s, -s), (s, -s, -s), (s, -s, s)]),
        ([0, 0, +1], [(-s, -s, s), (s, -s, s), (s, s, s), (-s, s, s)]),
        ([0, 0, -1], [(s, -s, -s), (-s, -s, -s), (-s, s, -s), (s, s, -s)]),
    ]
    positions, normals, triangles, uvs = [], [], [], []
    for f, (n, corners) in enumerate(faces):
        cell_u, cell_v = f % 3, f // 3
        u0, v0 = cell_u / 3.0, cell_v / 2.0
        cell_uv = [
            (u0, v0),
            (u0 + 1.0 / 3.0, v0),
            (u0 + 1.0 / 3.0, v0 + 0.5),
            (u0, v0 + 0.5),
        ]
        base = len(positions)
        positions.extend(corners)
        normals.extend([n] * 4)
        for a, b, c in ((0, 1, 2), (0, 2, 3)):
            triangles.append([base + a, base + b, base + c])
            uvs.append([cell_uv[a], cell_uv[b], cell_uv[c]])
    return TriMesh.from_arrays(
        np.array(positions, dtype=np.float64),
        np.array(triangles),
        np.array(uvs),
        np.array(normals, dtype=np.float64),
    )


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    """Subdivided icosahedron (20 * 4^s faces) with one UV chart per face.

    subdivisions=2 gives the 320-face sphere used throughout the test suite.
    Vertex normals are exact sphere normals.
    """
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    verts = [v for v in verts]
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt

    positions = np.array(verts) * radius
    triangles = np.array(faces, dtype=np.int64)
    # pack each face chart into its own grid cell, inset to keep charts apart
    cells = int(np.ceil(np.sqrt(len(faces))))
    inset = 0.1 / cells
    uvs = np.zeros((len(faces), 3, 2))
    for m in range(len(faces)):
        cu, cv = (m % cells) / cells, (m // cells) / cells
        uvs[m] = [
            [cu + inset, cv + inset],
            [cu + 1.0 / cells - inset, cv + inset],
            [cu + inset, cv + 1.0 / cells - inset],
        ]
    sphere_normals = np.array(verts)
    return TriMesh.from_arrays(positions, triangles, uvs, sphere_normals)


def parallel_quads(include_front: bool = True) -> TriMesh:
    """Large back quad at z=-0.5 and, optionally, a smaller front quad at
    z=+0.5 occluding its center. Both face +z; the back chart occupies the
    same UV region with or without the front quad.
    """
    positions = [
        [-1.0, -1.0, -0.5], [1.0, -1.0, -0.5], [1.0, 1.0, -0.5], [-1.0, 1.0, -0.5],
    ]
    triangles = [[0, 1, 2], [0, 2, 3]]
    back_uv = np.array([[0.0, 0.0], [0.45, 0.0], [0.45, 0.45], [0.0, 0.45]])
    uvs = [back_uv[t].tolist() for t in triangles]
    if include_front:
        positions += [
            [-0.6, -0.6, 0.5], [0.6, -0.6, 0.5], [0.6, 0.6, 0.5], [-0.6, 0.6, 0.5],
        ]
        front_uv = np.array([[0.55, 0.55], [1.0, 0.55], [1.0, 1.0], [0.55, 1.0]])
        for t in ([4, 5, 6], [4, 6, 7]):
            triangles.append(t)
            uvs.append(front_uv[[t[0] - 4, t[1] - 4, t[2] - 4]].tolist())
    normals = np.tile([0.0, 0.0, 1.0], (len(positions), 1))
    return TriMesh.from_arrays(
        np.array(positions), np.array(triangles), np.array(uvs), normals
    )


BUILTIN_MESHES = {
    "quad": quad,
    "cube": cube,
    "icosphere": icosphere,
}
