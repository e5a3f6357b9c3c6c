"""Pure-NumPy reference implementations of the hot geometry kernels.

The compiled backend (_native.pyx) must stay numerically identical to this
module: same formulas, same left-associative evaluation order, strict
comparisons in the same places. Any change here must be mirrored there.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "reference"


def raster_triangles(px, py, z, tris, keep, persp, width, height, near, far):
    """Z-buffered triangle fill over pixel centers.

    px, py: (N,) projected pixel coordinates per vertex; z: (N,) camera-space
    depth per vertex; tris: (M, 3) int32 vertex indices; keep: (M,) uint8
    triangle mask (back-facing / near-clipped triangles already excluded).

    Returns (depth, tri_id, b0, b1): per-pixel nearest-fragment depth (inf on
    background), winning triangle index (-1 on background), and the first two
    interpolation weights (perspective-corrected when persp is true; the
    third weight is 1 - b0 - b1).

    Triangles are drawn in index order with a strict depth test, so ties go
    to the earlier triangle and the output is deterministic.
    """
    depth = np.full((height, width), np.inf, dtype=np.float64)
    tri_id = np.full((height, width), -1, dtype=np.int32)
    b0 = np.zeros((height, width), dtype=np.float64)
    b1 = np.zeros((height, width), dtype=np.float64)

    for m in range(tris.shape[0]):
        if not keep[m]:
            continue
        i0, i1, i2 = tris[m, 0], tris[m, 1], tris[m, 2]
        x0, y0, z0 = px[i0], py[i0], z[i0]
        x1, y1, z1 = px[i1], py[i1], z[i1]
        x2, y2, z2 = px[i2], py[i2], z[i2]

        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue

        lo_x = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        hi_x = min(width - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        lo_y = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        hi_y = min(height - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if hi_x < lo_x or hi_y < lo_y:
            continue

        sx = np.arange(lo_x, hi_x + 1, dtype=np.float64) + 0.5
        sy = (np.arange(lo_y, hi_y + 1, dtype=np.float64) + 0.5)[:, None]

        e0 = (x2 - x1) * (sy - y1) - (y2 - y1) * (sx - x1)
        e1 = (x0 - x2) * (sy - y2) - (y0 - y2) * (sx - x2)
        e2 = (x1 - x0) * (sy - y0) - (y1 - y0) * (sx - x0)
        if area > 0.0:
            inside = (e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)
        else:
            inside = (e0 <= 0.0) & (e1 <= 0.0) & (e2 <= 0.0)

        w0 = e0 / area
        w1 = e1 / area
        if persp:
            q0 = w0 / z0
            q1 = w1 / z1
            q2 = (1.0 - w0 - w1) / z2
            qs = q0 + q1 + q2
            with np.errstate(divide="ignore", invalid="ignore"):
                d = 1.0 / qs
                bb0 = q0 * d
                bb1 = q1 * d
        else:
            w2 = 1.0 - w0 - w1
            d = (w0 * z0 + w1 * z1) + w2 * z2
            bb0 = w0
            bb1 = w1

        dview = depth[lo_y : hi_y + 1, lo_x : hi_x + 1]
        upd = inside & (d > near) & (d < far) & (d < dview)
        if not upd.any():
            continue
        dview[upd] = d[upd]
        tri_id[lo_y : hi_y + 1, lo_x : hi_x + 1][upd] = m
        b0[lo_y : hi_y + 1, lo_x : hi_x + 1][upd] = bb0[upd]
        b1[lo_y : hi_y + 1, lo_x : hi_x + 1][upd] = bb1[upd]

    return depth, tri_id, b0, b1


def bake_triangles(tu, tv, resolution):
    """Fill triangles over texel centers in a square texel grid.

    tu, tv: (M, 3) triangle corner coordinates in texel units (uv * res).
    Later triangles overwrite earlier ones; write_count records how many
    triangles touched each texel so contested texels can be reported.

    Returns (tri_id, b0, b1, write_count).
    """
    tri_id = np.full((resolution, resolution), -1, dtype=np.int32)
    b0 = np.zeros((resolution, resolution), dtype=np.float64)
    b1 = np.zeros((resolution, resolution), dtype=np.float64)
    write_count = np.zeros((resolution, resolution), dtype=np.int32)

    for m in range(tu.shape[0]):
        x0, y0 = tu[m, 0], tv[m, 0]
        x1, y1 = tu[m, 1], tv[m, 1]
        x2, y2 = tu[m, 2], tv[m, 2]

        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue

        lo_x = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        hi_x = min(resolution - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        lo_y = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        hi_y = min(resolution - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if hi_x < lo_x or hi_y < lo_y:
            continue

        sx = np.arange(lo_x, hi_x + 1, dtype=np.float64) + 0.5
        sy = (np.arange(lo_y, hi_y + 1, dtype=np.float64) + 0.5)[:, None]

        e0 = (x2 - x1) * (sy - y1) - (y2 - y1) * (sx - x1)
        e1 = (x0 - x2) * (sy - y2) - (y0 - y2) * (sx - x2)
        e2 = (x1 - x0) * (sy - y0) - (y1 - y0) * (sx - x0)
        if area > 0.0:
            inside = (e0 >= 0.0) & (e1 >= 0.0) & (e2 >= 0.0)
        else:
            inside = (e0 <= 0.0) & (e1 <= 0.0) & (e2 <= 0.0)
        if not inside.any():
            continue

        w0 = e0 / area
        w1 = e1 / area
        tri_id[lo_y : hi_y + 1, lo_x : hi_x + 1][inside] = m
        b0[lo_y : hi_y + 1, lo_x : hi_x + 1][inside] = w0[inside]
        b1[lo_y : hi_y + 1, lo_x : hi_x + 1][inside] = w1[inside]
        write_count[lo_y : hi_y + 1, lo_x : hi_x + 1][inside] += 1

    return tri_id, b0, b1, write_count


def knn_fill(query_pos, source_pos, source_col, k, power, cell):
    """Inverse-distance-weighted fill from the k nearest source points.

    Neighbors are ranked by (squared distance, source index) so ties are
    deterministic; weights 1/d^power are accumulated in ascending rank order.
    A query coinciding with a source point (d == 0) copies that source color.
    `cell` is the acceleration-grid pitch; the reference implementation
    ignores it and brute-forces in chunks.
    """
    n_src = source_pos.shape[0]
    n_query = query_pos.shape[0]
    k = min(k, n_src)
    out = np.empty((n_query, source_col.shape[1]), dtype=np.float64)
    if n_query == 0:
        return out

    src_idx = np.arange(n_src)
    chunk = max(1, int(4_000_000 // max(1, n_src)))
    for start in range(0, n_query, chunk):
        q = query_pos[start : start + chunk]
        dx = q[:, 0:1] - source_pos[None, :, 0]
        dy = q[:, 1:2] - source_pos[None, :, 1]
        dz = q[:, 2:3] - source_pos[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        order = np.lexsort((np.broadcast_to(src_idx, d2.shape), d2), axis=-1)
        kidx = order[:, :k]
        kd2 = np.take_along_axis(d2, kidx, axis=-1)

        num = np.zeros((q.shape[0], source_col.shape[1]), dtype=np.float64)
        den = np.zeros(q.shape[0], dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            for rank in range(k):
                d2_r = kd2[:, rank]
                if power == 2.0:
                    w = 1.0 / d2_r
                else:
                    w = d2_r ** (-power / 2.0)
                num += w[:, None] * source_col[kidx[:, rank]]
                den += w
            result = num / den[:, None]

        exact = kd2[:, 0] == 0.0
        if exact.any():
            result[exact] = source_col[kidx[exact, 0]]
        out[start : start + chunk] = result
    return out
