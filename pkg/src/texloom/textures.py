"""Texel grids in UV space with validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TextureMap:
    """Square RGB texel grid with a validity mask.

    colors: (res, res, 3) float64, addressed [v_row, u_col] like the atlas
    maps; validity: (res, res) bool. Invalid texels hold zero sentinels.
    Displayable textures live in [0, 1]; intermediate states produced during
    sampling may exceed that range and are clipped only at export time.
    `margin` optionally marks texels colored by margin dilation (valid
    colors, invalid in the mask).
    """

    colors: np.ndarray
    validity: np.ndarray
    margin: np.ndarray | None = None

    def __post_init__(self):
        colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        validity = np.ascontiguousarray(self.validity, dtype=bool)
        if colors.ndim != 3 or colors.shape[2] != 3 or colors.shape[0] != colors.shape[1]:
            raise ValueError(f"colors must be (res, res, 3), got {colors.shape}")
        if validity.shape != colors.shape[:2]:
            raise ValueError("validity shape must match colors")
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "validity", validity)

    @property
    def resolution(self) -> int:
        return self.colors.shape[0]

    @classmethod
    def constant(cls, resolution: int, rgb, validity=None) -> "TextureMap":
        colors = np.zeros((resolution, resolution, 3), dtype=np.float64)
        if validity is None:
            validity = np.ones((resolution, resolution), dtype=bool)
        colors[validity] = np.asarray(rgb, dtype=np.float64)
        return cls(colors=colors, validity=np.asarray(validity, dtype=bool))


def uv_to_texel(uv: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest texel indices (row, col) for UV coordinates in [0, 1]^2.

    Texel (i, j) owns [j/res, (j+1)/res) x [i/res, (i+1)/res); u or v exactly
    1.0 clamps into the last texel.
    """
    col = np.clip(np.floor(uv[..., 0] * resolution), 0, resolution - 1).astype(np.intp)
    row = np.clip(np.floor(uv[..., 1] * resolution), 0, resolution - 1).astype(np.intp)
    return row, col


def sample_nearest(texture: TextureMap, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-texel lookup; returns (colors, texel-validity)."""
    row, col = uv_to_texel(uv, texture.resolution)
    return texture.colors[row, col], texture.validity[row, col]


def sample_bilinear(texture: TextureMap, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup restricted to valid texels.

    Invalid texels are excluded from the interpolation support (weights
    renormalized); where no support texel is valid the result falls back to
    the nearest texel and validity is reported false.
    """
    res = texture.resolution
    fu = uv[..., 0] * res - 0.5
    fv = uv[..., 1] * res - 0.5
    c0 = np.floor(fu)
    r0 = np.floor(fv)
    au = fu - c0
    av = fv - r0
    acc = np.zeros(uv.shape[:-1] + (3,), dtype=np.float64)
    wsum = np.zeros(uv.shape[:-1], dtype=np.float64)
    for dr, dc, w in (
        (0, 0, (1 - au) * (1 - av)),
        (0, 1, au * (1 - av)),
        (1, 0, (1 - au) * av),
        (1, 1, au * av),
    ):
        rr = np.clip(r0 + dr, 0, res - 1).astype(np.intp)
        cc = np.clip(c0 + dc, 0, res - 1).astype(np.intp)
        valid = texture.validity[rr, cc]
        wv = w * valid
        acc += wv[..., None] * texture.colors[rr, cc]
        wsum += wv
    ok = wsum > 1e-12
    out = np.where(ok[..., None], acc / np.where(ok, wsum, 1.0)[..., None], 0.0)
    near_col, near_valid = sample_nearest(texture, uv)
    out = np.where(ok[..., None], out, near_col)
    return out, ok | near_valid
