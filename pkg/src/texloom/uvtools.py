"""Texture completion and enhancement in UV space.

Completion fills occluded texels from their nearest valid texels measured
in 3D through the atlas position map, so charts that are far apart in UV
but adjacent on the surface borrow color correctly. Enhancement upsamples
with validity-aware bicubic interpolation (invalid texels never leak into
the support), sharpens, and dilates chart margins against mip bleeding.
Both are deterministic stand-ins behind the same interfaces a generative
inpainter or SR network would implement.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .meshes import UvAtlasMaps
from .textures import TextureMap

DEFAULT_NEIGHBORS = 8
DEFAULT_IDW_POWER = 2.0
MARGIN_TEXELS = 4


class UvToolsError(ValueError):
    pass


def complete_texture(
    partial: TextureMap,
    atlas: UvAtlasMaps,
    k: int = DEFAULT_NEIGHBORS,
    power: float = DEFAULT_IDW_POWER,
) -> TextureMap:
    """Fill every atlas-valid but uncovered texel by inverse-distance
    weighting of its k nearest covered texels in 3D.

    Covered texels pass through unchanged; output validity equals atlas
    validity, so the operation is idempotent.
    """
    from . import _kernels

    if partial.resolution != atlas.resolution:
        raise UvToolsError(
            f"texture resolution {partial.resolution} does not match atlas "
            f"{atlas.resolution}"
        )
    if (partial.validity & ~atlas.validity).any():
        raise UvToolsError("texture validity extends outside the atlas")
    if not partial.validity.any():
        raise UvToolsError("cannot complete a texture with no valid texels")
    if k < 1:
        raise UvToolsError(f"neighbor count must be >= 1, got {k}")

    targets = atlas.validity & ~partial.validity
    colors = partial.colors.copy()
    if targets.any():
        src_pos = np.ascontiguousarray(atlas.position_map[partial.validity])
        src_col = np.ascontiguousarray(partial.colors[partial.validity])
        query = np.ascontiguousarray(atlas.position_map[targets])
        extent = max(
            float(np.ptp(atlas.position_map[atlas.validity], axis=0).max()), 1e-9
        )
        cell = 2.0 * extent / atlas.resolution
        colors[targets] = _kernels.knn_fill(query, src_pos, src_col, k, float(power), cell)
    return TextureMap(colors=colors, validity=atlas.validity.copy())


# ---------------------------------------------------------------------------
# Bicubic upsampling (Keys kernel, a = -1/2), validity aware


def _cubic_kernel(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(
        ax <= 1.0,
        1.5 * ax**3 - 2.5 * ax**2 + 1.0,
        np.where(ax < 2.0, -0.5 * ax**3 + 2.5 * ax**2 - 4.0 * ax + 2.0, 0.0),
    )


def _upsample_1d_weights(n_src: int, factor: int):
    """Tap indices (clamped) and weights for each output sample of one axis."""
    out = np.arange(n_src * factor)
    sx = (out + 0.5) / factor - 0.5
    base = np.floor(sx).astype(int)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    w = _cubic_kernel(sx[:, None] - taps)
    taps = np.clip(taps, 0, n_src - 1)
    return taps, w


def _bicubic_masked(values: np.ndarray, mask: np.ndarray, factor: int):
    """Separable bicubic upsample of values*mask and mask; invalid texels
    contribute nothing. Returns (numerator, mask_weight) at the fine grid."""
    m = mask.astype(np.float64)
    v = values * (m[..., None] if values.ndim == 3 else m)
    taps_r, w_r = _upsample_1d_weights(values.shape[0], factor)
    taps_c, w_c = _upsample_1d_weights(values.shape[1], factor)

    def up(a):
        a = (w_r[..., None] * a[taps_r]).sum(axis=1) if a.ndim == 2 else (
            w_r[..., None, None] * a[taps_r]
        ).sum(axis=1)
        a = np.swapaxes(a, 0, 1)
        a = (w_c[..., None] * a[taps_c]).sum(axis=1) if a.ndim == 2 else (
            w_c[..., None, None] * a[taps_c]
        ).sum(axis=1)
        return np.swapaxes(a, 0, 1)

    return up(v), up(m)


def _masked_gaussian(values: np.ndarray, mask: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized-convolution Gaussian blur: invalid texels excluded."""
    m = mask.astype(np.float64)
    num = ndimage.gaussian_filter(values * m[..., None], sigma=(sigma, sigma, 0))
    den = ndimage.gaussian_filter(m, sigma=sigma)
    out = np.zeros_like(values)
    ok = den > 1e-9
    out[ok] = num[ok] / den[ok, None]
    return out


def enhance_texture(
    texture: TextureMap,
    atlas_hi: UvAtlasMaps,
    factor: int = 4,
    sharpen_amount: float = 0.6,
    sharpen_sigma: float = 1.0,
) -> TextureMap:
    """Upscale by 2x or 4x with validity-aware bicubic interpolation, apply
    an unsharp mask on the valid region, and dilate chart margins.

    Sentinel colors of invalid texels never enter the interpolation or blur
    support. atlas_hi must be baked at resolution * factor.
    """
    if factor not in (2, 4):
        raise UvToolsError(f"upscale factor must be 2 or 4, got {factor}")
    res_hi = texture.resolution * factor
    if atlas_hi.resolution != res_hi:
        raise UvToolsError(
            f"high-resolution atlas is {atlas_hi.resolution}, expected {res_hi}"
        )

    num, den = _bicubic_masked(texture.colors, texture.validity, factor)
    up = np.zeros((res_hi, res_hi, 3), dtype=np.float64)
    supported = den > 1e-6
    up[supported] = num[supported] / den[supported, None]

    validity = atlas_hi.validity.copy()
    colored = supported.copy()
    # hi-res texels without interpolation support (fresh chart borders):
    # take the nearest colored texel
    missing = validity & ~colored
    while missing.any():
        grown = _grow_once(up, colored)
        if grown is None:
            break
        up, colored = grown
        missing = validity & ~colored

    blurred = _masked_gaussian(up, colored, sharpen_sigma)
    sharp = up + sharpen_amount * (up - blurred)
    up = np.where((validity & colored)[..., None], sharp, up)
    up = np.clip(up, 0.0, 1.0)

    out = TextureMap(colors=np.where(validity[..., None], up, 0.0), validity=validity)
    return dilate_margins(out, MARGIN_TEXELS * (factor // 2))


def _grow_once(colors: np.ndarray, colored: np.ndarray):
    """One synchronous 8-neighborhood growth step; None when saturated."""
    shifted_sum = np.zeros_like(colors)
    shifted_cnt = np.zeros(colors.shape[:2], dtype=np.float64)
    h, w = colored.shape
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            src_r = slice(max(0, -dr), min(h, h - dr))
            src_c = slice(max(0, -dc), min(w, w - dc))
            dst_r = slice(max(0, dr), min(h, h + dr))
            dst_c = slice(max(0, dc), min(w, w + dc))
            m = colored[src_r, src_c]
            shifted_sum[dst_r, dst_c] += colors[src_r, src_c] * m[..., None]
            shifted_cnt[dst_r, dst_c] += m
    frontier = ~colored & (shifted_cnt > 0)
    if not frontier.any():
        return None
    out = colors.copy()
    out[frontier] = shifted_sum[frontier] / shifted_cnt[frontier, None]
    return out, colored | frontier


def dilate_margins(texture: TextureMap, pixels: int) -> TextureMap:
    """Propagate valid colors `pixels` texels outward into invalid space.

    Each iteration colors every uncolored texel with the mean of its already
    colored 8-neighbors (synchronous update). The validity mask is
    unchanged; newly colored texels are flagged in `margin`.
    """
    if pixels < 0:
        raise UvToolsError(f"margin width must be >= 0, got {pixels}")
    colors = texture.colors.copy()
    colored = texture.validity.copy()
    for _ in range(pixels):
        grown = _grow_once(colors, colored)
        if grown is None:
            break
        colors, colored = grown
    margin = colored & ~texture.validity
    return TextureMap(colors=colors, validity=texture.validity.copy(), margin=margin)
