"""Straight-path (rectified) flow sampling over a multi-view grid with
classifier-free guidance and per-step reprojection-based view
synchronization.

States follow x_t = (1 - t) * x0 + t * noise, so t = 1 is pure noise and
velocity integration runs t: 1 -> 0. At every synchronized step the
predicted clean grid is decoded, reprojected to UV space, fused into one
texture, re-rendered, and re-encoded, which forces all views to agree on a
single texture before sampling continues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .cameras import CameraRig
from .embedding import Condition, ConditionBundle
from .fusion import WeighterParams, cosine_weights, fuse, weighter_score
from .grids import GridImage, default_layout
from .meshes import TriMesh, UvAtlasMaps
from .raster import rasterize, render_depth_grid
from .reproject import (
    DEFAULT_COS_CUTOFF,
    DEFAULT_DEPTH_TOLERANCE,
    reproject_grid,
)
from .textures import TextureMap


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class LatentState:
    """A point on the sampling trajectory: grid-shaped tensor plus time."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise FlowError(f"timestep must be in [0, 1], got {self.t}")
        if not np.isfinite(self.x).all():
            raise FlowError("non-finite latent state")


class VelocityModel(Protocol):
    """Deterministic velocity field on the grid tensor.

    Implementations must return an array of x's shape given (x, t,
    condition, depth_grid) and must be pure functions of their inputs.
    """

    def __call__(
        self, x: np.ndarray, t: float, condition: Condition | None, depth: GridImage | None
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class OracleVelocity:
    """Exact velocity toward a fixed target grid: (x - target) / t."""

    target: np.ndarray

    def __call__(self, x, t, condition=None, depth=None):
        if t <= 0.0:
            return np.zeros_like(x)
        return (x - self.target) / t


@dataclass(frozen=True)
class NoisyOracleVelocity:
    """Oracle velocity plus a per-view constant color bias and white noise.

    Both perturbations scale with t, mimicking a denoiser whose predictions
    are least reliable early; the per-view bias creates exactly the kind of
    cross-view disagreement synchronization has to resolve. Deterministic:
    the noise is seeded from (seed, t).
    """

    target: np.ndarray
    bias_sigma: float = 0.1
    noise_sigma: float = 0.0
    seed: int = 0
    rows: int = 2
    cols: int = 2
    view_bias: np.ndarray = field(init=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        bias = self.bias_sigma * rng.standard_normal((self.rows * self.cols, 3))
        bias.flags.writeable = False
        object.__setattr__(self, "view_bias", bias)

    def __call__(self, x, t, condition=None, depth=None):
        if t <= 0.0:
            return np.zeros_like(x)
        v = (x - self.target) / t
        grid = GridImage.from_assembled(np.zeros_like(x), self.rows, self.cols)
        tiles = grid.tiles + self.view_bias[:, None, None, :] * t
        v = v + GridImage(tiles=tiles, rows=self.rows, cols=self.cols).assemble()
        if self.noise_sigma > 0.0:
            rng = np.random.default_rng([self.seed, int(round(t * 1e9))])
            v = v + self.noise_sigma * t * rng.standard_normal(x.shape)
        return v


class Codec(Protocol):
    """Mapping between the sampled tensor and view-image space."""

    def encode(self, images: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


class IdentityCodec:
    """Pixel-space sampling: encode and decode are the identity."""

    def encode(self, images: np.ndarray) -> np.ndarray:
        return images

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return latent


@dataclass(frozen=True)
class SyncConfig:
    """View-synchronization policy.

    weighting: "cosine" (exponent beta) or "adaptive" (WeighterParams, with
    the current timestep forwarded). Sync applies every `interval` steps
    while t lies in t_range. Background pixels always keep their decoded
    values; only re-renderable foreground is replaced.
    """

    enabled: bool = True
    weighting: str = "cosine"
    beta: float = 1.0
    params: WeighterParams | None = None
    interval: int = 1
    t_range: tuple[float, float] = (0.0, 1.0)
    background: str = "preserve-decoded"
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE
    cos_cutoff: float = DEFAULT_COS_CUTOFF

    def __post_init__(self):
        if self.weighting not in ("cosine", "adaptive"):
            raise FlowError(f"unknown weighting {self.weighting!r}")
        if self.interval < 1:
            raise FlowError(f"sync interval must be >= 1, got {self.interval}")
        lo, hi = self.t_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise FlowError(f"t_range must satisfy 0 <= lo <= hi <= 1, got {self.t_range}")
        if self.background != "preserve-decoded":
            raise FlowError(f"unsupported background policy {self.background!r}")
        if self.weighting == "adaptive" and self.params is None:
            object.__setattr__(self, "params", WeighterParams())


def predict_x0(x: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    """Clean-sample prediction x - t * v; at t = 0 this is x itself."""
    if x.shape != v.shape:
        raise FlowError(f"shape mismatch: {x.shape} vs {v.shape}")
    if not 0.0 <= t <= 1.0:
        raise FlowError(f"timestep must be in [0, 1], got {t}")
    return x - t * v


def cfg_velocity(v_cond: np.ndarray, v_neg: np.ndarray, scale: float) -> np.ndarray:
    """Guided velocity v_neg + scale * (v_cond - v_neg).

    scale == 1 returns the conditional velocity exactly, and equal inputs
    are a fixed point for every scale (the difference form guarantees it).
    """
    if v_cond.shape != v_neg.shape:
        raise FlowError(f"shape mismatch: {v_cond.shape} vs {v_neg.shape}")
    if scale == 1.0:
        return v_cond.copy()
    return v_neg + scale * (v_cond - v_neg)


def sync_velocity(x: np.ndarray, x0_synced: np.ndarray, t: float) -> np.ndarray:
    """Velocity that targets the synchronized clean state: (x - x0) / t."""
    if x.shape != x0_synced.shape:
        raise FlowError(f"shape mismatch: {x.shape} vs {x0_synced.shape}")
    if t <= 0.0:
        raise FlowError("sync velocity is undefined at t = 0")
    return (x - x0_synced) / t


def _weight_partials(partials, atlas, t, sync: SyncConfig):
    if sync.weighting == "adaptive":
        return weighter_score(partials, atlas, t, sync.params)
    return cosine_weights(partials, sync.beta)


def sync_x0(
    x0: np.ndarray,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    codec: Codec,
    sync: SyncConfig,
    t: float,
    layout: tuple[int, int] | None = None,
) -> tuple[np.ndarray, TextureMap]:
    """Project the predicted views onto one fused texture and back.

    decode -> split -> reproject each view -> weight -> fuse -> re-render
    every view from the fused texture. Foreground pixels whose sampled texel
    is valid take the re-rendered value; all other pixels (background, or
    foreground over texels no view covered) keep the decoded value. Returns
    the re-encoded state and the fused texture.
    """
    rows, cols = layout or default_layout(len(rig))
    if rows * cols != len(rig):
        raise FlowError(f"{len(rig)} views do not fill a {rows}x{cols} grid")
    decoded = codec.decode(x0)
    grid = GridImage.from_assembled(decoded, rows, cols)
    partials = reproject_grid(
        grid, rig, mesh, atlas,
        depth_tolerance=sync.depth_tolerance, cos_cutoff=sync.cos_cutoff,
    )
    weights = _weight_partials(partials, atlas, t, sync)
    fused = fuse(partials, weights)

    tiles = grid.tiles.copy()
    for i, cam in enumerate(rig):
        rr = rasterize(mesh, cam, fused)
        replace = rr.color_valid
        tiles[i][replace] = rr.color[replace]
    synced = GridImage(tiles=tiles, rows=rows, cols=cols).assemble()
    return codec.encode(synced), fused


@dataclass(frozen=True)
class SampleResult:
    grid: GridImage
    fused: TextureMap
    steps: int
    seed: int
    synced_steps: tuple[int, ...]


def sample(
    model: VelocityModel,
    condition: ConditionBundle | None,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    codec: Codec | None = None,
    steps: int = 30,
    sync: SyncConfig | None = None,
    seed: int = 0,
    cfg_scale: float = 2.0,
    distilled_scale: float = 6.0,
    layout: tuple[int, int] | None = None,
    channels: int = 3,
    on_sync: Callable | None = None,
) -> SampleResult:
    """Euler integration of the guided velocity field from noise to data.

    Uniform schedule t_k = 1 - k/steps. Each step evaluates the model under
    the positive and negative conditions, combines them with the explicit
    guidance scale, and, when synchronization is active at t_k, replaces the
    velocity with the one targeting the synchronized clean state. Returns
    the decoded final grid and the fused texture of the last sync (or a
    final fusion pass when sync never ran).

    on_sync(step, t, x0, x0_synced, fused) is called after each sync; it is
    a diagnostic hook and must not mutate its arguments.
    """
    if steps < 1:
        raise FlowError(f"need at least one step, got {steps}")
    codec = codec or IdentityCodec()
    sync = sync or SyncConfig()
    rows, cols = layout or default_layout(len(rig))
    if rows * cols != len(rig):
        raise FlowError(f"{len(rig)} views do not fill a {rows}x{cols} grid")
    w, h = rig[0].resolution

    cond_pos = condition.positive_condition(distilled_scale) if condition else None
    cond_neg = condition.negative_condition(distilled_scale) if condition else None
    depth = render_depth_grid(mesh, rig, layout=(rows, cols))

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows * h, cols * w, channels))
    dt = 1.0 / steps
    last_fused: TextureMap | None = None
    synced_steps: list[int] = []

    for k in range(steps):
        t = 1.0 - k / steps
        v_cond = model(x, t, cond_pos, depth)
        v_neg = model(x, t, cond_neg, depth)
        v = cfg_velocity(v_cond, v_neg, cfg_scale)

        lo, hi = sync.t_range
        if sync.enabled and k % sync.interval == 0 and lo <= t <= hi and t > 0.0:
            x0 = predict_x0(x, v, t)
            x0_synced, fused = sync_x0(x0, mesh, rig, atlas, codec, sync, t, (rows, cols))
            v = sync_velocity(x, x0_synced, t)
            last_fused = fused
            synced_steps.append(k)
            if on_sync is not None:
                on_sync(k, t, x0, x0_synced, fused)

        x = x - dt * v
        if not np.isfinite(x).all():
            raise FlowError(f"non-finite state after step {k} (t = {t:.4f})")

    final = GridImage.from_assembled(codec.decode(x), rows, cols)
    if last_fused is None:
        partials = reproject_grid(
            final, rig, mesh, atlas,
            depth_tolerance=sync.depth_tolerance, cos_cutoff=sync.cos_cutoff,
        )
        last_fused = fuse(partials, _weight_partials(partials, atlas, 0.0, sync))
    return SampleResult(
        grid=final, fused=last_fused, steps=steps, seed=seed,
        synced_steps=tuple(synced_steps),
    )


def cross_view_disagreement(
    grid: GridImage,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE,
    cos_cutoff: float = DEFAULT_COS_CUTOFF,
) -> float:
    """Mean, over texels covered by at least two views, of the largest
    per-channel color spread between the covering views of a grid image."""
    partials = reproject_grid(
        grid, rig, mesh, atlas, depth_tolerance=depth_tolerance, cos_cutoff=cos_cutoff
    )
    cov = np.stack([p.covered for p in partials])
    col = np.stack([p.colors for p in partials])
    multi = cov.sum(axis=0) >= 2
    if not multi.any():
        return 0.0
    lo = np.where(cov[..., None], col, np.inf).min(axis=0)
    hi = np.where(cov[..., None], col, -np.inf).max(axis=0)
    spread = (hi - lo).max(axis=-1)
    return float(spread[multi].mean())
