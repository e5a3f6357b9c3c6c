"""Merging per-view partial textures into one texture map.

Two weighting functions share the same contract (per-texel partition of
unity over covering views): a heuristic cosine power weighting, and a
parametric adaptive weighter whose four parameters are fitted by pattern
search against rendering losses on simulated noisy inputs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cameras import CameraRig
from .meshes import TriMesh, UvAtlasMaps
from .raster import rasterize
from .reproject import PartialTexture
from .textures import TextureMap

_LOG_EPS = 1e-12


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class WeightField:
    """Per-view, per-texel fusion weights (V, res, res).

    On texels covered by at least one view the weights are nonnegative and
    sum to one; views that do not cover a texel carry weight zero there.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 3:
            raise FusionError(f"weights must be (V, res, res), got {w.shape}")
        if w.min(initial=0.0) < 0.0:
            raise FusionError("negative fusion weight")
        object.__setattr__(self, "weights", w)

    @property
    def view_count(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class WeighterParams:
    """Parameters of the adaptive weighter.

    beta: cosine exponent; lambda_edge: penalty on the depth-edge channel;
    lambda_t: timestep modulation of the cosine exponent; temperature:
    softmax temperature.
    """

    beta: float = 1.0
    lambda_edge: float = 0.0
    lambda_t: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        vals = (self.beta, self.lambda_edge, self.lambda_t, self.temperature)
        if not all(math.isfinite(v) for v in vals):
            raise FusionError(f"non-finite weighter parameter: {vals}")
        if self.beta < 0.0 or self.lambda_edge < 0.0:
            raise FusionError("beta and lambda_edge must be nonnegative")
        if self.temperature <= 0.0:
            raise FusionError(f"temperature must be positive, got {self.temperature}")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.lambda_edge, self.lambda_t, self.temperature])

    @classmethod
    def from_array(cls, a) -> "WeighterParams":
        return cls(beta=float(a[0]), lambda_edge=float(a[1]), lambda_t=float(a[2]),
                   temperature=float(a[3]))


@dataclass(frozen=True)
class LossWeights:
    lambda_pec: float = 1.0
    lambda_cyc: float = 0.5
    lambda_sm: float = 0.2
    alpha_decay: float = 1.0  # alpha in exp(-alpha * t)

    def __post_init__(self):
        if min(self.lambda_pec, self.lambda_cyc, self.lambda_sm, self.alpha_decay) < 0.0:
            raise FusionError("loss weights must be nonnegative")


def _stack(partials: list[PartialTexture]):
    if not partials:
        raise FusionError("empty partial texture list")
    res = partials[0].resolution
    for p in partials:
        if p.resolution != res:
            raise FusionError("partial textures have mismatched resolutions")
    cov = np.stack([p.covered for p in partials])
    cos = np.stack([p.view_cos for p in partials])
    edge = np.stack([p.depth_edge for p in partials])
    col = np.stack([p.colors for p in partials])
    return cov, cos, edge, col


def cosine_weights(partials: list[PartialTexture], beta: float = 1.0) -> WeightField:
    """w_v proportional to max(0, view_cos)^beta over covering views."""
    cov, cos, _, _ = _stack(partials)
    w = np.where(cov, np.maximum(cos, 0.0) ** beta, 0.0)
    total = w.sum(axis=0)
    any_cov = cov.any(axis=0)
    # covered texels where every cosine underflowed: fall back to uniform
    flat = any_cov & (total == 0.0)
    if flat.any():
        w = np.where(flat[None] & cov, 1.0, w)
        total = w.sum(axis=0)
    weights = np.where(any_cov[None], w / np.where(total == 0.0, 1.0, total)[None], 0.0)
    return WeightField(weights=weights)


def weighter_score(
    partials: list[PartialTexture],
    atlas: UvAtlasMaps,
    t: float,
    params: WeighterParams,
) -> WeightField:
    """Adaptive weighting: per-texel softmax over covering views of

        ((beta + lambda_t * t) * log(view_cos) - lambda_edge * depth_edge)
          / temperature

    With lambda_edge = lambda_t = 0 and temperature = 1 this reduces exactly
    to cosine_weights(beta). The atlas argument is part of the weighting
    interface (3D-aware replacements need it); the parametric form only uses
    the per-view channels.
    """
    if not 0.0 <= t <= 1.0:
        raise FusionError(f"timestep must be in [0, 1], got {t}")
    del atlas
    cov, cos, edge, _ = _stack(partials)
    exponent = params.beta + params.lambda_t * t
    logits = exponent * np.log(np.maximum(cos, _LOG_EPS)) - params.lambda_edge * edge
    logits = logits / params.temperature
    neg_inf = np.float64(-np.inf)
    masked = np.where(cov, logits, neg_inf)
    peak = masked.max(axis=0)
    any_cov = cov.any(axis=0)
    safe_peak = np.where(any_cov, peak, 0.0)
    e = np.where(cov, np.exp(masked - safe_peak[None]), 0.0)
    total = e.sum(axis=0)
    weights = np.where(any_cov[None], e / np.where(total == 0.0, 1.0, total)[None], 0.0)
    return WeightField(weights=weights)


def fuse(partials: list[PartialTexture], weights: WeightField) -> TextureMap:
    """Per-texel convex combination of covering views."""
    cov, _, _, col = _stack(partials)
    if weights.weights.shape != cov.shape:
        raise FusionError(
            f"weight field shape {weights.weights.shape} does not match partials {cov.shape}"
        )
    fused = (weights.weights[..., None] * col).sum(axis=0)
    validity = cov.any(axis=0)
    fused[~validity] = 0.0
    return TextureMap(colors=fused, validity=validity)


# ---------------------------------------------------------------------------
# Losses


def loss_cycle(
    partials: list[PartialTexture],
    fused: TextureMap,
    mesh: TriMesh,
    rig: CameraRig,
) -> float:
    """Mean L1 between renders of each partial and renders of the fused
    texture, over pixels whose sampled texel the partial covers."""
    total = 0.0
    count = 0
    for i, partial in enumerate(partials):
        part_tex = TextureMap(colors=partial.colors, validity=partial.covered)
        rp = rasterize(mesh, rig[i], part_tex)
        rf = rasterize(mesh, rig[i], fused)
        mask = rp.color_valid
        if mask.any():
            total += np.abs(rp.color[mask] - rf.color[mask]).sum()
            count += int(mask.sum()) * 3
    return total / count if count else 0.0


def loss_recon(
    fused: TextureMap,
    ground_truth: TextureMap,
    mesh: TriMesh,
    rig: CameraRig,
    t: float,
    weights: LossWeights = LossWeights(),
    feature=None,
) -> float:
    """exp(-alpha t) times the mean L1 feature difference between renders of
    the ground truth and of the fused texture.

    Pixels sampling a texel that is invalid in either texture are excluded
    (identity feature) or zeroed before the transform (custom feature).
    """
    factor = math.exp(-weights.alpha_decay * t)
    total = 0.0
    count = 0
    for cam in rig:
        rg = rasterize(mesh, cam, ground_truth)
        rf = rasterize(mesh, cam, fused)
        mask = rg.color_valid & rf.color_valid
        if feature is None:
            if mask.any():
                total += np.abs(rg.color[mask] - rf.color[mask]).sum()
                count += int(mask.sum()) * 3
        else:
            a = np.where(mask[..., None], rg.color, 0.0)
            b = np.where(mask[..., None], rf.color, 0.0)
            fa, fb = feature(a), feature(b)
            total += np.abs(fa - fb).sum()
            count += fa.size
    return factor * (total / count) if count else 0.0


def loss_smooth(image: np.ndarray) -> float:
    """Sum of squared forward differences along x and y over the sample count."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    h, w, c = image.shape
    if h < 2 or w < 2:
        raise FusionError(f"image must be at least 2x2, got {h}x{w}")
    gx = np.diff(image, axis=1)
    gy = np.diff(image, axis=0)
    return float(((gx * gx).sum() + (gy * gy).sum()) / (h * w * c))


def total_weighter_loss(
    partials: list[PartialTexture],
    ground_truth: TextureMap,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    t: float,
    params: WeighterParams,
    weights: LossWeights = LossWeights(),
    feature=None,
) -> float:
    """lambda_pec * recon + lambda_cyc * cycle + lambda_sm * smoothness of
    the fused-texture renders, with the fused texture produced by the
    adaptive weighter at the given parameters."""
    field_ = weighter_score(partials, atlas, t, params)
    fused = fuse(partials, field_)
    l_pec = loss_recon(fused, ground_truth, mesh, rig, t, weights, feature)
    l_cyc = loss_cycle(partials, fused, mesh, rig)
    l_sm = float(
        np.mean([loss_smooth(rasterize(mesh, cam, fused).color) for cam in rig])
    )
    return weights.lambda_pec * l_pec + weights.lambda_cyc * l_cyc + weights.lambda_sm * l_sm


# ---------------------------------------------------------------------------
# Training-pair simulation and fitting


@dataclass(frozen=True)
class FusionSample:
    """One fitting sample: simulated partials for a ground truth at time t."""

    partials: list[PartialTexture]
    ground_truth: TextureMap
    t: float


def simulate_noisy_partials(
    ground_truth: TextureMap,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    t: float,
    seed: int,
    velocity_model=None,
    layout: tuple[int, int] | None = None,
) -> list[PartialTexture]:
    """Simulate the partial textures an imperfect denoiser would produce.

    Renders the ground truth, blends in unit Gaussian noise at level t,
    recovers the denoised state with a velocity model (default: the noisy
    oracle, whose per-view color bias creates cross-view disagreement), and
    reprojects each recovered view. With the exact oracle the recovered
    views equal the clean renders.
    """
    from . import flow  # deferred: flow builds on fusion

    if not 0.0 < t <= 1.0:
        raise FusionError(f"timestep must be in (0, 1], got {t}")
    from .raster import render_views

    grid = render_views(ground_truth, mesh, rig, layout=layout)
    target = grid.assemble()
    if velocity_model is None:
        velocity_model = flow.NoisyOracleVelocity(
            target, bias_sigma=0.1, noise_sigma=0.05, seed=seed + 1,
            rows=grid.rows, cols=grid.cols,
        )
    rng = np.random.default_rng(seed)
    x_t = (1.0 - t) * target + t * rng.standard_normal(target.shape)
    v = velocity_model(x_t, t, None, None)
    x0 = flow.predict_x0(x_t, v, t)
    recovered = type(grid).from_assembled(x0, grid.rows, grid.cols)
    from .reproject import reproject_grid

    return reproject_grid(recovered, rig, mesh, atlas)


@dataclass(frozen=True)
class FitResult:
    params: WeighterParams
    loss: float
    trace: list[float] = field(default_factory=list)
    evaluations: int = 0


_PARAM_BOUNDS = np.array([[0.0, 16.0], [0.0, 32.0], [-8.0, 8.0], [0.05, 8.0]])
_INITIAL_STEPS = np.array([0.5, 0.5, 0.5, 0.25])


def fit_weighter(
    dataset: list[FusionSample],
    init: WeighterParams,
    budget: int,
    mesh: TriMesh,
    rig: CameraRig,
    atlas: UvAtlasMaps,
    loss_weights: LossWeights = LossWeights(),
    feature=None,
    min_step: float = 1e-3,
) -> FitResult:
    """Pattern search over the four weighter parameters.

    Cycles through coordinate moves of +/- the current step, accepting strict
    improvements of the mean total loss over the dataset and halving the
    steps after a full unsuccessful cycle. Never exceeds `budget` loss
    evaluations and never returns parameters worse than the initialization.
    TEXLOOM_THREADS controls sample-level fan-out (reduction order is fixed,
    results are deterministic).
    """
    if not dataset:
        raise FusionError("empty fitting dataset")
    if budget < 1:
        raise FusionError(f"evaluation budget must be >= 1, got {budget}")

    workers = int(os.environ.get("TEXLOOM_THREADS", "1"))

    def evaluate(params: WeighterParams) -> float:
        def one(sample: FusionSample) -> float:
            return total_weighter_loss(
                sample.partials, sample.ground_truth, mesh, rig, atlas,
                sample.t, params, loss_weights, feature,
            )

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(one, dataset))
        else:
            values = [one(s) for s in dataset]
        return float(np.mean(values))

    x = np.clip(init.as_array(), _PARAM_BOUNDS[:, 0], _PARAM_BOUNDS[:, 1])
    f_best = evaluate(WeighterParams.from_array(x))
    trace = [f_best]
    evals = 1
    steps = _INITIAL_STEPS.copy()

    while evals < budget and steps.max() > min_step:
        improved = False
        for i in range(4):
            for sign in (1.0, -1.0):
                if evals >= budget:
                    break
                cand = x.copy()
                cand[i] = np.clip(cand[i] + sign * steps[i], *_PARAM_BOUNDS[i])
                if cand[i] == x[i]:
                    continue
                f = evaluate(WeighterParams.from_array(cand))
                trace.append(f)
                evals += 1
                if f < f_best:
                    x, f_best = cand, f
                    improved = True
                    break
            if evals >= budget:
                break
        if not improved:
            steps *= 0.5

    return FitResult(
        params=WeighterParams.from_array(x), loss=f_best, trace=trace, evaluations=evals
    )
