"""End-to-end orchestration: mesh to fused, completed, enhanced texture.

The only module with side effects. Every run writes its artifacts plus a
manifest (flattened config, seeds, backend, artifact list, timings) so that
identical configs reproduce identical artifacts byte for byte; wall-clock
timings live under `timing.` keys and are excluded from that guarantee.
On a stage failure the artifacts written so far are renamed with a
`.partial` suffix and the stage name is reported.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, ioutil
from .cameras import CameraRig, Orthographic, Perspective, make_surround_rig
from .config import PipelineConfig, load_weighter_params
from .embedding import ConditionBundle, aggregate, embed_image, embed_text, grayscale_negative
from .flow import (
    NoisyOracleVelocity,
    OracleVelocity,
    SampleResult,
    SyncConfig,
    cross_view_disagreement,
    sample,
)
from .fusion import loss_cycle
from .grids import default_layout
from .meshes import TriMesh, UvAtlasMaps, bake_atlas_maps, load_obj, normalize_mesh
from .procmesh import BUILTIN_MESHES
from .raster import render_depth_grid, render_views
from .reproject import reproject_grid
from .textures import TextureMap
from .uvtools import complete_texture, enhance_texture


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Scene:
    mesh: TriMesh
    rig: CameraRig
    atlas: UvAtlasMaps


@dataclass
class PipelineResult:
    config: PipelineConfig
    scene: Scene
    condition: ConditionBundle
    ground_truth: TextureMap | None
    sample: SampleResult
    fused: TextureMap
    completed: TextureMap | None
    enhanced: TextureMap | None
    artifacts: dict[str, Path] = field(default_factory=dict)


def load_mesh(spec: str) -> TriMesh:
    """`builtin:<name>` or a Wavefront OBJ path; always normalized."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_MESHES:
            raise ValueError(
                f"unknown builtin mesh {name!r}; have {sorted(BUILTIN_MESHES)}"
            )
        mesh = BUILTIN_MESHES[name]()
    else:
        mesh = load_obj(spec)
    return normalize_mesh(mesh)


def build_scene(config: PipelineConfig) -> Scene:
    mesh = load_mesh(config.mesh)
    rc = config.rig
    projection = (
        Perspective(rc.fov_deg)
        if rc.projection == "perspective"
        else Orthographic(rc.ortho_half_height)
    )
    rig = make_surround_rig(
        view_count=rc.views,
        elevation_deg=rc.elevation_deg,
        distance=rc.distance,
        resolution=rc.view_resolution,
        projection=projection,
    )
    atlas = bake_atlas_maps(mesh, config.atlas_resolution)
    return Scene(mesh=mesh, rig=rig, atlas=atlas)


def build_condition(config: PipelineConfig) -> ConditionBundle:
    cc = config.condition
    images = [(alpha, embed_image(ioutil.load_png(path))) for path, alpha in cc.images]
    reference = None
    if cc.style_reference:
        reference = ioutil.load_png(cc.style_reference)
        images.append((cc.style_alpha, embed_image(reference)))
    negative = None
    if cc.negative == "grayscale-ref":
        negative = grayscale_negative(reference)
    return aggregate(embed_text(cc.prompt), images, negative=negative)


def _condition_seed(bundle: ConditionBundle) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(bundle.text.values.tobytes())
    h.update(bundle.image_slot.tobytes())
    h.update(np.array(bundle.alphas).tobytes())
    h.update(bundle.negative.values.tobytes())
    return int.from_bytes(h.digest(), "little")


def _smooth_field(rng: np.random.Generator, res: int, coarse: int = 9) -> np.ndarray:
    """Low-frequency RGB field: coarse uniform noise, bilinearly upsampled."""
    grid = rng.uniform(0.15, 0.9, (coarse, coarse, 3))
    xs = np.linspace(0.0, coarse - 1.0, res)
    i0 = np.minimum(np.floor(xs).astype(int), coarse - 2)
    f = (xs - i0)[:, None]
    rows = grid[i0] * (1.0 - f[..., None]) + grid[i0 + 1] * f[..., None]
    cols = rows[:, i0] * (1.0 - f.T[..., None]) + rows[:, i0 + 1] * f.T[..., None]
    return cols


def condition_texture(
    bundle: ConditionBundle, resolution: int, atlas: UvAtlasMaps
) -> TextureMap:
    """Deterministic texture derived from the condition embeddings.

    Stands in for a generative model at desk scale: different prompts or
    image strengths select different textures, and the whole pipeline
    downstream of the velocity model is exercised unchanged.
    """
    rng = np.random.default_rng(_condition_seed(bundle))
    colors = _smooth_field(rng, resolution)
    validity = (
        atlas.validity.copy()
        if atlas.resolution == resolution
        else np.ones((resolution, resolution), dtype=bool)
    )
    colors = np.where(validity[..., None], colors, 0.0)
    return TextureMap(colors=colors, validity=validity)


def ground_truth_texture(
    config: PipelineConfig, bundle: ConditionBundle, scene: Scene
) -> TextureMap:
    """The texture the configured oracle model aims at."""
    mc = config.model
    if mc.kind in ("oracle", "noisy-oracle") and mc.texture:
        colors = ioutil.load_png(mc.texture)
        res = colors.shape[0]
        if colors.shape[0] != colors.shape[1]:
            raise ValueError("oracle texture file must be square")
        validity = (
            scene.atlas.validity.copy()
            if res == scene.atlas.resolution
            else bake_atlas_maps(scene.mesh, res).validity.copy()
        )
        return TextureMap(colors=np.where(validity[..., None], colors, 0.0), validity=validity)
    return condition_texture(bundle, config.texture_resolution, scene.atlas)


def build_model(config: PipelineConfig, target_grid: np.ndarray, rows: int, cols: int):
    mc = config.model
    if mc.kind == "noisy-oracle" or mc.bias_sigma > 0.0 or mc.noise_sigma > 0.0:
        return NoisyOracleVelocity(
            target_grid,
            bias_sigma=mc.bias_sigma,
            noise_sigma=mc.noise_sigma,
            seed=mc.model_seed,
            rows=rows,
            cols=cols,
        )
    return OracleVelocity(target_grid)


def build_sync_config(config: PipelineConfig) -> SyncConfig:
    sc = config.sync
    params = None
    if sc.weighter_params:
        params = load_weighter_params(sc.weighter_params)
    return SyncConfig(
        enabled=sc.enabled,
        weighting=sc.weighting,
        beta=sc.beta,
        params=params,
        interval=sc.interval,
        t_range=sc.t_range,
    )


def run_pipeline(config: PipelineConfig, dump_steps: bool = False) -> PipelineResult:
    """Execute the full texturing pipeline and write all artifacts."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}
    timings: dict[str, float] = {}
    stage = "setup"

    def run_stage(name: str, fn):
        nonlocal stage
        stage = name
        started = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            for path in artifacts.values():
                if path.exists():
                    path.rename(path.with_name(path.name + ".partial"))
            raise PipelineError(name, exc) from exc
        timings[name] = time.perf_counter() - started
        return result

    scene = run_stage("scene", lambda: build_scene(config))
    bundle = run_stage("condition", lambda: build_condition(config))
    gt = run_stage("target", lambda: ground_truth_texture(config, bundle, scene))
    rows, cols = default_layout(len(scene.rig))

    def render_target():
        grid = render_views(gt, scene.mesh, scene.rig, layout=(rows, cols))
        return grid.assemble()

    target = run_stage("render-target", render_target)
    model = build_model(config, target, rows, cols)
    sync_cfg = build_sync_config(config)

    def write_depth_grid():
        grid = render_depth_grid(scene.mesh, scene.rig, layout=(rows, cols))
        path = out_dir / "depth_grid.png"
        ioutil.save_png(path, grid.assemble()[..., 0])
        artifacts["depth_grid"] = path

    run_stage("depth-grid", write_depth_grid)

    on_sync = None
    if dump_steps:
        def on_sync(step, t, x0, x0_synced, fused):  # noqa: ANN001
            path = out_dir / f"fused_step_{step:03d}.png"
            ioutil.save_png(path, fused.colors)
            artifacts[f"fused_step_{step:03d}"] = path

    result = run_stage(
        "sample",
        lambda: sample(
            model,
            bundle,
            scene.mesh,
            scene.rig,
            scene.atlas,
            steps=config.sampler.steps,
            sync=sync_cfg,
            seed=config.sampler.seed,
            cfg_scale=config.sampler.cfg_scale,
            distilled_scale=config.sampler.distilled_cfg_scale,
            layout=(rows, cols),
            on_sync=on_sync,
        ),
    )

    def write_views():
        path = out_dir / "views.png"
        ioutil.save_png(path, result.grid.assemble())
        artifacts["views"] = path

    run_stage("write-views", write_views)

    fused = result.fused

    def write_fused():
        ioutil.save_png(out_dir / "fused.png", fused.colors)
        ioutil.save_png(out_dir / "fused_mask.png", fused.validity.astype(np.float64))
        artifacts["fused"] = out_dir / "fused.png"
        artifacts["fused_mask"] = out_dir / "fused_mask.png"

    run_stage("write-fused", write_fused)

    completed = None
    if config.completion.enabled:
        def complete():
            nonlocal completed
            completed = complete_texture(
                fused, scene.atlas, k=config.completion.k, power=config.completion.power
            )
            path = out_dir / "completed.png"
            ioutil.save_png(path, completed.colors)
            artifacts["completed"] = path

        run_stage("complete", complete)

    enhanced = None
    if config.enhancement.enabled:
        def enhance():
            nonlocal enhanced
            base = completed if completed is not None else fused
            atlas_hi = bake_atlas_maps(
                scene.mesh, base.resolution * config.enhancement.factor
            )
            enhanced = enhance_texture(base, atlas_hi, config.enhancement.factor)
            path = out_dir / "enhanced.png"
            ioutil.save_png(path, enhanced.colors)
            artifacts["enhanced"] = path

        run_stage("enhance", enhance)

    def write_manifest():
        entries = dict(config.flattened())
        entries["run.seed"] = str(config.sampler.seed)
        entries["run.kernel_backend"] = _kernels.BACKEND
        entries["run.synced_steps"] = ",".join(str(s) for s in result.synced_steps)
        for name, path in artifacts.items():
            entries[f"artifacts.{name}"] = path.name
        for name, seconds in timings.items():
            entries[f"timing.{name}"] = f"{seconds:.6f}"
        path = out_dir / "manifest.txt"
        ioutil.write_keyvalues(path, entries)
        artifacts["manifest"] = path

    run_stage("manifest", write_manifest)

    return PipelineResult(
        config=config,
        scene=scene,
        condition=bundle,
        ground_truth=gt,
        sample=result,
        fused=fused,
        completed=completed,
        enhanced=enhanced,
        artifacts=artifacts,
    )


def run_eval(config: PipelineConfig, ground_truth: TextureMap | None = None) -> dict[str, float]:
    """Run the pipeline and score it against a known ground-truth texture.

    Defaults to the texture the configured oracle model targets, which makes
    the report an end-to-end self check: texel L1 on covered texels,
    cross-view disagreement of the final grid, cycle loss, and coverage.
    Writes eval.txt (table) and eval.kv (machine readable) to the output
    directory.
    """
    result = run_pipeline(config)
    gt = ground_truth if ground_truth is not None else result.ground_truth
    scene = result.scene
    fused = result.fused
    if gt.resolution != fused.resolution:
        raise ValueError(
            f"ground truth resolution {gt.resolution} does not match fused "
            f"{fused.resolution}"
        )

    both = fused.validity & gt.validity
    texel_l1 = float(np.abs(fused.colors[both] - gt.colors[both]).mean()) if both.any() else 0.0
    disagreement = cross_view_disagreement(result.sample.grid, scene.mesh, scene.rig, scene.atlas)
    partials = reproject_grid(result.sample.grid, scene.rig, scene.mesh, scene.atlas)
    cyc = loss_cycle(partials, fused, scene.mesh, scene.rig)
    coverage = float(fused.validity.sum() / max(scene.atlas.validity.sum(), 1))

    metrics = {
        "texel_l1_covered": texel_l1,
        "cross_view_disagreement": disagreement,
        "loss_cycle": cyc,
        "coverage_fraction": coverage,
    }

    out_dir = Path(config.output_dir)
    width = max(len(k) for k in metrics)
    lines = ["metric".ljust(width) + "  value", "-" * (width + 14)]
    lines += [f"{k.ljust(width)}  {v:.8f}" for k, v in metrics.items()]
    (out_dir / "eval.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    ioutil.write_keyvalues(out_dir / "eval.kv", {k: f"{v:.12g}" for k, v in metrics.items()})
    return metrics
