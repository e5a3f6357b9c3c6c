"""Command-line interface.

Subcommands: render, reproject, fuse, fit-weighter, eval-loss, embed,
texture, complete, enhance, eval. `texture` and `eval` are driven by a JSON
config file (see config.PipelineConfig) with dotted-key overrides via
--set; the other subcommands expose individual stages for inspection.
TEXLOOM_THREADS controls worker fan-out where a stage supports it.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels, ioutil
from .cameras import Orthographic, Perspective, make_surround_rig
from .config import (
    PipelineConfig,
    apply_overrides,
    load_config,
    load_weighter_params,
    save_weighter_params,
)
from .embedding import embed_image, embed_text, white_negative
from .flow import SyncConfig
from .fusion import (
    FusionSample,
    LossWeights,
    WeighterParams,
    cosine_weights,
    fit_weighter,
    fuse,
    loss_cycle,
    loss_recon,
    loss_smooth,
    simulate_noisy_partials,
    total_weighter_loss,
    weighter_score,
)
from .grids import GridImage, default_layout
from .meshes import bake_atlas_maps
from .pipeline import PipelineError, condition_texture, load_mesh, run_eval, run_pipeline
from .raster import rasterize, render_depth_grid, render_views
from .reproject import reproject_grid
from .textures import TextureMap


def _add_rig_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mesh", required=True, help="OBJ path or builtin:<quad|cube|icosphere>")
    parser.add_argument("--views", type=int, default=4)
    parser.add_argument("--elevation", type=float, default=0.0, help="degrees")
    parser.add_argument("--distance", type=float, default=2.0)
    parser.add_argument("--view-resolution", type=int, default=256)
    parser.add_argument("--projection", choices=("perspective", "orthographic"),
                        default="perspective")
    parser.add_argument("--fov", type=float, default=40.0, help="vertical field of view")
    parser.add_argument("--ortho-half-height", type=float, default=1.4)
    parser.add_argument("--atlas-resolution", type=int, default=256)


def _build_rig(args):
    projection = (
        Perspective(args.fov)
        if args.projection == "perspective"
        else Orthographic(args.ortho_half_height)
    )
    return make_surround_rig(
        view_count=args.views,
        elevation_deg=args.elevation,
        distance=args.distance,
        resolution=args.view_resolution,
        projection=projection,
    )


def _load_scene(args):
    mesh = load_mesh(args.mesh)
    rig = _build_rig(args)
    atlas = bake_atlas_maps(mesh, args.atlas_resolution)
    return mesh, rig, atlas


def _load_texture(path: str, atlas, mask_path: str | None = None) -> TextureMap:
    colors = ioutil.load_png(path)
    if colors.shape[0] != colors.shape[1]:
        raise SystemExit(f"texture {path} must be square")
    if mask_path:
        validity = ioutil.load_png(mask_path)[..., 0] > 0.5
    elif colors.shape[0] == atlas.resolution:
        validity = atlas.validity.copy()
    else:
        validity = np.ones(colors.shape[:2], dtype=bool)
    return TextureMap(colors=np.where(validity[..., None], colors, 0.0), validity=validity)


def _cmd_render(args) -> int:
    mesh, rig, atlas = _load_scene(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    texture = _load_texture(args.texture, atlas) if args.texture else None
    if texture is not None:
        grid = render_views(texture, mesh, rig)
        ioutil.save_png(out / "views.png", grid.assemble())
    depth = render_depth_grid(mesh, rig)
    ioutil.save_png(out / "depth_grid.png", depth.assemble()[..., 0])
    first = rasterize(mesh, rig[0], texture)
    ioutil.save_raw_float(out / "depth_view0.npy", np.where(first.coverage, first.depth, 0.0))
    ioutil.save_png16(out / "depth_view0.png", np.where(first.coverage, first.depth, 0.0),
                      lo=0.0, hi=float(args.distance) + 2.0)
    print(f"wrote renders to {out}")
    return 0


def _cmd_reproject(args) -> int:
    mesh, rig, atlas = _load_scene(args)
    grid = GridImage.from_assembled(ioutil.load_png(args.grid), *default_layout(len(rig)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for partial in reproject_grid(grid, rig, mesh, atlas):
        ioutil.save_png(out / f"partial_{partial.view_id}.png", partial.colors)
        ioutil.save_png(
            out / f"partial_{partial.view_id}_mask.png",
            partial.covered.astype(np.float64),
        )
    print(f"wrote {len(rig)} partial textures to {out}")
    return 0


def _weights_for(args, partials, atlas, t: float):
    if args.weighting == "adaptive":
        params = load_weighter_params(args.params) if args.params else WeighterParams()
        return weighter_score(partials, atlas, t, params)
    return cosine_weights(partials, args.beta)


def _cmd_fuse(args) -> int:
    mesh, rig, atlas = _load_scene(args)
    grid = GridImage.from_assembled(ioutil.load_png(args.grid), *default_layout(len(rig)))
    partials = reproject_grid(grid, rig, mesh, atlas)
    fused = fuse(partials, _weights_for(args, partials, atlas, args.t))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ioutil.save_png(out / "fused.png", fused.colors)
    ioutil.save_png(out / "fused_mask.png", fused.validity.astype(np.float64))
    print(f"fused {len(partials)} views -> {out / 'fused.png'}")
    return 0


def _cmd_fit_weighter(args) -> int:
    mesh, rig, atlas = _load_scene(args)
    if args.texture:
        gt = _load_texture(args.texture, atlas)
    else:
        gt = condition_texture(embed_and_bundle(args.prompt), atlas.resolution, atlas)
    timesteps = [float(t) for t in args.timesteps.split(",")]
    dataset = [
        FusionSample(
            partials=simulate_noisy_partials(gt, mesh, rig, atlas, t, seed=args.seed + i),
            ground_truth=gt,
            t=t,
        )
        for i, t in enumerate(timesteps)
    ]
    result = fit_weighter(dataset, WeighterParams(), args.budget, mesh, rig, atlas)
    save_weighter_params(args.out, result.params)
    print(
        f"fitted params -> {args.out} (loss {result.loss:.6f}, "
        f"{result.evaluations} evaluations)"
    )
    return 0


def embed_and_bundle(prompt: str):
    from .embedding import aggregate

    return aggregate(embed_text(prompt or ""), [])


def _cmd_eval_loss(args) -> int:
    mesh, rig, atlas = _load_scene(args)
    gt = _load_texture(args.gt, atlas)
    fused = _load_texture(args.fused, atlas, args.fused_mask)
    grid = render_views(gt, mesh, rig)
    partials = reproject_grid(grid, rig, mesh, atlas)
    weights = LossWeights()
    l_pec = loss_recon(fused, gt, mesh, rig, args.t, weights)
    l_cyc = loss_cycle(partials, fused, mesh, rig)
    l_sm = float(np.mean([loss_smooth(rasterize(mesh, cam, fused).color) for cam in rig]))
    total = weights.lambda_pec * l_pec + weights.lambda_cyc * l_cyc + weights.lambda_sm * l_sm
    for name, value in [("recon", l_pec), ("cycle", l_cyc), ("smooth", l_sm), ("total", total)]:
        print(f"{name:7s} {value:.8f}")
    return 0


def _cmd_embed(args) -> int:
    if args.text is not None:
        emb = embed_text(args.text)
    elif args.image:
        emb = embed_image(ioutil.load_png(args.image))
    else:
        emb = white_negative()
    if args.out:
        ioutil.save_embedding(args.out, emb)
        print(f"wrote embedding to {args.out}")
    norm = float(np.linalg.norm(emb.values))
    head = ", ".join(f"{v:.4f}" for v in emb.values[:6])
    print(f"modality={emb.modality} dim={emb.values.size} norm={norm:.6f}")
    print(f"values[:6] = [{head}, ...]")
    return 0


def _pipeline_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"sampler.seed={args.seed}")
    if args.output_dir:
        overrides.append(f'output_dir="{args.output_dir}"')
    return apply_overrides(config, overrides)


def _cmd_texture(args) -> int:
    config = _pipeline_config(args)
    result = run_pipeline(config, dump_steps=args.dump_steps)
    for name in sorted(result.artifacts):
        print(f"{name}: {result.artifacts[name]}")
    return 0


def _cmd_eval(args) -> int:
    config = _pipeline_config(args)
    gt = None
    if args.gt:
        atlas_res = config.atlas_resolution
        colors = ioutil.load_png(args.gt)
        if colors.shape[0] != atlas_res:
            raise SystemExit(f"--gt must be {atlas_res}x{atlas_res} to match the atlas")
        gt = TextureMap(colors=colors, validity=np.ones(colors.shape[:2], dtype=bool))
    metrics = run_eval(config, gt)
    width = max(len(k) for k in metrics)
    for k, v in metrics.items():
        print(f"{k.ljust(width)}  {v:.8f}")
    return 0


def _cmd_complete(args) -> int:
    from .uvtools import complete_texture

    mesh, rig, atlas = _load_scene(args)
    texture = _load_texture(args.texture, atlas, args.mask)
    done = complete_texture(texture, atlas, k=args.k)
    ioutil.save_png(args.out, done.colors)
    print(f"completed texture -> {args.out}")
    return 0


def _cmd_enhance(args) -> int:
    from .uvtools import enhance_texture

    mesh, rig, atlas = _load_scene(args)
    texture = _load_texture(args.texture, atlas, args.mask)
    atlas_hi = bake_atlas_maps(mesh, texture.resolution * args.factor)
    enhanced = enhance_texture(texture, atlas_hi, args.factor)
    ioutil.save_png(args.out, enhanced.colors)
    print(f"enhanced texture ({texture.resolution} -> {enhanced.resolution}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texloom", description="Multi-view consistent texture synthesis."
    )
    parser.add_argument("--version", action="version",
                        version=f"texloom {__version__} (kernels: {_kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render view grid and depth conditioning")
    _add_rig_args(p)
    p.add_argument("--texture", help="texture PNG to sample")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("reproject", help="lift a view grid onto the UV atlas")
    _add_rig_args(p)
    p.add_argument("--grid", required=True, help="assembled view grid PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_reproject)

    p = sub.add_parser("fuse", help="reproject a view grid and fuse it")
    _add_rig_args(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--weighting", choices=("cosine", "adaptive"), default="cosine")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--params", help="fitted weighter parameter file")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fuse)

    p = sub.add_parser("fit-weighter", help="fit adaptive weighting parameters")
    _add_rig_args(p)
    p.add_argument("--texture", help="ground-truth texture PNG (default: procedural)")
    p.add_argument("--prompt", default="fit corpus")
    p.add_argument("--timesteps", default="0.3,0.5,0.7")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output parameter JSON")
    p.set_defaults(fn=_cmd_fit_weighter)

    p = sub.add_parser("eval-loss", help="loss components of a fused texture")
    _add_rig_args(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--fused", required=True)
    p.add_argument("--fused-mask")
    p.add_argument("--t", type=float, default=0.0)
    p.set_defaults(fn=_cmd_eval_loss)

    p = sub.add_parser("embed", help="inspect or export embeddings")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text")
    group.add_argument("--image")
    group.add_argument("--white", action="store_true")
    p.add_argument("--out", help="write a binary embedding file")
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("texture", help="run the full texturing pipeline")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted keys)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--dump-steps", action="store_true",
                   help="write the fused texture of every synced step")
    p.set_defaults(fn=_cmd_texture)

    p = sub.add_parser("eval", help="run the pipeline and score it")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--gt", help="ground-truth texture PNG")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("complete", help="fill occluded texels (3D-aware)")
    _add_rig_args(p)
    p.add_argument("--texture", required=True)
    p.add_argument("--mask", help="validity mask PNG")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_complete)

    p = sub.add_parser("enhance", help="seam-aware upscale")
    _add_rig_args(p)
    p.add_argument("--texture", required=True)
    p.add_argument("--mask")
    p.add_argument("--factor", type=int, default=4, choices=(2, 4))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_enhance)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
