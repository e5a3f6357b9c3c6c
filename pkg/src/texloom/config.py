"""Declarative pipeline configuration.

A run is described by one JSON document (plus optional dotted-key overrides
from the command line), validated into typed sections. The same flattened
key/value view of the config is embedded in the run manifest so a run can be
reproduced from its artifacts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .fusion import WeighterParams


class ConfigError(ValueError):
    pass


def _power_of_two(n: int) -> bool:
    return n >= 16 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RigConfig:
    views: int = 4
    elevation_deg: float = 0.0
    distance: float = 2.0
    view_resolution: int = 256
    projection: str = "perspective"  # perspective | orthographic
    fov_deg: float = 40.0
    ortho_half_height: float = 1.4

    def __post_init__(self):
        if self.projection not in ("perspective", "orthographic"):
            raise ConfigError(f"unknown projection {self.projection!r}")
        if not _power_of_two(self.view_resolution):
            raise ConfigError(
                f"view resolution must be a power of two >= 16, got {self.view_resolution}"
            )


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 30
    cfg_scale: float = 2.0
    distilled_cfg_scale: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"sampler steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class ConditionConfig:
    prompt: str = ""
    images: tuple[tuple[str, float], ...] = ()  # (path, alpha)
    style_reference: str | None = None
    style_alpha: float = 1.0
    negative: str = "white"  # white | grayscale-ref

    def __post_init__(self):
        if self.negative not in ("white", "grayscale-ref"):
            raise ConfigError(f"negative mode must be white or grayscale-ref, got {self.negative!r}")
        if self.negative == "grayscale-ref" and not self.style_reference:
            raise ConfigError("grayscale-ref negative mode requires a style reference image")
        for path, alpha in self.images:
            if not math.isfinite(alpha):
                raise ConfigError(f"non-finite image strength for {path!r}")
        if not math.isfinite(self.style_alpha):
            raise ConfigError("non-finite style strength")


@dataclass(frozen=True)
class SyncSection:
    enabled: bool = True
    weighting: str = "cosine"
    beta: float = 1.0
    interval: int = 1
    t_range: tuple[float, float] = (0.0, 1.0)
    weighter_params: str | None = None  # path to a fitted parameter file

    def __post_init__(self):
        if self.weighting not in ("cosine", "adaptive"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Velocity model for sampling.

    kind "procedural" derives a deterministic target texture from the
    condition embeddings; "oracle" targets renders of a texture file;
    "noisy-oracle" is either of those plus per-view bias and noise.
    """

    kind: str = "procedural"
    texture: str | None = None
    bias_sigma: float = 0.0
    noise_sigma: float = 0.0
    model_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("procedural", "oracle", "noisy-oracle"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "oracle" and not self.texture:
            raise ConfigError("oracle model requires a texture path")


@dataclass(frozen=True)
class CompletionConfig:
    enabled: bool = True
    k: int = 8
    power: float = 2.0


@dataclass(frozen=True)
class EnhancementConfig:
    enabled: bool = False
    factor: int = 4

    def __post_init__(self):
        if self.factor not in (2, 4):
            raise ConfigError(f"enhancement factor must be 2 or 4, got {self.factor}")


@dataclass(frozen=True)
class PipelineConfig:
    mesh: str = "builtin:cube"
    texture_resolution: int = 256
    atlas_resolution: int = 256
    output_dir: str = "out"
    rig: RigConfig = field(default_factory=RigConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    condition: ConditionConfig = field(default_factory=ConditionConfig)
    sync: SyncSection = field(default_factory=SyncSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    enhancement: EnhancementConfig = field(default_factory=EnhancementConfig)

    def __post_init__(self):
        for name in ("texture_resolution", "atlas_resolution"):
            if not _power_of_two(getattr(self, name)):
                raise ConfigError(
                    f"{name} must be a power of two >= 16, got {getattr(self, name)}"
                )

    def flattened(self) -> dict[str, str]:
        """Dotted-key view of every setting, for the run manifest."""
        out: dict[str, str] = {}

        def walk(prefix: str, value):
            if isinstance(value, dict):
                for k, v in value.items():
                    walk(f"{prefix}.{k}" if prefix else k, v)
            elif isinstance(value, (list, tuple)):
                out[prefix] = json.dumps(value)
            else:
                out[prefix] = json.dumps(value) if isinstance(value, str) else str(value)

        walk("config", asdict(self))
        return out


_SECTIONS = {
    "rig": RigConfig,
    "sampler": SamplerConfig,
    "condition": ConditionConfig,
    "sync": SyncSection,
    "model": ModelConfig,
    "completion": CompletionConfig,
    "enhancement": EnhancementConfig,
}


def config_from_dict(data: dict) -> PipelineConfig:
    kwargs: dict = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            section = dict(value)
            if key == "condition" and "images" in section:
                images = []
                for item in section["images"]:
                    if isinstance(item, dict):
                        images.append((item["path"], float(item.get("alpha", 1.0))))
                    else:
                        images.append((item[0], float(item[1])))
                section["images"] = tuple(images)
            if key == "sync" and "t_range" in section:
                section["t_range"] = tuple(section["t_range"])
            try:
                kwargs[key] = _SECTIONS[key](**section)
            except TypeError as exc:
                raise ConfigError(f"bad key in section {key!r}: {exc}") from exc
        elif key in ("mesh", "texture_resolution", "atlas_resolution", "output_dir"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def apply_overrides(config: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply `section.key=value` strings (values parsed as JSON, falling back
    to raw strings)."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        if len(parts) == 1:
            config = replace(config, **{parts[0]: value})
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            section = replace(getattr(config, parts[0]), **{parts[1]: value})
            config = replace(config, **{parts[0]: section})
        else:
            raise ConfigError(f"unknown override target {key!r}")
    return config


def save_weighter_params(path, params: WeighterParams) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "beta": params.beta,
                "lambda_edge": params.lambda_edge,
                "lambda_t": params.lambda_t,
                "temperature": params.temperature,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def load_weighter_params(path) -> WeighterParams:
    with open(path, "r", encoding="utf-8") as fh:
        return WeighterParams(**json.load(fh))
