"""Run configuration: one JSON document drives every CLI subcommand.

The document is validated in full before any work starts and unknown keys
are rejected. ``LUMIFORGE_SEED`` in the environment overrides ``seed``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import (BaseModel, ConfigDict, Discriminator, Field, Tag, ValidationError, field_validator,
                      model_validator)

from .codec import CodecConfig
from .dit import DiTConfig
from .grid import (LightGrid, arc_trajectory, build_grid, linear_trajectory, load_trajectory,
                   static_trajectory)
from .sampler import SampleConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1
SEED_ENV = "LUMIFORGE_SEED"


class ConfigError(ValueError):
    """Invalid run configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LinearSpec(_Strict):
    kind: Literal["linear"] = "linear"
    start: tuple[int, int, int]
    end: tuple[int, int, int]


class ArcSpec(_Strict):
    kind: Literal["arc"]
    center: tuple[int, int, int]
    radius_cm: float = Field(gt=0)
    plane: tuple[str, str] = ("i", "k")
    angle_start: float
    angle_end: float


class StaticSpec(_Strict):
    kind: Literal["static"]
    point: tuple[int, int, int]


class FileSpec(_Strict):
    kind: Literal["file"]
    path: str


def _kind(v):
    return v.get("kind", "linear") if isinstance(v, dict) else getattr(v, "kind", None)


TrajectorySpec = Annotated[Union[Annotated[LinearSpec, Tag("linear")], Annotated[ArcSpec, Tag("arc")],
                                 Annotated[StaticSpec, Tag("static")], Annotated[FileSpec, Tag("file")]],
                           Discriminator(_kind)]


def build_trajectory(spec: TrajectorySpec, grid: LightGrid, n_frames: int):
    if isinstance(spec, LinearSpec):
        return linear_trajectory(grid, spec.start, spec.end, n_frames)
    if isinstance(spec, ArcSpec):
        return arc_trajectory(grid, spec.center, spec.radius_cm, spec.plane, spec.angle_start,
                              spec.angle_end, n_frames)
    if isinstance(spec, StaticSpec):
        return static_trajectory(grid, spec.point, n_frames)
    return load_trajectory(spec.path).resample(n_frames)


def desk_trajectories() -> list[LinearSpec]:
    """Left-right, right-left, bottom-top and diagonal sweeps in front of the face."""
    return [
        LinearSpec(start=(0, 28, 16), end=(32, 28, 16)),
        LinearSpec(start=(32, 28, 16), end=(0, 28, 16)),
        LinearSpec(start=(16, 28, 0), end=(16, 28, 32)),
        LinearSpec(start=(0, 28, 0), end=(32, 28, 32)),
    ]


class GridSection(_Strict):
    extent_cm: float = 160.0
    spacing_cm: float = 5.0
    origin_cm: tuple[float, float, float] = (-80.0, -80.0, 0.0)

    def build(self) -> LightGrid:
        return build_grid(self.extent_cm, self.spacing_cm, self.origin_cm)


class DatasetSection(_Strict):
    subjects: list[int] = [0, 1]
    trajectories: list[TrajectorySpec] = Field(default_factory=desk_trajectories)
    frames_per_video: int = Field(16, ge=1)
    resolution: int = Field(64, ge=8)
    n_caption_variants: int = Field(4, ge=1)
    caption_aug: bool = True

    @field_validator("subjects")
    @classmethod
    def _subjects(cls, v):
        if not v:
            raise ValueError("at least one subject is required")
        if len(set(v)) != len(v):
            raise ValueError("subject ids must be unique")
        return v


class CodecSection(_Strict):
    f: int = 4
    latent_channels: int = 4
    kl_weight: float = 1e-6
    width: int = 32
    lr: float = 1e-3
    batch: int = 32
    steps: int = Field(300, ge=0)

    def model_config_(self) -> CodecConfig:
        return CodecConfig(**self.model_dump(exclude={"steps"}))


class BackboneSection(_Strict):
    n_layers: int = 4
    d_model: int = 128
    n_heads: int = 4
    patch: int = 4
    T_train: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    d_text: int = 64
    mlp_ratio: float = 4.0
    n_text_tokens: int = 4
    pos_embed: bool = True
    cfg_dropout: float = 0.1
    steps: int = Field(3000, ge=0)
    lr: float = 1e-3
    batch: int = 4
    jitter_variants: int = Field(3, ge=0)

    def dit_config(self, latent_channels: int, latent_size: int, max_frames: int) -> DiTConfig:
        kw = self.model_dump(exclude={"steps", "lr", "batch", "jitter_variants"})
        return DiTConfig(latent_channels=latent_channels, latent_size=latent_size, max_frames=max_frames, **kw)


class LightSection(_Strict):
    # desk-scale calibration; TrainConfig keeps the reference values
    beta: float = Field(0.01, ge=0)
    lr: float = Field(1e-4, gt=0)
    merge_lr: float | None = Field(None, gt=0)
    snr_gamma: float | None = Field(1.0, gt=0)
    steps: int = Field(2000, ge=0, le=100_000)
    batch: int = Field(4, ge=1)
    z0_mode: Literal["paper", "alpha_weighted"] = "paper"
    enable_dis_loss: bool = True
    enable_caption_aug: bool = True
    light_scale: float = Field(0.5, ge=0, le=1)
    cfg_dropout: float = Field(0.1, ge=0, le=1)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.model_dump())


class SampleSection(_Strict):
    T_infer: int = Field(25, ge=1)
    w: float = Field(7.5, ge=0)
    light_scale: float = Field(0.5, ge=0, le=1)
    fps: float = Field(8.0, gt=0)

    def sample_config(self, seed: int, n_frames: int, resolution: int, **overrides) -> SampleConfig:
        kw = dict(self.model_dump(), seed=seed, n_frames=n_frames, resolution=resolution)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return SampleConfig(**kw)


class EvalSection(_Strict):
    n_heldout: int = Field(20, ge=1)
    heldout_seed: int = 1009
    diversity_seeds: int = Field(4, ge=2)


class SweepSection(_Strict):
    light_scales: list[float] = [0.1, 0.3, 0.5, 0.7, 0.9]
    ablations: dict[str, str] = Field(default_factory=dict)

    @field_validator("light_scales")
    @classmethod
    def _scales(cls, v):
        if not v:
            raise ValueError("sweep list is empty")
        if any(not 0 <= s <= 1 for s in v):
            raise ValueError("light scales must lie in [0, 1]")
        return v


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    work_dir: str = "runs/default"
    grid: GridSection = GridSection()
    dataset: DatasetSection = DatasetSection()
    codec: CodecSection = CodecSection()
    backbone: BackboneSection = BackboneSection()
    light: LightSection = LightSection()
    sample: SampleSection = SampleSection()
    eval: EvalSection = EvalSection()
    sweep: SweepSection = SweepSection()

    @model_validator(mode="after")
    def _shapes(self):
        r, f = self.dataset.resolution, self.codec.f
        if r % f:
            raise ValueError(f"dataset.resolution {r} is not divisible by codec.f {f}")
        if (r // f) % self.backbone.patch:
            raise ValueError(f"latent size {r // f} is not divisible by backbone.patch {self.backbone.patch}")
        if self.backbone.d_model % self.backbone.n_heads:
            raise ValueError("backbone.d_model must be divisible by backbone.n_heads")
        return self

    # derived locations
    def path(self, name: str) -> Path:
        return Path(self.work_dir) / name

    @property
    def dataset_dir(self) -> Path:
        return self.path("dataset")

    @property
    def codec_path(self) -> Path:
        return self.path("codec.ckpt")

    @property
    def backbone_path(self) -> Path:
        return self.path("backbone.ckpt")

    @property
    def light_path(self) -> Path:
        return self.path("light.ckpt")

    def dit_config(self) -> DiTConfig:
        return self.backbone.dit_config(self.codec.latent_channels, self.dataset.resolution // self.codec.f,
                                        self.dataset.frames_per_video)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _loc(loc: tuple) -> str:
    parts = []
    for p in loc:
        if isinstance(p, int):
            parts.append(f"[{p}]")
        elif str(p) in ("linear", "arc", "static", "file") or str(p).startswith("function-"):
            continue  # union tag, not a key
        else:
            parts.append(("." if parts else "") + str(p))
    return "".join(parts)


def parse_config(doc: dict, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    if SEED_ENV in env:
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer", "seed") from None
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(err["msg"], _loc(err["loc"])) from None


def load_config(path: str | Path | None, env: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config({}, env)
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc, env)
