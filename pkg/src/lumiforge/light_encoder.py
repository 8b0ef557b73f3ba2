"""Plug-and-play lighting module: canvas-latent transformer + per-layer merges.

The encoder mirrors the backbone's depth and width. Its per-layer output
projections start at zero and every merge starts as the identity map, so a
freshly built module leaves the backbone untouched.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .dit import Attention, DiTConfig, PosEmbed, mlp, patchify

DEFAULT_LIGHT_SCALE = 0.5


class LightEncoderError(ValueError):
    pass


@dataclass(frozen=True)
class LightEncoderConfig:
    n_layers: int
    d_model: int
    n_heads: int
    patch: int
    latent_channels: int
    latent_size: int
    max_frames: int
    mlp_ratio: float = 4.0
    pos_embed: bool = True
    guidance_scale_default: float = DEFAULT_LIGHT_SCALE

    @classmethod
    def matching(cls, backbone: DiTConfig, **overrides) -> "LightEncoderConfig":
        kw = dict(n_layers=backbone.n_layers, d_model=backbone.d_model, n_heads=backbone.n_heads,
                  patch=backbone.patch, latent_channels=backbone.latent_channels,
                  latent_size=backbone.latent_size, max_frames=backbone.max_frames,
                  mlp_ratio=backbone.mlp_ratio, pos_embed=backbone.pos_embed)
        kw.update(overrides)
        return cls(**kw)

    def check_pair(self, backbone: DiTConfig) -> None:
        for name in ("n_layers", "d_model", "patch", "latent_channels", "latent_size"):
            if getattr(self, name) != getattr(backbone, name):
                raise LightEncoderError(
                    f"light encoder {name}={getattr(self, name)} does not match backbone {getattr(backbone, name)}"
                )


class Merge(nn.Module):
    """out = Linear(h + scale * c), with the Linear starting at the identity."""

    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(d, d)
        with torch.no_grad():
            self.linear.weight.copy_(torch.eye(d))
            self.linear.bias.zero_()

    def forward(self, h: torch.Tensor, c: torch.Tensor, scale: float) -> torch.Tensor:
        if h.shape != c.shape:
            raise LightEncoderError(f"merge shape mismatch: hidden {tuple(h.shape)} vs condition {tuple(c.shape)}")
        return self.linear(h + scale * c)


class EncoderBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, eps=1e-6)
        self.attn = Attention(d, n_heads)
        self.norm2 = nn.LayerNorm(d, eps=1e-6)
        self.mlp = mlp(d, mlp_ratio)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class LightModule(nn.Module):
    def __init__(self, config: LightEncoderConfig, zero_init: bool = True):
        super().__init__()
        self.config = config
        d, p = config.d_model, config.patch
        self.embed = nn.Linear(config.latent_channels * p * p, d)
        self.pos = PosEmbed(config.max_frames, config.latent_size // p, d, config.pos_embed)
        self.blocks = nn.ModuleList(EncoderBlock(d, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers))
        self.proj = nn.ModuleList(nn.Linear(d, d) for _ in range(config.n_layers))
        self.merges = nn.ModuleList(Merge(d) for _ in range(config.n_layers))
        if zero_init:
            for pr in self.proj:
                nn.init.zeros_(pr.weight)
                nn.init.zeros_(pr.bias)

    def encode_light(self, canvas_latents: torch.Tensor) -> list[torch.Tensor]:
        """(B, F, C, h, w) canvas latents -> one (B, N, d_model) condition per layer."""
        cfg = self.config
        if canvas_latents.ndim != 5:
            raise LightEncoderError("canvas latents must be (B, F, C, h, w)")
        b, f, c, h, w = canvas_latents.shape
        if c != cfg.latent_channels or h % cfg.patch or w % cfg.patch:
            raise LightEncoderError(f"canvas latent shape {tuple(canvas_latents.shape)} incompatible with "
                                    f"patch={cfg.patch}, channels={cfg.latent_channels}")
        x = self.embed(patchify(canvas_latents, cfg.patch))
        pe = self.pos(f, h // cfg.patch, w // cfg.patch)
        if pe is not None:
            x = x + pe
        conds = []
        for blk, pr in zip(self.blocks, self.proj):
            x = blk(x)
            conds.append(pr(x))
        return conds

    forward = encode_light

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, "light_encoder", {"config": asdict(self.config), "meta": meta or {}},
                        self.state_dict())

    @classmethod
    def load(cls, path) -> "LightModule":
        doc, state = load_checkpoint(path, "light_encoder")
        m = cls(LightEncoderConfig(**doc["config"]))
        m.load_state_dict(state)
        m.eval()
        return m


def merge(h: torch.Tensor, c: torch.Tensor, scale: float, layer: Merge) -> torch.Tensor:
    return layer(h, c, scale)
