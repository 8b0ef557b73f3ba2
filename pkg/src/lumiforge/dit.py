"""Toy text-to-video diffusion transformer (epsilon prediction)."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint


class DiTError(ValueError):
    pass


@dataclass(frozen=True)
class DiTConfig:
    n_layers: int = 6
    d_model: int = 128
    n_heads: int = 4
    patch: int = 2
    T_train: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    d_text: int = 64
    latent_channels: int = 4
    latent_size: int = 16
    max_frames: int = 16
    mlp_ratio: float = 4.0
    n_text_tokens: int = 4
    pos_embed: bool = True
    cfg_dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise DiTError("d_model must be divisible by n_heads")
        if self.latent_size % self.patch:
            raise DiTError("latent size must be divisible by patch")
        if not 0 < self.beta_min < self.beta_max < 1:
            raise DiTError("need 0 < beta_min < beta_max < 1")

    @property
    def grid(self) -> int:
        return self.latent_size // self.patch


# -- schedule ---------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    betas: np.ndarray       # index t-1 for step t in [1, T]
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> torch.Tensor:
        """alpha_bar at integer steps ``t``; step 0 maps to 1."""
        t = torch.as_tensor(t, dtype=torch.long)
        table = torch.cat([torch.ones(1, dtype=torch.float64), torch.from_numpy(self.alpha_bars)])
        return table[t]


def linear_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 2e-2) -> Schedule:
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    alphas = 1.0 - betas
    return Schedule(betas, alphas, np.cumprod(alphas))


def schedule_for(config: DiTConfig) -> Schedule:
    return linear_schedule(config.T_train, config.beta_min, config.beta_max)


def q_sample(z0: torch.Tensor, t, eps: torch.Tensor, schedule: Schedule) -> torch.Tensor:
    """Forward noising; ``t`` is a step in [1, T] (scalar or one per batch item)."""
    t = torch.as_tensor(t, dtype=torch.long)
    if eps.shape != z0.shape:
        raise DiTError("eps must have the shape of z0")
    if torch.any(t < 1) or torch.any(t > schedule.T):
        raise DiTError(f"timestep out of range [1, {schedule.T}]")
    ab = schedule.alpha_bar(t).to(z0.dtype)
    ab = ab.reshape(ab.shape + (1,) * (z0.ndim - ab.ndim))
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


# -- text ---------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def embed_text(caption: str, d_text: int = 64) -> np.ndarray:
    """Hashed signed bag-of-tokens, L2-normalised; the empty string maps to zeros."""
    v = np.zeros(d_text, dtype=np.float64)
    for tok in _TOKEN.findall(caption.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
        v[h % d_text] += 1.0 if (h >> 32) & 1 else -1.0
    n = np.linalg.norm(v)
    return (v / n if n > 0 else v).astype(np.float32)


# -- network --------------------------------------------------------------------

def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def patchify(z: torch.Tensor, p: int) -> torch.Tensor:
    """(B, F, C, H, W) -> (B, F*(H/p)*(W/p), C*p*p), frame-major then row-major."""
    b, f, c, h, w = z.shape
    z = z.reshape(b, f, c, h // p, p, w // p, p)
    return z.permute(0, 1, 3, 5, 2, 4, 6).reshape(b, f * (h // p) * (w // p), c * p * p)


def unpatchify(x: torch.Tensor, f: int, c: int, h: int, w: int, p: int) -> torch.Tensor:
    b = x.shape[0]
    x = x.reshape(b, f, h // p, w // p, c, p, p)
    return x.permute(0, 1, 4, 2, 5, 3, 6).reshape(b, f, c, h, w)


class PosEmbed(nn.Module):
    """Factorised learned (frame, row, col) embeddings, summed."""

    def __init__(self, max_frames: int, grid: int, d: int, enabled: bool = True):
        super().__init__()
        self.enabled = enabled
        self.frame = nn.Parameter(torch.randn(max_frames, d) * 0.02)
        self.row = nn.Parameter(torch.randn(grid, d) * 0.02)
        self.col = nn.Parameter(torch.randn(grid, d) * 0.02)

    def forward(self, n_frames: int, gh: int, gw: int) -> torch.Tensor | None:
        if not self.enabled:
            return None
        if n_frames > len(self.frame):
            raise DiTError(f"{n_frames} frames exceed max_frames={len(self.frame)}")
        pe = self.frame[:n_frames, None, None] + self.row[None, :gh, None] + self.col[None, None, :gw]
        return pe.reshape(n_frames * gh * gw, -1)


class Attention(nn.Module):
    def __init__(self, d: int, n_heads: int, d_kv: int | None = None):
        super().__init__()
        self.h = n_heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d_kv or d, 2 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x, ctx=None):
        ctx = x if ctx is None else ctx
        b, n, d = x.shape
        q = self.q(x).reshape(b, n, self.h, -1).transpose(1, 2)
        k, v = self.kv(ctx).reshape(b, ctx.shape[1], 2, self.h, -1).permute(2, 0, 3, 1, 4)
        o = F.scaled_dot_product_attention(q, k, v)
        return self.out(o.transpose(1, 2).reshape(b, n, d))


def mlp(d: int, ratio: float) -> nn.Sequential:
    hidden = int(d * ratio)
    return nn.Sequential(nn.Linear(d, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, d))


def modulate(x, shift, scale):
    return x * (1 + scale[:, None]) + shift[:, None]


class DiTBlock(nn.Module):
    def __init__(self, d: int, n_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(d, n_heads)
        self.norm_x = nn.LayerNorm(d, eps=1e-6)
        self.cross = Attention(d, n_heads)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.mlp = mlp(d, mlp_ratio)
        self.ada = nn.Linear(d, 6 * d)

    def forward(self, x, cond, text_tokens):
        sh1, sc1, g1, sh2, sc2, g2 = self.ada(F.silu(cond)).chunk(6, dim=-1)
        x = x + g1[:, None] * self.attn(modulate(self.norm1(x), sh1, sc1))
        x = x + self.cross(self.norm_x(x), text_tokens)
        x = x + g2[:, None] * self.mlp(modulate(self.norm2(x), sh2, sc2))
        return x


class DiT(nn.Module):
    def __init__(self, config: DiTConfig = DiTConfig(), zero_init: bool = True):
        super().__init__()
        self.config = config
        d, p, c = config.d_model, config.patch, config.latent_channels
        self.embed = nn.Linear(c * p * p, d)
        self.pos = PosEmbed(config.max_frames, config.grid, d, config.pos_embed)
        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.null_text = nn.Parameter(torch.zeros(config.d_text))
        self.text_tokens = nn.Linear(config.d_text, config.n_text_tokens * d)
        self.text_cond = nn.Linear(config.d_text, d)
        self.blocks = nn.ModuleList(DiTBlock(d, config.n_heads, config.mlp_ratio) for _ in range(config.n_layers))
        self.norm_out = nn.LayerNorm(d, elementwise_affine=False, eps=1e-6)
        self.ada_out = nn.Linear(d, 2 * d)
        self.out = nn.Linear(d, c * p * p)
        if zero_init:
            for blk in self.blocks:
                nn.init.zeros_(blk.ada.weight)
                nn.init.zeros_(blk.ada.bias)
            for m in (self.ada_out, self.out):
                nn.init.zeros_(m.weight)
                nn.init.zeros_(m.bias)

    def tokens(self, z: torch.Tensor) -> torch.Tensor:
        b, f, c, h, w = z.shape
        x = self.embed(patchify(z, self.config.patch))
        pe = self.pos(f, h // self.config.patch, w // self.config.patch)
        return x if pe is None else x + pe

    def forward(self, z_t: torch.Tensor, t, text: torch.Tensor | None,
                light_cond: list[torch.Tensor] | None = None, light_scale: float = 0.5,
                merges: nn.ModuleList | None = None) -> torch.Tensor:
        """Predict the injected noise.

        ``z_t`` is (B, F, C, h, w); ``text`` is (B, d_text) or None for the
        learned null embedding (also used per row where ``text`` is NaN).
        When ``light_cond`` is given, ``merges[l]`` folds ``light_cond[l]`` into
        the hidden state after block ``l``.
        """
        cfg = self.config
        b, f, c, h, w = z_t.shape
        if c != cfg.latent_channels:
            raise DiTError(f"latent has {c} channels, model expects {cfg.latent_channels}")
        if h % cfg.patch or w % cfg.patch:
            raise DiTError("latent size not divisible by patch")
        if light_cond is not None:
            if merges is None:
                raise DiTError("light_cond given without merge layers")
            if len(light_cond) != cfg.n_layers or len(merges) != cfg.n_layers:
                raise DiTError(f"light condition has {len(light_cond)} layers, backbone has {cfg.n_layers}")
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(b)
        if text is None:
            text = self.null_text.expand(b, -1)
        else:
            null = torch.isnan(text).any(dim=1, keepdim=True)
            text = torch.where(null, self.null_text.expand(b, -1), text)
        cond = self.t_mlp(timestep_embedding(t, cfg.d_model).to(z_t.dtype)) + self.text_cond(text)
        ctx = self.text_tokens(text).reshape(b, cfg.n_text_tokens, cfg.d_model)
        x = self.tokens(z_t)
        for l, blk in enumerate(self.blocks):
            x = blk(x, cond, ctx)
            if light_cond is not None:
                x = merges[l](x, light_cond[l], light_scale)
        sh, sc = self.ada_out(F.silu(cond)).chunk(2, dim=-1)
        x = self.out(modulate(self.norm_out(x), sh, sc))
        return unpatchify(x, f, c, h, w, cfg.patch)

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, "dit", {"config": asdict(self.config), "meta": meta or {}}, self.state_dict())

    @classmethod
    def load(cls, path) -> "DiT":
        doc, state = load_checkpoint(path, "dit")
        model = cls(DiTConfig(**doc["config"]))
        model.load_state_dict(state)
        model.eval()
        return model
