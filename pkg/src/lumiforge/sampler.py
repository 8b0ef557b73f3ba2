"""Deterministic DDIM sampling with text guidance and light injection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .canvas import CanvasSequence
from .codec import Codec
from .dit import DiT, Schedule, embed_text, schedule_for
from .light_encoder import DEFAULT_LIGHT_SCALE, LightModule
from .render import FrameSequence


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    T_infer: int = 50
    w: float = 7.5
    light_scale: float = DEFAULT_LIGHT_SCALE
    seed: int = 0
    n_frames: int = 16
    resolution: int = 64
    fps: float = 8.0

    def __post_init__(self):
        if self.T_infer < 1:
            raise SamplerError("T_infer must be >= 1")
        if self.w < 0:
            raise SamplerError("w must be >= 0")
        if not 0 <= self.light_scale <= 1:
            raise SamplerError("light_scale must be in [0, 1]")


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, w: float) -> torch.Tensor:
    if eps_cond.shape != eps_uncond.shape:
        raise SamplerError("conditional and unconditional predictions differ in shape")
    if w == 1:
        return eps_cond
    if w == 0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_timesteps(T_train: int, T_infer: int) -> list[int]:
    """Strided steps from T_train down to 1 (unique, descending)."""
    if not 1 <= T_infer <= T_train:
        raise SamplerError(f"T_infer must lie in [1, {T_train}]")
    ts = np.round(np.linspace(T_train, 1, T_infer)).astype(int)
    return [int(t) for t in dict.fromkeys(ts.tolist())]


def ddim_step(z: torch.Tensor, eps: torch.Tensor, t: int, t_prev: int, schedule: Schedule) -> torch.Tensor:
    ab = schedule.alpha_bar(t).item()
    ab_prev = schedule.alpha_bar(t_prev).item()
    x0 = (z - (1.0 - ab) ** 0.5 * eps) / ab ** 0.5
    return ab_prev ** 0.5 * x0 + (1.0 - ab_prev) ** 0.5 * eps


def initial_noise(shape, seed: int) -> torch.Tensor:
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed))


@torch.no_grad()
def sample_latents(backbone: DiT, text: torch.Tensor | None, cfg: SampleConfig,
                   light: LightModule | None = None, canvas_latents: torch.Tensor | None = None,
                   z_init: torch.Tensor | None = None, return_trajectory: bool = False):
    """Run the reverse process; returns (1, F, C, h, w) latents."""
    bc = backbone.config
    schedule = schedule_for(bc)
    shape = (1, cfg.n_frames, bc.latent_channels, bc.latent_size, bc.latent_size)
    z = initial_noise(shape, cfg.seed) if z_init is None else z_init.clone()
    conds = None
    if light is not None:
        if canvas_latents is None:
            raise SamplerError("light module given without canvas latents")
        light.config.check_pair(bc)
        if canvas_latents.ndim == 4:
            canvas_latents = canvas_latents[None]
        if canvas_latents.shape[1] != cfg.n_frames:
            raise SamplerError(f"{canvas_latents.shape[1]} canvases for {cfg.n_frames} frames")
        # canvas conditions do not depend on z_t or t: encode once
        conds = [torch.cat([c, c]) for c in light.encode_light(canvas_latents)]
    null = torch.full((1, bc.d_text), float("nan"))
    text_pair = torch.cat([null if text is None else text.reshape(1, -1), null])
    ts = ddim_timesteps(bc.T_train, cfg.T_infer)
    traj = [z]
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps_c, eps_u = backbone(torch.cat([z, z]), t, text_pair, conds, cfg.light_scale,
                                light.merges if light is not None else None).chunk(2)
        z = ddim_step(z, cfg_combine(eps_c, eps_u, cfg.w), t, t_prev, schedule)
        if return_trajectory:
            traj.append(z)
    return (z, traj) if return_trajectory else z


@torch.no_grad()
def sample(caption: str, canvases: CanvasSequence | None, cfg: SampleConfig, codec: Codec, backbone: DiT,
           light: LightModule | None = None) -> FrameSequence:
    canvas_z = None
    if light is not None:
        if canvases is None:
            raise SamplerError("light module given without canvases")
        if len(canvases) != cfg.n_frames:
            raise SamplerError(f"{len(canvases)} canvases for {cfg.n_frames} frames")
        canvas_z = codec.encode(canvases.as_rgb()).data[None]
    text = torch.from_numpy(embed_text(caption, backbone.config.d_text))
    z = sample_latents(backbone, text, cfg, light, canvas_z)
    video = codec.decode(z[0]).numpy().astype(np.float64)
    return FrameSequence(video, cfg.fps)
