"""Backbone warmup and dual-branch lighting training.

The lighting branch runs the backbone with light conditions merged in; the
reference branch runs the same frozen backbone on the same noisy latent and
caption without them. Only the lighting module receives updates.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .codec import Codec
from .dit import DiT, DiTConfig, Schedule, embed_text, q_sample, schedule_for
from .light_encoder import DEFAULT_LIGHT_SCALE, LightEncoderConfig, LightModule

log = logging.getLogger(__name__)

Z0_MODES = ("paper", "alpha_weighted")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 3.0
    lr: float = 1e-4
    merge_lr: float | None = None  # merge layers; None means lr
    steps: int = 1500
    batch: int = 1
    seed: int = 0
    z0_mode: str = "paper"
    enable_dis_loss: bool = True
    enable_caption_aug: bool = True
    light_scale: float = DEFAULT_LIGHT_SCALE
    cfg_dropout: float = 0.1
    snr_gamma: float | None = None  # min-SNR weighting of the denoise term; None means unweighted

    def __post_init__(self):
        if self.beta < 0:
            raise TrainingError("beta must be >= 0")
        if not self.lr > 0:
            raise TrainingError("lr must be > 0")
        if self.merge_lr is not None and not self.merge_lr > 0:
            raise TrainingError("merge_lr must be > 0")
        if self.snr_gamma is not None and not self.snr_gamma > 0:
            raise TrainingError("snr_gamma must be > 0")
        if self.z0_mode not in Z0_MODES:
            raise TrainingError(f"z0_mode must be one of {Z0_MODES}")


# -- losses -------------------------------------------------------------------

def channel_stats(z: torch.Tensor, eps: float = 1e-12) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample, per-channel mean and std over frames and space; z is (B, F, C, h, w)."""
    if z.ndim != 5:
        raise TrainingError("expected (B, F, C, h, w) latents")
    b, f, c, h, w = z.shape
    if f * h * w < 2:
        raise TrainingError("need at least two positions per channel for a standard deviation")
    flat = z.transpose(1, 2).reshape(b, c, -1)
    mu = flat.mean(dim=2)
    var = flat.var(dim=2, unbiased=True)
    return mu, torch.sqrt(var + eps)


def disentanglement_per_sample(z0_pred: torch.Tensor, z0_reg: torch.Tensor) -> torch.Tensor:
    if z0_pred.shape != z0_reg.shape:
        raise TrainingError(f"shape mismatch {tuple(z0_pred.shape)} vs {tuple(z0_reg.shape)}")
    mu_p, sd_p = channel_stats(z0_pred)
    mu_r, sd_r = channel_stats(z0_reg)
    return torch.linalg.vector_norm(sd_p - sd_r, dim=1) + torch.linalg.vector_norm(mu_p - mu_r, dim=1)


def disentanglement_loss(z0_pred: torch.Tensor, z0_reg: torch.Tensor) -> torch.Tensor:
    return disentanglement_per_sample(z0_pred, z0_reg).mean()


def denoise_loss(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    if eps_hat.shape != eps.shape:
        raise TrainingError(f"shape mismatch {tuple(eps_hat.shape)} vs {tuple(eps.shape)}")
    return F.mse_loss(eps_hat, eps)


def min_snr_weights(t: torch.Tensor, schedule: Schedule, gamma: float) -> torch.Tensor:
    """Per-sample weights min(SNR, gamma) / SNR for an epsilon-prediction loss."""
    ab = schedule.alpha_bar(t)
    snr = ab / (1 - ab)
    return (torch.clamp(snr, max=gamma) / snr).float()


def denoise_per_sample(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    if eps_hat.shape != eps.shape:
        raise TrainingError(f"shape mismatch {tuple(eps_hat.shape)} vs {tuple(eps.shape)}")
    return ((eps_hat - eps) ** 2).reshape(len(eps), -1).mean(dim=1)


def predicted_z0(z_t: torch.Tensor, eps_hat: torch.Tensor, t: torch.Tensor, schedule: Schedule,
                 mode: str = "paper") -> torch.Tensor:
    if mode == "paper":
        return z_t - eps_hat
    if mode == "alpha_weighted":
        ab = schedule.alpha_bar(t).to(z_t.dtype).reshape(-1, *([1] * (z_t.ndim - 1)))
        return (z_t - (1 - ab).sqrt() * eps_hat) / ab.sqrt()
    raise TrainingError(f"unknown z0 mode {mode!r}")


# -- data ----------------------------------------------------------------------

@dataclass
class LatentBank:
    """Codec latents for every training sample, held in memory."""

    frames: torch.Tensor     # (S, F, C, h, w)
    canvases: torch.Tensor   # (S, F, C, h, w)
    captions: list[str]
    variants: list[list[str]]
    sample_ids: list[str] = field(default_factory=list)
    d_text: int = 64
    _text_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.frames)

    def text(self, caption: str) -> torch.Tensor:
        if caption not in self._text_cache:
            self._text_cache[caption] = torch.from_numpy(embed_text(caption, self.d_text))
        return self._text_cache[caption]


def encode_samples(codec: Codec, samples: Sequence, d_text: int = 64) -> LatentBank:
    with torch.no_grad():
        frames = torch.stack([codec.encode(s.frames).data for s in samples])
        canv = torch.stack([codec.encode(s.canvases).data for s in samples])
    return LatentBank(frames, canv, [s.caption for s in samples], [list(s.caption_variants) for s in samples],
                      [s.sample_id for s in samples], d_text)


def jitter_video(frames: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Colour gains/offset plus a random zoom-crop, applied to a whole (T, H, W, 3) clip."""
    t, h, w, _ = frames.shape
    gains = rng.uniform(0.6, 1.4, size=3)
    offset = rng.uniform(-0.08, 0.08, size=3)
    out = np.clip(frames * gains + offset, 0.0, 1.0)
    crop = int(round(h * rng.uniform(0.8, 1.0)))
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    x = torch.from_numpy(out[:, y0:y0 + crop, x0:x0 + crop].astype(np.float32)).permute(0, 3, 1, 2)
    x = F.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1).numpy()


def jittered_bank(codec: Codec, samples: Sequence, n_variants: int, seed: int, d_text: int = 64) -> LatentBank:
    """Original clips plus ``n_variants`` colour/crop jittered copies of each."""
    rng = np.random.default_rng([seed, 0x717])
    frames, caps = [], []
    with torch.no_grad():
        for s in samples:
            frames.append(codec.encode(s.frames).data)
            caps.append(s.caption)
            for _ in range(n_variants):
                frames.append(codec.encode(jitter_video(s.frames, rng)).data)
                caps.append(s.caption)
    z = torch.stack(frames)
    return LatentBank(z, torch.zeros(0), caps, [[] for _ in caps], [], d_text)


def _texts(bank: LatentBank, idx: torch.Tensor, aug: bool, dropout: float, gen: torch.Generator) -> torch.Tensor:
    rows = []
    for i in idx.tolist():
        options = [bank.captions[i]] + (bank.variants[i] if aug else [])
        j = int(torch.randint(len(options), (1,), generator=gen)) if len(options) > 1 else 0
        rows.append(bank.text(options[j]))
    text = torch.stack(rows)
    drop = torch.rand(len(idx), generator=gen) < dropout
    return torch.where(drop[:, None], torch.full_like(text, float("nan")), text)


# -- backbone warmup -------------------------------------------------------------

def warmup_cosine(steps: int, warmup: int = 100, floor: float = 0.1):
    """Multiplier for LambdaLR: linear warmup, then cosine decay to ``floor``."""
    def f(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        frac = (step - warmup) / max(1, steps - warmup)
        return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))
    return f


def train_backbone(bank: LatentBank, config: DiTConfig, steps: int, lr: float = 5e-4, batch: int = 4,
                   seed: int = 0, ema_decay: float = 0.999, log_every: int = 100) -> tuple[DiT, list[dict]]:
    """Plain text-conditioned denoising; stands in for a pretrained backbone.

    Returns the exponential moving average of the weights when ``ema_decay`` > 0.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    model = DiT(config)
    ema = copy.deepcopy(model) if ema_decay > 0 else model
    sched = schedule_for(config)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    lr_sched = torch.optim.lr_scheduler.LambdaLR(opt, warmup_cosine(steps))
    history = []
    for step in range(steps):
        idx = torch.randint(len(bank), (batch,), generator=gen)
        z0 = bank.frames[idx]
        t = torch.randint(1, config.T_train + 1, (batch,), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = q_sample(z0, t, eps, sched)
        text = _texts(bank, idx, False, config.cfg_dropout, gen)
        loss = denoise_loss(model(z_t, t, text), eps)
        if not torch.isfinite(loss):
            raise TrainingError(f"backbone loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        lr_sched.step()
        if ema is not model:
            with torch.no_grad():
                d = min(ema_decay, (1 + step) / (10 + step))
                for pe, p in zip(ema.parameters(), model.parameters()):
                    pe.lerp_(p, 1.0 - d)
        history.append({"step": step, "loss_denoise": loss.item()})
        if log_every and step % log_every == 0:
            log.info("backbone step %d loss %.4f", step, loss.item())
    ema.eval()
    return ema, history


# -- dual branch ---------------------------------------------------------------

def freeze(model: torch.nn.Module) -> torch.nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    return model.eval()


def dual_branch_losses(backbone: DiT, light: LightModule, z0: torch.Tensor, canvas_z: torch.Tensor,
                       text: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: Schedule,
                       config: TrainConfig) -> dict:
    """Loss terms for one batch; differentiable w.r.t. the lighting module only."""
    z_t = q_sample(z0, t, eps, schedule)
    conds = light.encode_light(canvas_z)
    eps_pred = backbone(z_t, t, text, conds, config.light_scale, light.merges)
    with torch.no_grad():
        eps_reg = backbone(z_t, t, text)
    z0_pred = predicted_z0(z_t, eps_pred, t, schedule, config.z0_mode)
    z0_reg = predicted_z0(z_t, eps_reg, t, schedule, config.z0_mode)
    l_den = denoise_loss(eps_pred, eps)
    beta = config.beta if config.enable_dis_loss else 0.0
    if config.snr_gamma is None:
        l_dis = disentanglement_loss(z0_pred, z0_reg)
        total = l_den + beta * l_dis if beta else l_den
    else:
        # reweights timesteps; the per-sample balance between the two terms is unchanged
        dis = disentanglement_per_sample(z0_pred, z0_reg)
        per = denoise_per_sample(eps_pred, eps) + beta * dis if beta else denoise_per_sample(eps_pred, eps)
        total = (min_snr_weights(t, schedule, config.snr_gamma).to(per.dtype) * per).mean()
        l_dis = dis.mean()
    return {"loss_total": total, "loss_denoise": l_den, "loss_dis": l_dis,
            "eps_pred": eps_pred, "eps_reg": eps_reg, "z0_pred": z0_pred, "z0_reg": z0_reg}


def dual_branch_step(bank: LatentBank, backbone: DiT, light: LightModule, opt: torch.optim.Optimizer,
                     schedule: Schedule, config: TrainConfig, gen: torch.Generator, step: int = 0) -> dict:
    idx = torch.randint(len(bank), (config.batch,), generator=gen)
    t = torch.randint(1, schedule.T + 1, (config.batch,), generator=gen)
    eps = torch.randn(bank.frames[idx].shape, generator=gen)
    text = _texts(bank, idx, config.enable_caption_aug, config.cfg_dropout, gen)
    out = dual_branch_losses(backbone, light, bank.frames[idx], bank.canvases[idx], text, t, eps, schedule, config)
    if not torch.isfinite(out["loss_total"]):
        raise TrainingError(
            f"non-finite loss at step {step}: total={out['loss_total'].item()} "
            f"denoise={out['loss_denoise'].item()} dis={out['loss_dis'].item()} t={t.tolist()}"
        )
    opt.zero_grad()
    out["loss_total"].backward()
    opt.step()
    return {k: out[k].item() for k in ("loss_total", "loss_denoise", "loss_dis")}


def train_light(bank: LatentBank, backbone: DiT, config: TrainConfig, light: LightModule | None = None,
                log_path: str | Path | None = None, log_every: int = 100) -> tuple[LightModule, list[dict]]:
    freeze(backbone)
    torch.manual_seed(config.seed)
    if light is None:
        light = LightModule(LightEncoderConfig.matching(backbone.config))
    light.config.check_pair(backbone.config)
    light.train()
    schedule = schedule_for(backbone.config)
    merge_ids = {id(p) for p in light.merges.parameters()}
    opt = torch.optim.Adam([
        {"params": [p for p in light.parameters() if id(p) not in merge_ids], "lr": config.lr},
        {"params": list(light.merges.parameters()), "lr": config.merge_lr or config.lr},
    ])
    gen = torch.Generator().manual_seed(config.seed + 7)
    history = []
    for step in range(config.steps):
        rec = dual_branch_step(bank, backbone, light, opt, schedule, config, gen, step)
        rec = {"step": step, **rec}
        history.append(rec)
        if log_every and step % log_every == 0:
            log.info("light step %d total %.4f denoise %.4f dis %.4f", step,
                     rec["loss_total"], rec["loss_denoise"], rec["loss_dis"])
    light.eval()
    if log_path is not None:
        write_loss_log(history, log_path)
    return light, history


def write_loss_log(history: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["step", "loss_total", "loss_denoise", "loss_dis"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in history:
            w.writerow([rec["step"]] + [repr(float(rec[c])) for c in cols[1:]])
