"""Shared per-frame convolutional VAE for subject frames and lighting canvases."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    f: int = 4
    latent_channels: int = 4
    kl_weight: float = 1e-6
    width: int = 32
    lr: float = 1e-3
    batch: int = 32

    def __post_init__(self):
        if self.f < 1 or self.f & (self.f - 1):
            raise CodecError("downsample factor must be a power of two")
        if self.latent_channels < 1:
            raise CodecError("latent_channels must be >= 1")
        if self.kl_weight < 0:
            raise CodecError("kl_weight must be non-negative")


@dataclass
class LatentVideo:
    data: torch.Tensor  # (T, C, h, w)
    f: int
    channels: int

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


class _ResBlock(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.silu(self.conv1(F.silu(x))))


class Codec(nn.Module):
    def __init__(self, config: CodecConfig = CodecConfig()):
        super().__init__()
        self.config = config
        w, c = config.width, config.latent_channels
        n_down = int(math.log2(config.f))
        enc = [nn.Conv2d(3, w, 3, padding=1)]
        ch = w
        for _ in range(n_down):
            enc += [nn.SiLU(), nn.Conv2d(ch, 2 * w, 3, stride=2, padding=1)]
            ch = 2 * w
        enc += [_ResBlock(ch), nn.SiLU(), nn.Conv2d(ch, 2 * c, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)
        dec = [nn.Conv2d(c, ch, 3, padding=1), _ResBlock(ch)]
        for _ in range(n_down):
            dec += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(ch, w, 3, padding=1), nn.SiLU()]
            ch = w
        dec += [nn.Conv2d(ch, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)
        # latents are (mean - shift) * scale before reaching the diffusion model
        self.register_buffer("shift", torch.zeros(c))
        self.register_buffer("scale", torch.ones(()))
        # linear image -> text-space projection used by the text/video metric
        self.register_buffer("clip_proj", torch.zeros(0))

    def posterior(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean, logvar = self.encoder(x).chunk(2, dim=1)
        return mean, logvar.clamp(-20.0, 10.0)

    def _to_nchw(self, video) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(video) if not torch.is_tensor(video) else video, dtype=torch.float32)
        if x.ndim != 4:
            raise CodecError(f"expected (T, H, W, C) video, got shape {tuple(x.shape)}")
        if x.shape[-1] == 1:
            x = x.expand(*x.shape[:-1], 3)
        if x.shape[-1] != 3:
            raise CodecError("video must have 1 or 3 channels")
        h, w = x.shape[1:3]
        if h % self.config.f or w % self.config.f:
            raise CodecError(f"frame size {h}x{w} not divisible by f={self.config.f}")
        return x.permute(0, 3, 1, 2).contiguous()

    @torch.no_grad()
    def encode(self, video) -> LatentVideo:
        """Posterior mean of every frame, scaled; ``video`` is (T, H, W, 3|1) in [0, 1]."""
        x = self._to_nchw(video)
        mean, _ = self.posterior(x * 2.0 - 1.0)
        mean = (mean - self.shift[:, None, None]) * self.scale
        return LatentVideo(mean, self.config.f, self.config.latent_channels)

    @torch.no_grad()
    def decode(self, latent: LatentVideo | torch.Tensor) -> torch.Tensor:
        z = latent.data if isinstance(latent, LatentVideo) else latent
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise CodecError(f"latent shape {tuple(z.shape)} does not match codec channels "
                             f"{self.config.latent_channels}")
        x = self.decoder(z / self.scale + self.shift[:, None, None])
        return ((x + 1.0) / 2.0).clamp(0.0, 1.0).permute(0, 2, 3, 1)

    def reconstruct_raw(self, x: torch.Tensor, gen: torch.Generator | None) -> tuple[torch.Tensor, torch.Tensor]:
        """Training path on NCHW input in [-1, 1]: sampled reconstruction and KL."""
        mean, logvar = self.posterior(x)
        std = torch.exp(0.5 * logvar)
        z = mean + std * torch.randn(mean.shape, generator=gen)
        kl = 0.5 * (mean.pow(2) + std.pow(2) - 1.0 - logvar).sum(dim=(1, 2, 3)).mean()
        return self.decoder(z), kl

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, "codec", {"config": asdict(self.config), "meta": meta or {}}, self.state_dict())

    @classmethod
    def load(cls, path) -> "Codec":
        doc, state = load_checkpoint(path, "codec")
        codec = cls(CodecConfig(**doc["config"]))
        codec.clip_proj = state["clip_proj"]
        codec.load_state_dict(state)
        codec.eval()
        return codec


def _pool_features(frames: torch.Tensor) -> torch.Tensor:
    """(N, H, W, 3) -> centred 8x8 thumbnails flattened, (N, 192)."""
    x = frames.permute(0, 3, 1, 2)
    x = F.adaptive_avg_pool2d(x, 8).reshape(len(x), -1)
    return x - 0.5


def image_text_embed(codec: Codec, frames) -> torch.Tensor:
    """Unit-norm embeddings in the text-embedding space, (N, d_text)."""
    if codec.clip_proj.numel() == 0:
        raise CodecError("codec has no fitted image/text projection")
    x = _pool_features(torch.as_tensor(np.asarray(frames), dtype=torch.float32))
    e = torch.cat([x, torch.ones(len(x), 1)], dim=1) @ codec.clip_proj
    return F.normalize(e, dim=1)


def fit_image_text_projection(frames: torch.Tensor, text_emb: torch.Tensor, ridge: float = 1e-2) -> torch.Tensor:
    x = _pool_features(frames).double()
    x = torch.cat([x, torch.ones(len(x), 1, dtype=x.dtype)], dim=1)
    a = x.T @ x + ridge * torch.eye(x.shape[1], dtype=x.dtype)
    return torch.linalg.solve(a, x.T @ text_emb.double()).float().contiguous()


def fit_codec(images: np.ndarray, config: CodecConfig, steps: int, seed: int,
                captions: tuple[np.ndarray, np.ndarray] | None = None,
                log_every: int = 100) -> tuple[Codec, list[dict]]:
    """Fit the codec on ``images`` (N, H, W, 3) in [0, 1].

    ``captions`` optionally pairs subject frames with text embeddings; a linear
    image->text projection is fitted on them after the reconstruction run.
    """
    if len(images) == 0:
        raise CodecError("no training images")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    codec = Codec(config)
    data = torch.as_tensor(images, dtype=torch.float32).permute(0, 3, 1, 2) * 2.0 - 1.0
    opt = torch.optim.Adam(codec.parameters(), lr=config.lr)
    history = []
    for step in range(steps):
        idx = torch.randint(len(data), (min(config.batch, len(data)),), generator=gen)
        x = data[idx]
        rec, kl = codec.reconstruct_raw(x, gen)
        mse = F.mse_loss(rec, x)
        loss = mse + config.kl_weight * kl
        if not torch.isfinite(loss):
            raise FloatingPointError(f"codec loss diverged at step {step}: mse={mse.item()} kl={kl.item()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "loss": loss.item(), "mse": mse.item(), "kl": kl.item()})
        if log_every and step % log_every == 0:
            log.info("codec step %d mse %.5f kl %.2f", step, mse.item(), kl.item())
    codec.eval()
    with torch.no_grad():
        if steps > 0:
            # normalise on video frames when known: canvases are mostly dark and would bias the centre
            ref = data if captions is None else codec._to_nchw(captions[0]) * 2.0 - 1.0
            mean, _ = codec.posterior(ref)
            codec.shift.copy_(mean.mean(dim=(0, 2, 3)))
            std = (mean - codec.shift[:, None, None]).std().item()
            codec.scale.fill_(1.0 / std if std > 0 else 1.0)
        if captions is not None and steps > 0:
            frames, text = captions
            codec.clip_proj = fit_image_text_projection(torch.as_tensor(frames, dtype=torch.float32),
                                                        torch.as_tensor(text, dtype=torch.float32))
    return codec, history


def codec_training_data(manifest) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """All frames plus RGB canvases of a dataset, and (frame, caption embedding) pairs."""
    from .dataset import load_sample
    from .dit import embed_text

    images, frames, text = [], [], []
    for sid in manifest.sample_ids:
        s = load_sample(manifest, sid)
        images += [s.frames, np.repeat(s.canvases, 3, axis=-1)]
        frames.append(s.frames)
        text.append(np.repeat(embed_text(s.caption)[None], len(s.frames), axis=0))
    return np.concatenate(images), (np.concatenate(frames), np.concatenate(text))


def train_codec(manifest, config: CodecConfig, steps: int, seed: int,
                log_every: int = 100) -> tuple[Codec, list[dict]]:
    """Fit the codec on every frame and canvas listed in ``manifest``."""
    images, captions = codec_training_data(manifest)
    return fit_codec(images, config, steps, seed, captions=captions, log_every=log_every)
