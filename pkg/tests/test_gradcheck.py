import copy

import torch

from lumiforge.dit import DiT, DiTConfig, linear_schedule
from lumiforge.light_encoder import LightEncoderConfig, LightModule
from lumiforge.trainer import TrainConfig, dual_branch_losses, freeze

MICRO = DiTConfig(n_layers=1, d_model=8, n_heads=2, patch=2, latent_size=4, max_frames=4, d_text=8)


def _setup():
    torch.manual_seed(0)
    backbone = DiT(MICRO, zero_init=False).eval()
    light = LightModule(LightEncoderConfig.matching(MICRO), zero_init=False)
    g = torch.Generator().manual_seed(1)
    z0 = torch.randn(2, 4, 4, 4, 4, generator=g)
    canv = torch.randn(2, 4, 4, 4, 4, generator=g)
    text = torch.randn(2, 8, generator=g)
    eps = torch.randn(2, 4, 4, 4, 4, generator=g)
    t = torch.tensor([150, 640])
    return backbone, light, (z0, canv, text, t, eps)


def _loss(backbone, light, batch, dtype):
    z0, canv, text, t, eps = (x.to(dtype) if x.is_floating_point() else x for x in batch)
    out = dual_branch_losses(backbone, light, z0, canv, text, t, eps, linear_schedule(), TrainConfig(beta=3.0))
    return out["loss_total"]


def test_light_gradients_match_finite_differences():
    backbone, light, batch = _setup()
    freeze(backbone)
    _loss(backbone, light, batch, torch.float32).backward()
    for p in backbone.parameters():
        assert p.grad is None or not p.grad.any()

    bb64, light64 = copy.deepcopy(backbone).double(), copy.deepcopy(light).double()
    params32 = dict(light.named_parameters())
    h = 1e-6
    checked = 0
    for name, p64 in light64.named_parameters():
        grad = params32[name].grad
        flat = p64.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + h
                up = _loss(bb64, light64, batch, torch.float64).item()
                flat[i] = old - h
                down = _loss(bb64, light64, batch, torch.float64).item()
                flat[i] = old
            fd = (up - down) / (2 * h)
            an = grad.view(-1)[i].item()
            scale = max(abs(fd), abs(an), 1e-3)
            assert abs(fd - an) / scale <= 1e-3, (name, i, fd, an)
            checked += 1
    assert checked == sum(p.numel() for p in light.parameters())
