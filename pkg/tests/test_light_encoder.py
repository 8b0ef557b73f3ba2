import pytest
import torch

from lumiforge.dit import DiTConfig
from lumiforge.light_encoder import LightEncoderConfig, LightEncoderError, LightModule, Merge, merge

BB = DiTConfig(n_layers=3, d_model=32, n_heads=4, patch=2, latent_size=8, max_frames=4)


@pytest.fixture
def module():
    torch.manual_seed(0)
    return LightModule(LightEncoderConfig.matching(BB), zero_init=False)


def test_one_condition_per_layer(module):
    conds = module.encode_light(torch.randn(2, 4, 4, 8, 8))
    assert len(conds) == 3
    assert all(c.shape == (2, 4 * 16, 32) for c in conds)


def test_fresh_module_emits_zero_conditions():
    m = LightModule(LightEncoderConfig.matching(BB))
    assert all(not c.any() for c in m.encode_light(torch.randn(1, 2, 4, 8, 8)))


def test_merge_starts_as_identity():
    h = torch.randn(2, 5, 32)
    assert torch.allclose(merge(h, torch.zeros_like(h), 0.5, Merge(32)), h)


def test_merge_is_affine_in_scale():
    torch.manual_seed(3)
    mg = Merge(32)
    torch.nn.init.normal_(mg.linear.weight)
    h, c = torch.randn(1, 4, 32), torch.randn(1, 4, 32)
    a, b, mid = mg(h, c, 0.0), mg(h, c, 1.0), mg(h, c, 0.5)
    assert torch.allclose(mid, (a + b) / 2, atol=1e-5)


def test_merge_shape_mismatch():
    with pytest.raises(LightEncoderError):
        Merge(8)(torch.zeros(1, 4, 8), torch.zeros(1, 3, 8), 0.5)


def test_bad_canvas_shape(module):
    with pytest.raises(LightEncoderError):
        module.encode_light(torch.zeros(1, 2, 3, 8, 8))
    with pytest.raises(LightEncoderError):
        module.encode_light(torch.zeros(2, 4, 8, 8))


def test_pair_check():
    cfg = LightEncoderConfig.matching(BB, d_model=64)
    with pytest.raises(LightEncoderError, match="d_model"):
        cfg.check_pair(BB)


def test_checkpoint_round_trip(module, tmp_path):
    module.save(tmp_path / "l.ckpt")
    back = LightModule.load(tmp_path / "l.ckpt")
    x = torch.randn(1, 2, 4, 8, 8)
    for a, b in zip(module.encode_light(x), back.encode_light(x)):
        assert torch.equal(a, b)
