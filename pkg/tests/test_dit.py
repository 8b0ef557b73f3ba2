import numpy as np
import pytest
import torch

from lumiforge.dit import (DiT, DiTConfig, DiTError, embed_text, linear_schedule, patchify, q_sample, schedule_for,
                           unpatchify)
from lumiforge.light_encoder import LightEncoderConfig, LightModule

SMALL = DiTConfig(n_layers=2, d_model=32, n_heads=4, patch=2, latent_size=8, max_frames=4)


def test_schedule_endpoints():
    s = linear_schedule()
    assert s.T == 1000
    assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(2e-2)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bar(0).item() == 1.0


def test_q_sample_at_step_one():
    s = linear_schedule()
    z0, eps = torch.ones(1, 2, 4, 4, 4, dtype=torch.float64), torch.zeros(1, 2, 4, 4, 4, dtype=torch.float64)
    assert torch.allclose(q_sample(z0, 1, eps, s), torch.full_like(z0, np.sqrt(1 - 1e-4)), atol=1e-12)


def test_q_sample_at_last_step_is_mostly_noise():
    s = linear_schedule()
    eps = torch.ones(1, 1, 1, 2, 2, dtype=torch.float64)
    out = q_sample(torch.zeros_like(eps), 1000, eps, s)
    assert torch.allclose(out, torch.sqrt(1 - s.alpha_bar(1000)) * eps)
    assert s.alpha_bar(1000).item() < 1e-4


def test_q_sample_variance():
    s = linear_schedule()
    g = torch.Generator().manual_seed(0)
    z0 = torch.full((20000,), 0.7, dtype=torch.float64)
    x = q_sample(z0, 500, torch.randn(20000, generator=g, dtype=torch.float64), s)
    ab = s.alpha_bar(500).item()
    assert x.mean().item() == pytest.approx(np.sqrt(ab) * 0.7, abs=0.02)
    assert x.var().item() == pytest.approx(1 - ab, rel=0.03)


@pytest.mark.parametrize("t", [0, 1001])
def test_q_sample_rejects_out_of_range(t):
    with pytest.raises(DiTError):
        q_sample(torch.zeros(2), t, torch.zeros(2), linear_schedule())


def test_q_sample_shape_mismatch():
    with pytest.raises(DiTError):
        q_sample(torch.zeros(2), 5, torch.zeros(3), linear_schedule())


def test_patchify_round_trip():
    z = torch.randn(2, 3, 4, 8, 8)
    assert torch.equal(unpatchify(patchify(z, 2), 3, 4, 8, 8, 2), z)
    assert patchify(z, 2).shape == (2, 3 * 16, 16)


def test_embed_text():
    a = embed_text("a woman at a desk")
    assert a.shape == (64,) and np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(a, embed_text("A woman, at a desk!"))
    assert not embed_text("").any()


def test_config_validation():
    with pytest.raises(DiTError):
        DiTConfig(d_model=30, n_heads=4)
    with pytest.raises(DiTError):
        DiTConfig(latent_size=10, patch=4)
    with pytest.raises(DiTError):
        DiTConfig(beta_min=0.1, beta_max=0.01)


def _model(**kw):
    torch.manual_seed(0)
    return DiT(DiTConfig(**{**SMALL.__dict__, **kw}), zero_init=False).eval()


def test_output_shape_and_determinism():
    m = _model()
    z = torch.randn(2, 3, 4, 8, 8)
    text = torch.from_numpy(np.stack([embed_text("a"), embed_text("b")]))
    a, b = m(z, 10, text), m(z, 10, text)
    assert a.shape == z.shape and torch.equal(a, b)


def test_zero_init_predicts_zero():
    torch.manual_seed(0)
    m = DiT(SMALL)
    assert not m(torch.randn(1, 2, 4, 8, 8), 300, None).any()


def test_nan_text_row_uses_null_embedding():
    m = _model()
    z = torch.randn(2, 2, 4, 8, 8)
    text = torch.from_numpy(np.stack([embed_text("a man"), embed_text("x")]))
    text[1] = float("nan")
    both = m(z, 7, text)
    assert torch.allclose(both[1:], m(z[1:], 7, None), atol=1e-6)
    assert torch.allclose(both[:1], m(z[:1], 7, text[:1]), atol=1e-6)


def test_frame_permutation_equivariance_without_position():
    m = _model(pos_embed=False)
    z = torch.randn(1, 4, 4, 8, 8)
    text = torch.from_numpy(embed_text("a person"))[None]
    perm = torch.tensor([2, 0, 3, 1])
    assert torch.allclose(m(z[:, perm], 50, text), m(z, 50, text)[:, perm], atol=1e-5)


def test_wrong_channels_rejected():
    with pytest.raises(DiTError):
        _model()(torch.zeros(1, 2, 3, 8, 8), 5, None)


def test_too_many_frames_rejected():
    with pytest.raises(DiTError):
        _model()(torch.zeros(1, 5, 4, 8, 8), 5, None)


def test_fresh_light_module_is_a_no_op():
    m = _model()
    light = LightModule(LightEncoderConfig.matching(m.config))
    z = torch.randn(1, 2, 4, 8, 8)
    conds = light.encode_light(torch.randn(1, 2, 4, 8, 8))
    assert torch.allclose(m(z, 20, None, conds, 0.7, light.merges), m(z, 20, None), atol=1e-6)


def test_light_scale_zero_matches_absent_condition():
    m = _model()
    torch.manual_seed(1)
    light = LightModule(LightEncoderConfig.matching(m.config), zero_init=False)
    for mg in light.merges:  # identity merges: scale 0 must reduce to no light at all
        assert torch.equal(mg.linear.weight, torch.eye(m.config.d_model))
    z = torch.randn(1, 2, 4, 8, 8)
    conds = light.encode_light(torch.randn(1, 2, 4, 8, 8))
    assert torch.allclose(m(z, 20, None, conds, 0.0, light.merges), m(z, 20, None), atol=1e-6)
    assert not torch.allclose(m(z, 20, None, conds, 0.5, light.merges), m(z, 20, None), atol=1e-4)


def test_light_layer_count_mismatch():
    m = _model()
    light = LightModule(LightEncoderConfig.matching(m.config))
    conds = light.encode_light(torch.zeros(1, 2, 4, 8, 8))
    with pytest.raises(DiTError):
        m(torch.zeros(1, 2, 4, 8, 8), 3, None, conds[:1], 0.5, light.merges)
    with pytest.raises(DiTError):
        m(torch.zeros(1, 2, 4, 8, 8), 3, None, conds, 0.5, None)


def test_checkpoint_round_trip(tmp_path):
    m = _model()
    m.save(tmp_path / "d.ckpt")
    back = DiT.load(tmp_path / "d.ckpt")
    z = torch.randn(1, 2, 4, 8, 8)
    assert torch.equal(m(z, 9, None), back(z, 9, None))
    assert back.config == m.config
    assert schedule_for(back.config).T == 1000
