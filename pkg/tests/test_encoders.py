import pytest
import torch

from slmkit.encoders import DualEncoder, EncoderConfig, Role
from slmkit.exceptions import ConfigError, ContractError
from slmkit.mlora import LoRABank, route


def make_encoder(seed=0):
    torch.manual_seed(seed)
    return DualEncoder(EncoderConfig())


def test_output_lengths_follow_floor_division():
    enc = make_encoder()
    feats = torch.randn(40, 16)
    assert len(enc.encode_w(feats)) == 20
    assert len(enc.encode_m(feats)) == 10
    assert enc.encode_w(feats).width == 64
    assert enc.encode_m(feats).width == 48
    odd = torch.randn(41, 16)
    assert len(enc.encode_w(odd)) == 20
    assert len(enc.encode_m(odd)) == 10


def test_roles_and_frame_rates():
    enc = make_encoder()
    feats = torch.randn(24, 16)
    hw = enc.encode_w(feats, frame_rate=100.0)
    hm = enc.encode_m(feats, frame_rate=100.0)
    assert hw.role is Role.ENC_W and hm.role is Role.ENC_M
    assert hw.frame_rate == 50.0 and hm.frame_rate == 25.0


def test_too_short_input_raises():
    enc = make_encoder()
    with pytest.raises(ContractError):
        enc.encode_m(torch.randn(3, 16))


def test_equal_widths_or_subsampling_rejected():
    with pytest.raises(ConfigError):
        EncoderConfig(d_model_w=48, d_model_m=48)
    with pytest.raises(ConfigError):
        EncoderConfig(subsample_w=2, subsample_m=2)


def test_zero_weight_lora_view_is_identity():
    enc = make_encoder()
    lang = __import__("slmkit.corpus", fromlist=["LanguageId"]).LanguageId("L0", 0)
    bank = LoRABank(enc.lora_sites(), [lang])
    feats = torch.randn(16, 16)
    plain = enc.encode_w(feats).data
    adapted = enc.encode_w(feats, view=route(bank, lang)).data
    assert torch.equal(plain, adapted)


def test_deterministic_and_finite_on_zero_input():
    enc = make_encoder()
    feats = torch.randn(12, 16)
    a = enc.encode_w(feats).data
    b = enc.encode_w(feats).data
    assert torch.equal(a, b)
    z = enc.encode_m(torch.zeros(8, 16)).data
    assert torch.isfinite(z).all()


def test_gradcheck_both_branches_float64():
    torch.manual_seed(1)
    enc = DualEncoder(EncoderConfig()).double()
    x_w = torch.randn(3, 16, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(
        lambda t: enc.encode_w(t).data, (x_w,), eps=1e-6, atol=1e-7, rtol=1e-4
    )
    # the m branch pools 4 frames, so its shortest legal input is 4
    x_m = torch.randn(4, 16, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(
        lambda t: enc.encode_m(t).data, (x_m,), eps=1e-6, atol=1e-7, rtol=1e-4
    )
