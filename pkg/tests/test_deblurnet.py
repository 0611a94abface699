import numpy as np
import pytest
import torch
from oracles import adaptive_filter_oracle
from scipy.signal import convolve2d

from texdeblur.deblurnet import (
    ChannelLayerNorm,
    DeblurNet,
    FilterModulatedAttention,
    ModulatedGatedFFN,
    PDConv,
    PlainConvBlock,
    PriorPredictor,
    ScalePriorProjector,
    TTBlock,
    adaptive_filter,
    count_parameters,
    make_deblur_net,
)
from texdeblur.errors import ConfigError, DataError, NumericalError

torch.manual_seed(0)


def zero_module(m):
    for p in m.parameters():
        torch.nn.init.zeros_(p)


# ---------------------------------------------------------------------------
# filter field prediction


def test_filter_field_channel_counts():
    pred_p = PriorPredictor(48, 32, 2 * 25)
    pred_m = PriorPredictor(48, 32, 25)
    z = torch.rand(1, 48, 8, 8)
    assert pred_p(z).shape == (1, 50, 8, 8)
    assert pred_m(z).shape == (1, 25, 8, 8)


def test_filter_field_zero_weights_give_zero():
    pred = PriorPredictor(8, 4, 18)
    zero_module(pred)
    assert torch.all(pred(torch.rand(1, 8, 6, 6)) == 0)


def test_filter_field_deterministic():
    pred = PriorPredictor(8, 4, 9)
    z = torch.rand(1, 8, 6, 6)
    assert torch.equal(pred(z), pred(z))


# ---------------------------------------------------------------------------
# adaptive filtering


def test_center_tap_identity():
    f = torch.rand(2, 4, 8, 8, dtype=torch.float64)
    k = 3
    offsets = torch.zeros(2, 18, 8, 8, dtype=torch.float64)
    weights = torch.zeros(2, 9, 8, 8, dtype=torch.float64)
    weights[:, 4] = 1.0  # center of the 3x3 grid
    out = adaptive_filter(f, offsets, weights, k)
    assert torch.equal(out, f)


def test_uniform_weights_match_box_filter():
    f = torch.rand(1, 2, 10, 10, dtype=torch.float64)
    k = 3
    offsets = torch.zeros(1, 18, 10, 10, dtype=torch.float64)
    weights = torch.full((1, 9, 10, 10), 1.0 / 9.0, dtype=torch.float64)
    out = adaptive_filter(f, offsets, weights, k)
    box = np.full((3, 3), 1.0 / 9.0)
    for c in range(2):
        # zero padding outside borders matches convolve2d's fill boundary
        expect = convolve2d(f[0, c].numpy(), box, mode="same", boundary="fill")
        assert np.allclose(out[0, c].numpy(), expect, atol=1e-12)


def test_half_pixel_offset_interpolates_midway():
    w = 8
    ramp = torch.arange(w, dtype=torch.float64).repeat(8, 1)[None, None]  # f(y,x)=x
    offsets = torch.zeros(1, 2, 8, w, dtype=torch.float64)
    offsets[:, 1] = 0.5  # horizontal offset, K=1 so one tap
    weights = torch.ones(1, 1, 8, w, dtype=torch.float64)
    out = adaptive_filter(ramp, offsets, weights, 1)
    assert torch.allclose(
        out[0, 0, :, : w - 1],
        torch.arange(w - 1, dtype=torch.float64)[None, :] + 0.5,
        atol=1e-12,
    )


def test_adaptive_filter_matches_bruteforce_oracle():
    g = torch.Generator().manual_seed(1)
    for _ in range(5):
        f = torch.randn(1, 4, 8, 8, generator=g, dtype=torch.float64)
        offsets = torch.randn(1, 18, 8, 8, generator=g, dtype=torch.float64) * 1.7
        weights = torch.randn(1, 9, 8, 8, generator=g, dtype=torch.float64)
        out = adaptive_filter(f, offsets, weights, 3)
        expect = adaptive_filter_oracle(
            f[0].numpy(), offsets[0].numpy(), weights[0].numpy(), 3
        )
        assert np.allclose(out[0].numpy(), expect, atol=1e-10)


def test_adaptive_filter_rejects_bad_fields():
    f = torch.rand(1, 2, 6, 6)
    with pytest.raises(DataError):
        adaptive_filter(f, torch.zeros(1, 10, 6, 6), torch.zeros(1, 9, 6, 6), 3)
    with pytest.raises(DataError):
        adaptive_filter(f, torch.zeros(1, 18, 5, 6), torch.zeros(1, 9, 5, 6), 3)
    bad = torch.full((1, 18, 6, 6), torch.nan)
    with pytest.raises(NumericalError):
        adaptive_filter(f, bad, torch.zeros(1, 9, 6, 6), 3)


# ---------------------------------------------------------------------------
# attention


def test_attention_output_shape_all_scales():
    for c, heads in ((16, 1), (32, 1), (64, 2), (128, 2)):
        attn = FilterModulatedAttention(c, heads, 3, 8)
        x = torch.rand(1, c, 8, 8)
        z = torch.rand(1, c, 8, 8)
        assert attn(x, z).shape == x.shape


def test_attention_zeroed_projection_is_identity():
    attn = FilterModulatedAttention(16, 2, 3, 8)
    zero_module(attn.out_proj)
    x = torch.rand(2, 16, 8, 8)
    z = torch.rand(2, 16, 8, 8)
    assert torch.equal(attn(x, z), x)


def test_attention_rows_sum_to_one():
    attn = FilterModulatedAttention(16, 4, 3, 8)
    g = torch.Generator().manual_seed(2)
    q = torch.randn(2, 16, 6, 6, generator=g)
    k = torch.randn(2, 16, 6, 6, generator=g)
    a = attn.attention_map(q, k)
    assert a.shape == (2, 4, 4, 4)
    rows = a.sum(dim=-1)
    assert torch.allclose(rows, torch.ones_like(rows), atol=1e-6)


def test_attention_rejects_bad_heads():
    with pytest.raises(ConfigError):
        FilterModulatedAttention(10, 3, 3, 8)


def test_attention_rejects_mismatched_prior():
    attn = FilterModulatedAttention(8, 1, 3, 4)
    with pytest.raises(DataError):
        attn(torch.rand(1, 8, 8, 8), torch.rand(1, 8, 4, 4))


# ---------------------------------------------------------------------------
# gated feed-forward


def force_constant(predictor, value):
    zero_module(predictor)
    torch.nn.init.constant_(predictor.net[-1].bias, value)


def test_ffn_identity_modulation():
    ffn = ModulatedGatedFFN(8, 2.0, 4)
    force_constant(ffn.scale_pred, 1.0)
    force_constant(ffn.shift_pred, 0.0)
    x = torch.rand(1, 8, 6, 6)
    z = torch.rand(1, 8, 6, 6)
    modulated = ffn.norm(x) * ffn.scale_pred(z) + ffn.shift_pred(z)
    assert torch.allclose(modulated, ffn.norm(x), atol=1e-7)


def test_ffn_zeroed_out_proj_is_identity():
    ffn = ModulatedGatedFFN(8, 2.0, 4)
    zero_module(ffn.out_proj)
    x = torch.rand(1, 8, 6, 6)
    z = torch.rand(1, 8, 6, 6)
    assert torch.equal(ffn(x, z), x)


def test_ffn_zero_modulated_input_leaves_bias_path():
    ffn = ModulatedGatedFFN(8, 2.0, 4)
    force_constant(ffn.scale_pred, 0.0)
    force_constant(ffn.shift_pred, 0.0)
    x = torch.rand(1, 8, 6, 6)
    z = torch.rand(1, 8, 6, 6)
    delta = ffn(x, z) - x
    # the residual reduces to conv biases, spatially constant away from borders
    interior = delta[:, :, 2:-2, 2:-2]
    per_channel = interior.reshape(8, -1)
    assert torch.allclose(per_channel, per_channel[:, :1].expand_as(per_channel), atol=1e-6)


# ---------------------------------------------------------------------------
# prior projection


def test_sap_same_size_preserves_values():
    proj = ScalePriorProjector(4, 4)
    with torch.no_grad():
        proj.proj.weight.copy_(torch.eye(4).reshape(4, 4, 1, 1))
        proj.proj.bias.zero_()
    z = torch.rand(1, 4, 8, 8)
    assert torch.allclose(proj(z, (8, 8)), z, atol=1e-7)


def test_sap_constant_preserved_under_downscale():
    proj = ScalePriorProjector(4, 4)
    with torch.no_grad():
        proj.proj.weight.copy_(torch.eye(4).reshape(4, 4, 1, 1))
        proj.proj.bias.zero_()
    z = torch.full((1, 4, 8, 8), 0.625)
    out = proj(z, (4, 4))
    assert torch.allclose(out, torch.full_like(out, 0.625), atol=1e-7)


def test_sap_checkerboard_averages_to_half():
    proj = ScalePriorProjector(1, 1)
    with torch.no_grad():
        proj.proj.weight.fill_(1.0)
        proj.proj.bias.zero_()
    z = torch.zeros(1, 1, 8, 8)
    z[0, 0, ::2, 1::2] = 1.0
    z[0, 0, 1::2, ::2] = 1.0
    out = proj(z, (4, 4))
    assert torch.allclose(out, torch.full_like(out, 0.5), atol=1e-7)


# ---------------------------------------------------------------------------
# full network


def desk_net(**kw):
    args = dict(
        base_channels=16,
        blocks=(1, 2, 2, 1),
        heads=(1, 1, 2, 2),
        kernel_size=3,
        prior_channels=16,
        ffn_expansion=1.1,
        predictor_width=16,
    )
    args.update(kw)
    return DeblurNet(**args)


def expected_parameter_count(c, blocks, heads, k, prior_c, expansion, width):
    # independent closed-form tally from layer shapes
    def conv(cin, cout, ks, groups=1):
        return cout * (cin // groups) * ks * ks + cout

    def predictor(cin, out):
        return conv(cin, width, 1) + conv(width, width, 3, groups=width) + conv(width, out, 1)

    def pdconv(cin, cout):
        return conv(cin, cout, 1) + conv(cout, cout, 3, groups=cout)

    widths = [c, 2 * c, 4 * c, 8 * c]
    k2 = k * k
    total = conv(3, c, 3) + conv(c, 3, 3)  # stem + head
    for i in range(3):
        total += conv(widths[i], widths[i + 1], 3)  # down
        total += conv(widths[i + 1], widths[i], 3)  # up
        total += conv(2 * widths[i], widths[i], 1)  # skip fuse
    for wd in widths:
        total += conv(prior_c, wd, 1)  # per-scale prior projection
    for i in range(4):
        d = widths[i]
        hidden = max(int(round(d * expansion)), 1)
        per_block = (
            2 * d  # attention layer norm
            + predictor(d, 2 * k2)
            + predictor(d, k2)
            + 3 * pdconv(d, d)  # q, k, v
            + conv(d, d, 1)  # attention out
            + 2 * d  # ffn layer norm
            + 2 * predictor(d, d)  # scale and shift fields
            + 2 * pdconv(d, hidden)  # gate and value branches
            + conv(hidden, d, 1)  # ffn out
        )
        n_blocks = blocks[i] if i == 3 else 2 * blocks[i]  # encoder + decoder
        total += per_block * n_blocks
    return total


def test_paper_parameter_budget():
    net = DeblurNet(
        base_channels=48,
        blocks=(4, 6, 6, 4),
        heads=(1, 2, 4, 8),
        kernel_size=5,
        prior_channels=48,
        ffn_expansion=1.1,
        predictor_width=32,
    )
    n = count_parameters(net)
    assert 11.8e6 * 0.9 <= n <= 11.8e6 * 1.1, f"{n/1e6:.2f}M outside budget"


def test_desk_parameter_count_matches_tally():
    net = desk_net()
    expect = expected_parameter_count(16, (1, 2, 2, 1), (1, 1, 2, 2), 3, 16, 1.1, 16)
    assert count_parameters(net) == expect


def test_forward_shape_and_range():
    net = desk_net()
    x = torch.rand(2, 3, 16, 24)
    z = torch.rand(2, 16, 4, 6)
    out = net(x, z)
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_zero_residual_head_is_identity():
    net = desk_net()
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()
    x = torch.rand(1, 3, 16, 16)
    z = torch.rand(1, 16, 4, 4)
    assert torch.equal(net(x, z), x)


def test_fresh_head_is_silent_on_flat_features():
    # zero-mean taps: spatially constant features produce a zero residual,
    # so the untrained net barely perturbs smooth regions
    net = desk_net()
    feat = torch.rand(1, 16, 1, 1).expand(1, 16, 12, 12)
    out = net.head(feat)
    assert out[:, :, 1:-1, 1:-1].abs().max() < 1e-5
    assert net.head.weight.abs().max() > 1e-3


def test_forward_rejects_bad_dims():
    net = desk_net()
    with pytest.raises(DataError):
        net(torch.rand(1, 3, 20, 16), torch.rand(1, 16, 5, 4))


def test_conv_ablation_has_no_attention():
    net = desk_net(use_transformer=False)
    kinds = {type(m) for m in net.modules()}
    assert FilterModulatedAttention not in kinds
    assert PlainConvBlock in kinds
    x = torch.rand(1, 3, 16, 16)
    out = net(x, torch.rand(1, 16, 4, 4))
    assert out.shape == x.shape


def test_single_scale_prior_zeroes_fine_scales():
    net = desk_net(multi_scale_prior=False)
    z = torch.rand(1, 16, 4, 4)
    sizes = [(16, 16), (8, 8), (4, 4), (2, 2)]
    priors = net.scale_priors(z, sizes)
    for i in range(3):
        assert torch.all(priors[i] == 0)
    assert priors[3].abs().sum() > 0
    out = net(torch.rand(1, 3, 16, 16), z)
    assert out.shape == (1, 3, 16, 16)


def test_factory_reads_config(cfg):
    net = make_deblur_net(cfg)
    assert isinstance(net, DeblurNet)
    net2 = make_deblur_net(cfg.with_values(ablation__no_ttformer=True))
    assert PlainConvBlock in {type(m) for m in net2.modules()}


# ---------------------------------------------------------------------------
# gradients


def fd_entries(f, param, entries, eps=1e-6):
    flat = param.data.view(-1)
    out = []
    for i in entries:
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = f().item()
        flat[i] = orig - eps
        lo = f().item()
        flat[i] = orig
        out.append((hi - lo) / (2 * eps))
    return torch.tensor(out, dtype=torch.float64)


def test_ttblock_gradients_match_finite_differences():
    torch.manual_seed(3)
    block = TTBlock(8, 2, 3, 1.5, 4).double()
    # keep parameters generic so no sampling offset sits on an integer
    with torch.no_grad():
        for p in block.parameters():
            p.add_(0.3 * torch.randn_like(p))
    x = torch.rand(1, 8, 6, 6, dtype=torch.float64)
    z = torch.rand(1, 8, 6, 6, dtype=torch.float64)
    w = torch.randn(1, 8, 6, 6, dtype=torch.float64)

    def loss_fn():
        out = block(x, z)
        return (out * w).sum() + 0.2 * (out * out).sum()

    loss = loss_fn()
    block.zero_grad()
    loss.backward()

    rng = np.random.default_rng(0)
    for name, p in block.named_parameters():
        n = p.numel()
        entries = sorted(rng.choice(n, size=min(6, n), replace=False).tolist())
        an = p.grad.view(-1)[entries].double()
        fd = fd_entries(loss_fn, p, entries)
        rel = (fd - an).abs().max() / (an.abs().max() + 1e-12)
        assert rel < 1e-4, f"{name}: rel error {rel:.2e}"
