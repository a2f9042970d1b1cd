import pytest
import torch

from gradcheck import max_relative_error, norm_relative_error, randomize_
from mvseg.fusion import CrossViewEnhancement, HierarchicalInteraction, partition_global_tokens
from mvseg.layers import Attention
from mvseg.multiview import merge_locals


def test_mcem_shape_and_token_bookkeeping():
    mcem = CrossViewEnhancement(16, 2)
    f16 = torch.randn(5, 16, 8, 8)
    assert mcem(f16).shape == (5, 16, 8, 8)
    glob = f16[4:]
    groups = partition_global_tokens(glob)
    assert glob.flatten(2).shape[-1] == 64
    assert merge_locals(list(f16[:4].split(1))).flatten(2).shape[-1] == 256
    assert all(g.shape == (1, 16, 16) for g in groups)  # 16 = 128*128 / 32**2


def test_attention_over_identical_values():
    attn = Attention(8, 2).double()
    with torch.no_grad():
        for lin in (attn.q_proj, attn.k_proj, attn.v_proj, attn.out_proj):
            lin.weight.copy_(torch.eye(8))
            lin.bias.zero_()
    v = torch.randn(1, 1, 8, dtype=torch.float64)
    kv = v.expand(1, 7, 8)
    q = torch.randn(1, 5, 8, dtype=torch.float64)
    out = attn(q, kv, kv)
    assert torch.allclose(out, v.expand(1, 5, 8), atol=1e-12)


def test_attention_identical_values_generic_weights():
    attn = Attention(8, 2).double()
    v = torch.randn(1, 1, 8, dtype=torch.float64)
    kv = v.expand(1, 6, 8)
    out = attn(torch.randn(1, 4, 8, dtype=torch.float64), kv, kv)
    expected = attn.out_proj(attn.v_proj(v))
    assert torch.allclose(out, expected.expand(1, 4, 8), atol=1e-12)


def test_partition_quadrant_correspondence():
    a, b = 6, 4
    glob = torch.zeros(1, 1, a, b)
    glob[..., : a // 2, : b // 2] = 0
    glob[..., : a // 2, b // 2 :] = 1
    glob[..., a // 2 :, : b // 2] = 2
    glob[..., a // 2 :, b // 2 :] = 3
    groups = partition_global_tokens(glob)
    for m, g in enumerate(groups):
        assert g.shape == (1, a * b // 4, 1)
        assert torch.all(g == m)


def test_partition_token_indices_against_formula():
    a, b = 4, 6
    idx = torch.arange(a * b, dtype=torch.float64).reshape(1, 1, a, b)
    groups = partition_global_tokens(idx)
    for m, g in enumerate(groups):
        qi, qj = divmod(m, 2)
        expected = [
            (qi * a // 2 + i) * b + qj * b // 2 + j for i in range(a // 2) for j in range(b // 2)
        ]
        assert g[0, :, 0].tolist() == expected


def test_mcem_rejects_odd_spatial():
    with pytest.raises(ValueError):
        CrossViewEnhancement(8, 2)(torch.randn(5, 8, 3, 3))


def test_mcem_global_perturbation_reaches_locals():
    torch.manual_seed(0)
    mcem = CrossViewEnhancement(8, 2)
    x = torch.randn(5, 8, 4, 4)
    y = x.clone()
    y[4] += torch.randn(8, 4, 4)
    a, b = mcem(x), mcem(y)
    for m in range(4):
        assert not torch.allclose(a[m], b[m])


def test_mcem_deterministic():
    torch.manual_seed(0)
    mcem = CrossViewEnhancement(8, 2)
    x = torch.randn(10, 8, 4, 4)
    assert torch.equal(mcem(x), mcem(x))


def test_mcem_gradient():
    mcem = CrossViewEnhancement(4, 2, ffn_ratio=2).double()
    randomize_(mcem, 3)
    x = torch.randn(5, 4, 2, 2, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, 4, 2, 2, dtype=torch.float64)
    params = [p for p in mcem.parameters()]
    assert max_relative_error(lambda: (mcem(x) * w).sum(), [x, *params], num_samples=80) < 1e-4


def test_hmim_shape():
    hmim = HierarchicalInteraction(8)
    assert hmim(torch.randn(5, 8, 4, 4), torch.randn(5, 8, 8, 8)).shape == (5, 8, 8, 8)


def test_hmim_rejects_ratio_violation():
    hmim = HierarchicalInteraction(8)
    with pytest.raises(ValueError):
        hmim(torch.randn(5, 8, 4, 4), torch.randn(5, 8, 6, 8))
    with pytest.raises(ValueError):
        hmim(torch.randn(5, 8, 4, 4), torch.randn(5, 4, 8, 8))


def test_hmim_zero_weights_give_final_bias():
    hmim = HierarchicalInteraction(4)
    with torch.no_grad():
        for conv in (hmim.deep_dw, hmim.global_fuse, hmim.context_dw, hmim.local_fuse, hmim.proj):
            conv.weight.zero_()
            conv.bias.zero_()
        hmim.proj.bias.copy_(torch.tensor([0.5, -1.0, 2.0, 0.0]))
    out = hmim(torch.randn(5, 4, 2, 2), torch.randn(5, 4, 4, 4))
    assert torch.equal(out, hmim.proj.bias.view(1, 4, 1, 1).expand_as(out))


def test_hmim_gradient():
    hmim = HierarchicalInteraction(2).double()
    randomize_(hmim, 4)
    deep = torch.randn(5, 2, 2, 2, dtype=torch.float64, requires_grad=True)
    shallow = torch.randn(5, 2, 4, 4, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, 2, 4, 4, dtype=torch.float64)
    # a 2-channel LayerNorm makes some entries nearly flat; compare the whole vector
    err = norm_relative_error(lambda: (hmim(deep, shallow) * w).sum(), [deep, shallow, *hmim.parameters()])
    assert err < 1e-4


def test_hmim_deep_perturbation_reaches_global_branch():
    torch.manual_seed(0)
    hmim = HierarchicalInteraction(4)
    deep, shallow = torch.randn(5, 4, 2, 2), torch.randn(5, 4, 4, 4)
    deep2 = deep.clone()
    deep2[:4] += torch.randn(4, 4, 2, 2)
    assert not torch.allclose(hmim(deep, shallow)[4], hmim(deep2, shallow)[4])


def test_hmim_gradient_entrywise():
    hmim = HierarchicalInteraction(4).double()
    randomize_(hmim, 5)
    gen = torch.Generator().manual_seed(0)
    deep = torch.randn(5, 4, 2, 2, generator=gen, dtype=torch.float64, requires_grad=True)
    shallow = torch.randn(5, 4, 4, 4, generator=gen, dtype=torch.float64, requires_grad=True)
    w = torch.randn(5, 4, 4, 4, generator=gen, dtype=torch.float64)
    tensors = [deep, shallow, *hmim.parameters()]
    assert max_relative_error(lambda: (hmim(deep, shallow) * w).sum(), tensors, num_samples=150) < 1e-4
