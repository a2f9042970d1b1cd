"""Promptless two-way transformer decoder and the upscaling mask head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError
from .layers import MLP, Attention, LayerNorm2d, map_to_tokens, tokens_to_map
from .multiview import merge_locals, resize, split_views


class TwoWayBlock(nn.Module):
    """Token self-attention, token->image attention, token FFN, image->token attention.

    Pre-norm residual form: with zeroed output projections the block leaves
    both tokens and image embedding untouched.
    """

    def __init__(self, dim: int, num_heads: int, ffn_ratio: int) -> None:
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, num_heads)
        self.norm_t2i_q = nn.LayerNorm(dim)
        self.norm_t2i_kv = nn.LayerNorm(dim)
        self.token_to_image = Attention(dim, num_heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * ffn_ratio)
        self.norm_i2t_q = nn.LayerNorm(dim)
        self.norm_i2t_kv = nn.LayerNorm(dim)
        self.image_to_token = Attention(dim, num_heads)

    def forward(self, tokens: torch.Tensor, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.norm_self(tokens)
        tokens = tokens + self.self_attn(h, h, h)
        kv = self.norm_t2i_kv(image)
        tokens = tokens + self.token_to_image(self.norm_t2i_q(tokens), kv, kv)
        tokens = tokens + self.mlp(self.norm_mlp(tokens))
        kv = self.norm_i2t_kv(tokens)
        image = image + self.image_to_token(self.norm_i2t_q(image), kv, kv)
        return tokens, image


class TwoWayTransformer(nn.Module):
    def __init__(self, dim: int, depth: int, num_heads: int, ffn_ratio: int = 4) -> None:
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(TwoWayBlock(dim, num_heads, ffn_ratio) for _ in range(depth))
        self.norm_final_q = nn.LayerNorm(dim)
        self.norm_final_kv = nn.LayerNorm(dim)
        self.final_attn = Attention(dim, num_heads)
        self.norm_out = nn.LayerNorm(dim)

    def forward(self, f16: torch.Tensor, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Refine ``f16`` ``(N, C, a, b)`` against ``tokens`` ``(N, T, C)``."""
        if f16.shape[1] != self.dim or tokens.shape[-1] != self.dim:
            raise ConfigError(
                f"decoder dim {self.dim} does not match features {f16.shape[1]} / tokens {tokens.shape[-1]}"
            )
        hw = (f16.shape[-2], f16.shape[-1])
        image = map_to_tokens(f16)
        for layer in self.layers:
            tokens, image = layer(tokens, image)
        kv = self.norm_final_kv(image)
        tokens = tokens + self.final_attn(self.norm_final_q(tokens), kv, kv)
        tokens = self.norm_out(tokens)
        return tokens_to_map(image, hw), tokens


def reduce_view_logits(view_logits: torch.Tensor, out_size: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Turn ``(5B, 1, a, b)`` per-view logits into ``(B, 1, H, W)`` image logits.

    Returns the merged-local logits and the global-view logits, both bilinearly
    resized to ``out_size``.
    """
    locals_, glob = split_views(view_logits)
    return resize(merge_locals(locals_), out_size), resize(glob, out_size)


@dataclass
class MaskOutputs:
    logits_s: torch.Tensor
    logits_s_global: torch.Tensor
    f_p: torch.Tensor

    @property
    def m_s(self) -> torch.Tensor:
        return torch.sigmoid(self.logits_s)


class MaskHead(nn.Module):
    """Upscale ``E16`` with skip-adds of ``E8`` and ``E4``; dot with a token-derived kernel."""

    def __init__(self, dim: int, mask_dim: int) -> None:
        super().__init__()
        self.up1 = nn.ConvTranspose2d(dim, mask_dim, kernel_size=2, stride=2)
        self.skip8 = nn.Conv2d(dim, mask_dim, kernel_size=1)
        self.norm = LayerNorm2d(mask_dim)
        self.up2 = nn.ConvTranspose2d(mask_dim, mask_dim, kernel_size=2, stride=2)
        self.skip4 = nn.Conv2d(dim, mask_dim, kernel_size=1)
        self.hyper = nn.Linear(dim, mask_dim)

    def forward(
        self,
        e4: torch.Tensor,
        e8: torch.Tensor,
        e16: torch.Tensor,
        tokens: torch.Tensor,
        out_size: tuple[int, int],
    ) -> MaskOutputs:
        x = F.gelu(self.norm(self.up1(e16) + self.skip8(e8)))
        f_p = F.gelu(self.up2(x) + self.skip4(e4))
        kernel = self.hyper(tokens[:, 0])
        view_logits = torch.einsum("nc,nchw->nhw", kernel, f_p).unsqueeze(1)
        logits_s, logits_g = reduce_view_logits(view_logits, out_size)
        return MaskOutputs(logits_s=logits_s, logits_s_global=logits_g, f_p=f_p)
