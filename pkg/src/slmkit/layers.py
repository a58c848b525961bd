"""Small transformer building blocks shared by encoders, adapters, decoder.

Attention query/value projections are the LoRA injection points: every
MultiHeadSelfAttention owns two site names derived from its prefix, and a
forward pass may carry a routed adapter view.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .mlora import RoutedView, SiteSpec, lora_apply


def sinusoidal_positions(length: int, d_model: int, ref: torch.Tensor) -> torch.Tensor:
    """Classic fixed sin/cos position table, matching ref's dtype/device."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    idx = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, idx / d_model)
    table = torch.zeros(length, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return table.to(dtype=ref.dtype, device=ref.device)


class MultiHeadSelfAttention(nn.Module):
    """Unbatched self-attention over [T, d] with optional causal masking."""

    def __init__(self, d_model: int, n_heads: int, site_prefix: str):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.site_q = f"{site_prefix}/q"
        self.site_v = f"{site_prefix}/v"
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def lora_sites(self, rank: int, alpha: float) -> dict[str, SiteSpec]:
        spec = SiteSpec(d_in=self.d_model, d_out=self.d_model, rank=rank, alpha=alpha)
        return {self.site_q: spec, self.site_v: spec}

    def forward(
        self, x: torch.Tensor, view: RoutedView | None = None, causal: bool = False
    ) -> torch.Tensor:
        t = x.shape[0]
        q = lora_apply(x, self.q(x), self.site_q, view)
        k = self.k(x)
        v = lora_apply(x, self.v(x), self.site_v, view)
        q = q.view(t, self.n_heads, self.d_head).transpose(0, 1)
        k = k.view(t, self.n_heads, self.d_head).transpose(0, 1)
        v = v.view(t, self.n_heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.d_head)
        if causal:
            mask = torch.triu(
                torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1
            )
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(0, 1).reshape(t, self.d_model)
        return self.out(mixed)


class TransformerLayer(nn.Module):
    """Pre-norm block: x += attn(ln(x)); x += mlp(ln(x))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, site_prefix: str):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_model, n_heads, site_prefix)
        self.ln1 = nn.LayerNorm(d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model)
        )

    def forward(
        self, x: torch.Tensor, view: RoutedView | None = None, causal: bool = False
    ) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), view=view, causal=causal)
        return x + self.ff(self.ln2(x))


class TransformerStack(nn.Module):
    """A run of pre-norm layers with a shared site prefix and final norm."""

    def __init__(
        self, d_model: int, n_heads: int, d_ff: int, n_layers: int, site_prefix: str
    ):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerLayer(d_model, n_heads, d_ff, f"{site_prefix}/l{i}")
            for i in range(n_layers)
        )
        self.ln = nn.LayerNorm(d_model)

    def lora_sites(self, rank: int, alpha: float) -> dict[str, SiteSpec]:
        sites: dict[str, SiteSpec] = {}
        for layer in self.layers:
            sites.update(layer.attn.lora_sites(rank, alpha))
        return sites

    def forward(
        self, x: torch.Tensor, view: RoutedView | None = None, causal: bool = False
    ) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x, view=view, causal=causal)
        return self.ln(x)
