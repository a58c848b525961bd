"""Language-adapted connector between the encoder pair and the decoder.

Per-branch adapters bring both streams to a common width, a per-language
sigmoid gate blends them after rate alignment, and two heads consume the
blend: a CTC projector producing a log-prob lattice, and a strided
convolution + linear map producing embeddings in the decoder space.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .corpus import LanguageId
from .encoders import HiddenSequence, Role
from .exceptions import ConfigError, ContractError, RoutingError
from .layers import TransformerStack
from .mlora import ENCODER_ALPHA, ENCODER_RANK, RoutedView, SiteSpec


@dataclass(frozen=True)
class ConnectorConfig:
    d_in_w: int = 64
    d_in_m: int = 48
    d_adapter: int = 64
    adapter_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    num_languages: int = 2
    vocab_size: int = 12
    downsample: int = 2  # k
    conv_kernel: int = 3
    d_llm: int = 128

    def __post_init__(self):
        if self.downsample < 1:
            raise ConfigError("downsample factor must be >= 1")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv kernel must be odd for same-padding")


class FusionBank(nn.Module):
    """One trainable gate logit per language (or one shared, for ablation)."""

    def __init__(self, num_languages: int, shared: bool = False):
        super().__init__()
        self.num_languages = num_languages
        self.shared = shared
        n = 1 if shared else num_languages
        self.logits = nn.Parameter(torch.zeros(n))

    def gate(self, lid: LanguageId) -> torch.Tensor:
        if not 0 <= lid.index < self.num_languages:
            raise RoutingError(f"unknown language id {lid!r}")
        idx = 0 if self.shared else lid.index
        return torch.sigmoid(self.logits[idx])


def align_rates(h_w: HiddenSequence, h_m: HiddenSequence) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Nearest-neighbor upsample the lower-rate stream, truncate to overlap."""
    if h_w.width != h_m.width:
        raise ContractError(f"widths differ: {h_w.width} vs {h_m.width}")
    hi, lo = (h_w, h_m) if h_w.frame_rate >= h_m.frame_rate else (h_m, h_w)
    if hi.frame_rate == lo.frame_rate:
        up = lo.data
    else:
        ratio = hi.frame_rate / lo.frame_rate
        up_len = int(round(len(lo) * ratio))
        idx = torch.clamp(
            (torch.arange(up_len, dtype=torch.float64) / ratio).floor().long(),
            max=len(lo) - 1,
        )
        up = lo.data[idx]
    length = min(len(hi), up.shape[0])
    a, b = hi.data[:length], up[:length]
    w_first = h_w.frame_rate >= h_m.frame_rate
    aligned_w, aligned_m = (a, b) if w_first else (b, a)
    return aligned_w, aligned_m, hi.frame_rate


def fuse(
    h_w: HiddenSequence,
    h_m: HiddenSequence,
    lid: LanguageId,
    bank: FusionBank,
) -> HiddenSequence:
    """Convex blend g*H_w + (1-g)*H_m with the language's sigmoid gate."""
    if h_w.role is not Role.ADAPTED_W or h_m.role is not Role.ADAPTED_M:
        raise ContractError(f"fuse expects adapted streams, got {h_w.role}, {h_m.role}")
    aligned_w, aligned_m, rate = align_rates(h_w, h_m)
    g = bank.gate(lid)
    return HiddenSequence(
        data=g * aligned_w + (1.0 - g) * aligned_m, frame_rate=rate, role=Role.FUSED
    )


class Connector(nn.Module):
    def __init__(self, cfg: ConnectorConfig | None = None):
        super().__init__()
        self.cfg = cfg or ConnectorConfig()
        c = self.cfg
        self.proj_w = nn.Linear(c.d_in_w, c.d_adapter)
        self.proj_m = nn.Linear(c.d_in_m, c.d_adapter)
        self.adapter_w = TransformerStack(
            c.d_adapter, c.n_heads, c.ff_mult * c.d_adapter, c.adapter_layers, "adw"
        )
        self.adapter_m = TransformerStack(
            c.d_adapter, c.n_heads, c.ff_mult * c.d_adapter, c.adapter_layers, "adm"
        )
        self.fusion = FusionBank(c.num_languages)
        self.ctc_head = nn.Linear(c.d_adapter, c.vocab_size + 1)
        self.conv = nn.Conv1d(
            c.d_adapter,
            c.d_adapter,
            kernel_size=c.conv_kernel,
            stride=c.downsample,
            padding=c.conv_kernel // 2,
        )
        self.llm_proj = nn.Linear(c.d_adapter, c.d_llm)

    def lora_sites(self) -> dict[str, SiteSpec]:
        sites = self.adapter_w.lora_sites(ENCODER_RANK, ENCODER_ALPHA)
        sites.update(self.adapter_m.lora_sites(ENCODER_RANK, ENCODER_ALPHA))
        return sites

    def adapt(
        self, hidden: HiddenSequence, branch: str, view: RoutedView | None = None
    ) -> HiddenSequence:
        """Bring one encoder stream to the common adapter width."""
        if branch == "w":
            want, out_role, proj, stack = Role.ENC_W, Role.ADAPTED_W, self.proj_w, self.adapter_w
        elif branch == "m":
            want, out_role, proj, stack = Role.ENC_M, Role.ADAPTED_M, self.proj_m, self.adapter_m
        else:
            raise ContractError(f"branch must be 'w' or 'm', got {branch!r}")
        if hidden.role is not want:
            raise ContractError(f"adapt({branch}) expects role {want}, got {hidden.role}")
        x = stack(proj(hidden.data), view=view)
        return HiddenSequence(data=x, frame_rate=hidden.frame_rate, role=out_role)

    def ctc_project(self, fused: HiddenSequence) -> torch.Tensor:
        """Log-probability lattice [T, V+1], blank at column 0."""
        if fused.role is not Role.FUSED:
            raise ContractError(f"ctc_project expects a fused stream, got {fused.role}")
        return torch.log_softmax(self.ctc_head(fused.data), dim=1)

    def downsample_project(self, fused: HiddenSequence) -> HiddenSequence:
        """Strided conv + linear into the decoder embedding space."""
        if fused.role is not Role.FUSED:
            raise ContractError(f"downsample_project expects a fused stream, got {fused.role}")
        t = len(fused)
        k = self.cfg.downsample
        if t < k:
            raise ContractError(f"{t} frames is too short for downsample factor {k}")
        x = self.conv(fused.data.T.unsqueeze(0)).squeeze(0).T
        x = x[: t // k]  # same-padded conv can overshoot floor(T/k) by one
        x = self.llm_proj(x)
        return HiddenSequence(
            data=x, frame_rate=fused.frame_rate / k, role=Role.SPEECH_EMBED
        )
