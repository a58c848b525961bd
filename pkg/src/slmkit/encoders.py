"""Two structurally distinct acoustic encoders over the same input.

Branch "w" keeps a higher frame rate and a wider model; branch "m" pools
harder and is narrower. Each branch also reads its own slice of the input
channels, so the streams carry complementary information: fine temporal
structure survives only in "w", while the trailing channels are visible
only to "m". Subsampling is mean-pooling over fixed windows, which is what
destroys intra-window ordering for the coarser branch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
from torch import nn

from .exceptions import ConfigError, ContractError
from .layers import TransformerStack, sinusoidal_positions
from .mlora import ENCODER_ALPHA, ENCODER_RANK, RoutedView, SiteSpec


class Role(enum.Enum):
    """Which pipeline stage produced a hidden sequence."""

    ENC_W = "enc_w"
    ENC_M = "enc_m"
    ADAPTED_W = "adapted_w"
    ADAPTED_M = "adapted_m"
    FUSED = "fused"
    SPEECH_EMBED = "speech_embed"


@dataclass
class HiddenSequence:
    """Time-major activation matrix plus the bookkeeping to consume it."""

    data: torch.Tensor  # [T, d]
    frame_rate: float
    role: Role

    def __post_init__(self):
        if self.data.dim() != 2 or self.data.shape[0] < 1:
            raise ContractError("hidden sequence must be a nonempty [T, d] matrix")

    def __len__(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class EncoderConfig:
    d_feat: int = 16
    d_model_w: int = 64
    d_model_m: int = 48
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 2
    subsample_w: int = 2
    subsample_m: int = 4
    # Each branch sees a channel window of the input features.
    channels_w: tuple[int, int] = (0, 12)
    channels_m: tuple[int, int] = (4, 16)

    def __post_init__(self):
        if self.subsample_w < 1 or self.subsample_m < 1:
            raise ConfigError("subsample factors must be >= 1")
        if self.d_model_w == self.d_model_m:
            raise ConfigError("the two encoders must differ in width")
        if self.subsample_w == self.subsample_m:
            raise ConfigError("the two encoders must differ in subsampling")
        for lo, hi in (self.channels_w, self.channels_m):
            if not (0 <= lo < hi <= self.d_feat):
                raise ConfigError(f"bad channel window ({lo}, {hi})")
        if min(self.d_model_w, self.d_model_m) < self.n_heads:
            raise ConfigError("model width must be at least the head count")


class AcousticEncoder(nn.Module):
    """One branch: channel slice, mean-pool subsample, project, transform."""

    def __init__(
        self,
        branch: str,
        channels: tuple[int, int],
        subsample: int,
        d_model: int,
        n_layers: int,
        n_heads: int,
        ff_mult: int,
        role: Role,
    ):
        super().__init__()
        self.branch = branch
        self.channels = channels
        self.subsample = subsample
        self.d_model = d_model
        self.role = role
        self.proj = nn.Linear(channels[1] - channels[0], d_model)
        self.stack = TransformerStack(
            d_model, n_heads, ff_mult * d_model, n_layers, f"enc{branch}"
        )

    def lora_sites(self) -> dict[str, SiteSpec]:
        return self.stack.lora_sites(ENCODER_RANK, ENCODER_ALPHA)

    def forward(
        self,
        features: torch.Tensor,
        view: RoutedView | None = None,
        frame_rate: float = 100.0,
    ) -> HiddenSequence:
        if features.dim() != 2:
            raise ContractError("features must be [T, d_feat]")
        t = features.shape[0]
        if t < self.subsample:
            raise ContractError(
                f"input of {t} frames is shorter than subsample factor {self.subsample}"
            )
        lo, hi = self.channels
        x = features[:, lo:hi]
        t_out = t // self.subsample
        x = x[: t_out * self.subsample]
        x = x.reshape(t_out, self.subsample, hi - lo).mean(dim=1)
        x = self.proj(x)
        x = x + sinusoidal_positions(t_out, self.d_model, x)
        x = self.stack(x, view=view)
        return HiddenSequence(
            data=x, frame_rate=frame_rate / self.subsample, role=self.role
        )


class DualEncoder(nn.Module):
    """The w/m encoder pair consumed by the connector."""

    def __init__(self, cfg: EncoderConfig | None = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        c = self.cfg
        self.enc_w = AcousticEncoder(
            "w", c.channels_w, c.subsample_w, c.d_model_w,
            c.n_layers, c.n_heads, c.ff_mult, Role.ENC_W,
        )
        self.enc_m = AcousticEncoder(
            "m", c.channels_m, c.subsample_m, c.d_model_m,
            c.n_layers, c.n_heads, c.ff_mult, Role.ENC_M,
        )

    def lora_sites(self) -> dict[str, SiteSpec]:
        sites = self.enc_w.lora_sites()
        sites.update(self.enc_m.lora_sites())
        return sites

    def encode_w(
        self, features: torch.Tensor, view: RoutedView | None = None,
        frame_rate: float = 100.0,
    ) -> HiddenSequence:
        return self.enc_w(features, view=view, frame_rate=frame_rate)

    def encode_m(
        self, features: torch.Tensor, view: RoutedView | None = None,
        frame_rate: float = 100.0,
    ) -> HiddenSequence:
        return self.enc_m(features, view=view, frame_rate=frame_rate)
