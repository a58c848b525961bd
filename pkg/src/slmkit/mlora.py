"""Per-language low-rank adapters with hard routing by known language id.

A LoRABank owns (A, B) factor pairs for every (injection site, language)
combination. Routing selects one language's adapters; there is no gating or
mixing, and an unknown language id is a hard error. B starts at zero so a
fresh bank is an exact no-op.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import torch
from torch import nn

from .corpus import LanguageId
from .exceptions import ContractError, RoutingError

SHARED_KEY = "shared"

# Paper-derived defaults: decoder-side adapters are twice the rank of the
# speech-side ones.
ENCODER_RANK, ENCODER_ALPHA = 32, 16.0
DECODER_RANK, DECODER_ALPHA = 64, 32.0


@dataclass(frozen=True)
class SiteSpec:
    """One injection point: a linear map of known fan-in/fan-out."""

    d_in: int
    d_out: int
    rank: int
    alpha: float

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError(f"rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ContractError(f"alpha must be > 0, got {self.alpha}")


def _key(site: str, lang_key: str, which: str) -> str:
    if "." in site:
        raise ContractError(f"site name {site!r} must not contain '.'")
    return f"{site}::{lang_key}::{which}"


class LoRABank(nn.Module):
    """All adapters for a registry of sites and a fixed language set.

    With ``shared=True`` a single adapter set is stored and every language
    routes to it (the no-language-specialization ablation).
    """

    def __init__(
        self,
        sites: Mapping[str, SiteSpec],
        languages: Sequence[LanguageId],
        shared: bool = False,
    ):
        super().__init__()
        if not sites:
            raise ContractError("a LoRA bank needs at least one site")
        self.sites = dict(sites)
        self.languages = tuple(languages)
        self.shared = shared
        self._codes = {lang.code for lang in self.languages}
        self.params = nn.ParameterDict()
        lang_keys = [SHARED_KEY] if shared else [l.code for l in self.languages]
        for site, spec in self.sites.items():
            for lk in lang_keys:
                a = torch.randn(spec.rank, spec.d_in) / math.sqrt(spec.d_in)
                self.params[_key(site, lk, "A")] = nn.Parameter(a)
                self.params[_key(site, lk, "B")] = nn.Parameter(
                    torch.zeros(spec.d_out, spec.rank)
                )

    def lang_key(self, lid: LanguageId) -> str:
        if lid.code not in self._codes:
            raise RoutingError(f"unknown language id {lid!r}")
        return SHARED_KEY if self.shared else lid.code

    def pair(self, site: str, lang_key: str) -> tuple[nn.Parameter, nn.Parameter, SiteSpec]:
        if site not in self.sites:
            raise ContractError(f"unregistered LoRA site {site!r}")
        spec = self.sites[site]
        return self.params[_key(site, lang_key, "A")], self.params[_key(site, lang_key, "B")], spec

    def parameters_for_language(self, lid: LanguageId) -> Iterator[nn.Parameter]:
        lk = self.lang_key(lid)
        for site in self.sites:
            a, b, _ = self.pair(site, lk)
            yield a
            yield b

    def site_specs(self) -> dict[str, dict]:
        return {
            site: {
                "d_in": s.d_in,
                "d_out": s.d_out,
                "rank": s.rank,
                "alpha": s.alpha,
            }
            for site, s in self.sites.items()
        }


@dataclass(frozen=True)
class RoutedView:
    """The single-language window onto a bank used during a forward pass."""

    bank: LoRABank
    lid: LanguageId
    lang_key: str

    def delta(self, site: str, x: torch.Tensor) -> torch.Tensor:
        a, b, spec = self.bank.pair(site, self.lang_key)
        return (x @ a.T @ b.T) * (spec.alpha / spec.rank)

    def has_site(self, site: str) -> bool:
        return site in self.bank.sites


def route(bank: LoRABank, lid: LanguageId) -> RoutedView:
    """Constant-time selection of one language's adapters."""
    return RoutedView(bank=bank, lid=lid, lang_key=bank.lang_key(lid))


def lora_apply(
    x: torch.Tensor,
    base_out: torch.Tensor,
    site: str,
    view: RoutedView | None,
) -> torch.Tensor:
    """base_out + (alpha/rank) * B(A(x)) using the view's language only."""
    if view is None:
        return base_out
    return base_out + view.delta(site, x)


def merge_for_language(
    bank: LoRABank, lid: LanguageId, base_weights: Mapping[str, torch.Tensor]
) -> dict[str, torch.Tensor]:
    """Fold one language's adapters into base weight matrices: W + (a/r) B A."""
    lk = bank.lang_key(lid)
    merged: dict[str, torch.Tensor] = {}
    for site, w in base_weights.items():
        a, b, spec = bank.pair(site, lk)
        if w.shape != (spec.d_out, spec.d_in):
            raise ContractError(
                f"site {site}: weight shape {tuple(w.shape)} != ({spec.d_out}, {spec.d_in})"
            )
        merged[site] = w + (spec.alpha / spec.rank) * (b @ a)
    return merged
