"""Toy causal text decoder consuming prompts, CTC tokens, and speech embeds.

The assembled input is [instruction | ctc prompt | speech embeddings |
targets]; cross-entropy supervises target positions only, with each target
predicted from the hidden state one position earlier. The output head is
tied to the embedding table, which lets the frozen-base + adapter training
regime write token identities straight into the residual stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import BLANK_ID
from .encoders import HiddenSequence, Role
from .exceptions import ContractError
from .layers import TransformerStack, sinusoidal_positions
from .mlora import DECODER_ALPHA, DECODER_RANK, RoutedView, SiteSpec


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int  # corpus tokens occupy [1, vocab_size]; 0 stays unused
    d_llm: int = 128
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 2
    max_seq_len: int = 512

    @property
    def eos_id(self) -> int:
        return self.vocab_size + 1

    @property
    def bos_id(self) -> int:
        return self.vocab_size + 2

    @property
    def task_id(self) -> int:
        return self.vocab_size + 3

    @property
    def table_size(self) -> int:
        return self.vocab_size + 4

    def default_instruction(self) -> tuple[int, int]:
        return (self.bos_id, self.task_id)


@dataclass
class PromptLayout:
    """Assembled decoder input plus the supervision mask."""

    embeddings: torch.Tensor  # [L, d_llm]
    loss_mask: torch.Tensor  # bool [L], true exactly on target positions
    target_ids: torch.Tensor  # [n_targets] (empty at inference)
    spans: dict[str, tuple[int, int]]  # half-open [start, end) per section

    def __len__(self) -> int:
        return int(self.embeddings.shape[0])


class ToyDecoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.table_size, cfg.d_llm)
        self.stack = TransformerStack(
            cfg.d_llm, cfg.n_heads, cfg.ff_mult * cfg.d_llm, cfg.n_layers, "dec"
        )

    def lora_sites(self) -> dict[str, SiteSpec]:
        return self.stack.lora_sites(DECODER_RANK, DECODER_ALPHA)

    def _check_ids(self, ids: Sequence[int], what: str) -> torch.Tensor:
        ids = [int(t) for t in ids]
        for t in ids:
            if not 0 <= t < self.cfg.table_size:
                raise ContractError(f"{what} id {t} outside [0, {self.cfg.table_size})")
            if t == BLANK_ID:
                raise ContractError(f"{what} must not contain the CTC blank id")
        return torch.tensor(ids, dtype=torch.long, device=self.embed.weight.device)

    def assemble(
        self,
        instruction: Sequence[int],
        ctc_prompt: Sequence[int],
        e_speech: HiddenSequence,
        targets: Sequence[int] | None = None,
    ) -> PromptLayout:
        """Embed and concatenate the sections in their fixed order."""
        if e_speech.role is not Role.SPEECH_EMBED:
            raise ContractError(f"expected speech embeddings, got {e_speech.role}")
        if e_speech.width != self.cfg.d_llm:
            raise ContractError(
                f"speech width {e_speech.width} != decoder width {self.cfg.d_llm}"
            )
        instr = self._check_ids(instruction, "instruction")
        prompt = self._check_ids(ctc_prompt, "ctc prompt")
        tgt = self._check_ids(targets or [], "target")
        pieces = [self.embed(instr), self.embed(prompt), e_speech.data, self.embed(tgt)]
        lengths = [p.shape[0] for p in pieces]
        total = sum(lengths)
        if total > self.cfg.max_seq_len:
            raise ContractError(f"assembled length {total} exceeds {self.cfg.max_seq_len}")
        bounds = []
        at = 0
        for n in lengths:
            bounds.append((at, at + n))
            at += n
        mask = torch.zeros(total, dtype=torch.bool)
        mask[bounds[3][0] : bounds[3][1]] = True
        return PromptLayout(
            embeddings=torch.cat(pieces, dim=0),
            loss_mask=mask,
            target_ids=tgt,
            spans={
                "instruction": bounds[0],
                "ctc_prompt": bounds[1],
                "speech": bounds[2],
                "target": bounds[3],
            },
        )

    def logits(self, embeddings: torch.Tensor, view: RoutedView | None = None) -> torch.Tensor:
        x = embeddings + sinusoidal_positions(embeddings.shape[0], self.cfg.d_llm, embeddings)
        x = self.stack(x, view=view, causal=True)
        return x @ self.embed.weight.T  # tied output head

    def ce_loss(self, layout: PromptLayout, view: RoutedView | None = None) -> torch.Tensor:
        """Mean cross-entropy over target positions only."""
        if layout.target_ids.numel() == 0:
            raise ContractError("ce_loss needs a layout with targets")
        logits = self.logits(layout.embeddings, view=view)
        positions = torch.nonzero(layout.loss_mask, as_tuple=True)[0]
        return F.cross_entropy(logits[positions - 1], layout.target_ids)

    @torch.no_grad()
    def generate(
        self,
        instruction: Sequence[int],
        ctc_prompt: Sequence[int],
        e_speech: HiddenSequence,
        view: RoutedView | None = None,
        max_len: int = 32,
    ) -> list[int]:
        """Greedy decoding from the assembled prefix; stops at EOS."""
        if max_len < 1:
            raise ContractError("max_len must be >= 1")
        layout = self.assemble(instruction, ctc_prompt, e_speech, targets=None)
        embeds = layout.embeddings
        out: list[int] = []
        for _ in range(max_len):
            logits = self.logits(embeds, view=view)
            nxt = int(logits[-1].argmax().item())
            if nxt == self.cfg.eos_id:
                break
            out.append(nxt)
            nxt_embed = self.embed(torch.tensor([nxt], device=embeds.device))
            embeds = torch.cat([embeds, nxt_embed], dim=0)
        return out
