"""CTC loss, greedy decoding, and best-path frame alignment.

The loss is the log-space forward algorithm over the blank-augmented label
graph, written in torch ops so gradients w.r.t. the lattice come from
autograd. Frame alignment runs the max-product (Viterbi) version of the same
recursion and backtracks one best state path.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .corpus import BLANK_ID
from .exceptions import InfeasibleAlignmentError

# Large-but-finite stand-in for log(0); keeps logaddexp gradients NaN-free.
_NEG = -1.0e30


def _expand_labels(labels: Sequence[int], vocab_size: int | None) -> list[int]:
    labels = [int(t) for t in labels]
    for t in labels:
        if t == BLANK_ID:
            raise ValueError("labels must not contain the blank id")
        if t < 1 or (vocab_size is not None and t > vocab_size):
            raise ValueError(f"token id {t} outside [1, {vocab_size}]")
    ext = [BLANK_ID]
    for t in labels:
        ext.extend([t, BLANK_ID])
    return ext


def min_frames_required(labels: Sequence[int]) -> int:
    """Shortest lattice that admits an alignment: repeats need a blank."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(
    lattice: torch.Tensor,
    labels: Sequence[int],
    infeasible_as_inf: bool = False,
) -> torch.Tensor:
    """Negative log-probability of all alignments collapsing to ``labels``.

    ``lattice`` is [T, V+1] log-probabilities with blank at column 0.
    Raises InfeasibleAlignmentError when no alignment exists, unless
    ``infeasible_as_inf`` asks for +inf instead.
    """
    if lattice.dim() != 2:
        raise ValueError("lattice must be a [T, V+1] matrix")
    t_total, width = lattice.shape
    labels = [int(t) for t in labels]
    if t_total < min_frames_required(labels):
        if infeasible_as_inf:
            return torch.tensor(float("inf"), dtype=lattice.dtype)
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels (with repeats) do not fit in {t_total} frames"
        )
    ext = _expand_labels(labels, width - 1)
    s_total = len(ext)
    ext_t = torch.tensor(ext, dtype=torch.long, device=lattice.device)
    # Skip transition s-2 -> s exists only for non-blank states with a
    # different predecessor label.
    allow_skip = torch.tensor(
        [
            s >= 2 and ext[s] != BLANK_ID and ext[s] != ext[s - 2]
            for s in range(s_total)
        ],
        device=lattice.device,
    )
    neg = torch.full((1,), _NEG, dtype=lattice.dtype, device=lattice.device)

    alpha = torch.full((s_total,), _NEG, dtype=lattice.dtype, device=lattice.device)
    alpha = alpha.clone()
    alpha[0] = lattice[0, BLANK_ID]
    if s_total > 1:
        alpha[1] = lattice[0, ext[1]]
    for t in range(1, t_total):
        stay = alpha
        from_prev = torch.cat([neg, alpha[:-1]])
        if s_total >= 3:
            from_skip = torch.cat([neg, neg, alpha[:-2]])
            from_skip = torch.where(allow_skip, from_skip, neg)
        else:
            from_skip = torch.full_like(alpha, _NEG)
        alpha = torch.logaddexp(torch.logaddexp(stay, from_prev), from_skip)
        alpha = alpha + lattice[t, ext_t]
    if s_total > 1:
        total = torch.logaddexp(alpha[-1], alpha[-2])
    else:
        total = alpha[-1]
    return -total


def greedy_decode(lattice: torch.Tensor | np.ndarray) -> list[int]:
    """Per-frame argmax, collapse consecutive repeats, drop blanks."""
    if isinstance(lattice, torch.Tensor):
        frames = lattice.detach().cpu().numpy()
    else:
        frames = np.asarray(lattice)
    best = frames.argmax(axis=1)
    out: list[int] = []
    prev = -1
    for sym in best:
        sym = int(sym)
        if sym != prev and sym != BLANK_ID:
            out.append(sym)
        prev = sym
    return out


def frame_align(
    lattice: torch.Tensor | np.ndarray, labels: Sequence[int]
) -> list[tuple[int, int]]:
    """Best-path span of each label token as inclusive (start, end) frames."""
    if isinstance(lattice, torch.Tensor):
        logp = lattice.detach().cpu().numpy().astype(np.float64)
    else:
        logp = np.asarray(lattice, dtype=np.float64)
    t_total, width = logp.shape
    labels = [int(t) for t in labels]
    if not labels:
        return []
    if t_total < min_frames_required(labels):
        raise InfeasibleAlignmentError(
            f"{len(labels)} labels (with repeats) do not fit in {t_total} frames"
        )
    ext = _expand_labels(labels, width - 1)
    s_total = len(ext)

    score = np.full((t_total, s_total), _NEG)
    parent = np.zeros((t_total, s_total), dtype=np.int64)
    score[0, 0] = logp[0, BLANK_ID]
    score[0, 1] = logp[0, ext[1]]
    for t in range(1, t_total):
        for s in range(s_total):
            cands = [score[t - 1, s]]
            if s >= 1:
                cands.append(score[t - 1, s - 1])
            if s >= 2 and ext[s] != BLANK_ID and ext[s] != ext[s - 2]:
                cands.append(score[t - 1, s - 2])
            k = int(np.argmax(cands))
            score[t, s] = cands[k] + logp[t, ext[s]]
            parent[t, s] = s - k

    last = s_total - 1 if score[-1, s_total - 1] >= score[-1, s_total - 2] else s_total - 2
    path = [last]
    for t in range(t_total - 1, 0, -1):
        path.append(parent[t, path[-1]])
    path.reverse()

    spans: list[tuple[int, int]] = []
    for i in range(len(labels)):
        state = 2 * i + 1
        frames = [t for t, s in enumerate(path) if s == state]
        spans.append((frames[0], frames[-1]))
    return spans
