import math

import numpy as np
import pytest
import torch

from slmkit.ctc import ctc_loss, frame_align, greedy_decode, min_frames_required
from slmkit.exceptions import InfeasibleAlignmentError

from oracles import ctc_loss_enumerate


def uniform_lattice(t, vocab, dtype=torch.float64):
    return torch.full((t, vocab + 1), math.log(1.0 / (vocab + 1)), dtype=dtype)


def random_lattice(rng, t, vocab):
    logits = rng.standard_normal((t, vocab + 1)) * 2.0
    x = torch.tensor(logits, dtype=torch.float64)
    return torch.log_softmax(x, dim=1)


def test_two_frame_single_label_hand_value():
    # paths {aa, a-, -a}, each 0.25 -> loss = -ln(0.75)
    loss = ctc_loss(uniform_lattice(2, 1), [1])
    assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_three_frame_two_labels_hand_value():
    # five collapsing paths out of 27 -> loss = ln(27/5)
    loss = ctc_loss(uniform_lattice(3, 2), [1, 2])
    assert loss.item() == pytest.approx(math.log(27.0 / 5.0), abs=1e-12)


def test_repeat_needs_blank_infeasible():
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(uniform_lattice(1, 1), [1, 1])
    assert torch.isinf(ctc_loss(uniform_lattice(1, 1), [1, 1], infeasible_as_inf=True))
    assert min_frames_required([1, 1]) == 3


def test_matches_enumeration_on_random_lattices():
    rng = np.random.default_rng(0)
    for _ in range(60):
        t = int(rng.integers(1, 7))
        vocab = int(rng.integers(1, 4))
        lattice = random_lattice(rng, t, vocab)
        n_lab = int(rng.integers(0, t + 1))
        labels = [int(x) for x in rng.integers(1, vocab + 1, size=n_lab)]
        if t < min_frames_required(labels):
            continue
        got = ctc_loss(lattice, labels).item()
        want = ctc_loss_enumerate(lattice.numpy(), labels)
        assert got == pytest.approx(want, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    lattice = random_lattice(rng, 5, 2).requires_grad_(True)
    labels = [1, 2, 1]
    loss = ctc_loss(lattice, labels)
    loss.backward()
    grad = lattice.grad.clone()
    eps = 1e-6
    for t, v in [(0, 0), (2, 1), (4, 2), (1, 2)]:
        plus = lattice.detach().clone()
        plus[t, v] += eps
        minus = lattice.detach().clone()
        minus[t, v] -= eps
        fd = (ctc_loss(plus, labels) - ctc_loss(minus, labels)).item() / (2 * eps)
        assert grad[t, v].item() == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_greedy_decode_collapse_rules():
    def lattice_from_syms(syms, vocab=2):
        lat = np.full((len(syms), vocab + 1), -10.0)
        for t, s in enumerate(syms):
            lat[t, s] = 0.0
        return lat

    assert greedy_decode(lattice_from_syms([1, 1, 0, 2])) == [1, 2]
    assert greedy_decode(lattice_from_syms([0, 0, 0])) == []
    assert greedy_decode(lattice_from_syms([1, 0, 1])) == [1, 1]


def test_frame_align_two_frame_peak():
    lat = np.log(np.array([[0.01, 0.98, 0.01], [0.98, 0.01, 0.01]]))
    assert frame_align(lat, [1]) == [(0, 0)]


def test_frame_align_spans_ordered_and_in_range():
    rng = np.random.default_rng(2)
    for _ in range(30):
        t = int(rng.integers(4, 12))
        labels = [int(x) for x in rng.integers(1, 4, size=rng.integers(1, 4))]
        if t < min_frames_required(labels):
            continue
        lat = random_lattice(rng, t, 3)
        spans = frame_align(lat, labels)
        assert len(spans) == len(labels)
        prev_end = -1
        for start, end in spans:
            assert 0 <= start <= end < t
            assert start > prev_end
            prev_end = end


def test_greedy_decode_recovers_peaked_alignment():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = [int(x) for x in rng.integers(1, 4, size=rng.integers(1, 5))]
        t = min_frames_required(labels) + int(rng.integers(0, 4))
        # build a frame sequence realizing the labels, padded with blanks
        syms = []
        prev = None
        for lab in labels:
            if prev == lab:
                syms.append(0)
            syms.append(lab)
            prev = lab
        while len(syms) < t:
            syms.append(0)
        lat = np.full((t, 4), -12.0)
        for i, s in enumerate(syms):
            lat[i, s] = 0.0
        assert greedy_decode(lat) == labels
