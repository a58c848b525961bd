"""Deterministic synthetic multilingual corpus.

Each language owns a sub-vocabulary of token ids and a bank of acoustic
prototype vectors. An utterance is a token sequence rendered to features by
repeating each token's prototype for a fixed number of frames and adding
Gaussian noise. Languages placed in the same "conflict group" share the
exact same prototype bank but assign prototypes to tokens through a
different permutation, so the token identity of a frame is unrecoverable
without the language id. Everything is a pure function of explicit seeds.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, ContractError, ManifestError

BLANK_ID = 0  # CTC blank; real tokens live in [1, vocab_size]

_SIDECAR_MAGIC = b"SLMF"
_SIDECAR_HEADER = struct.Struct("<4sIII")  # magic, n_frames, d_feat, reserved


@dataclass(frozen=True)
class LanguageId:
    """Dense language identity: short code plus stable index."""

    code: str
    index: int


@dataclass(frozen=True)
class CorpusConfig:
    num_languages: int = 2
    tokens_per_language: int = 6
    vocab_size: int | None = None  # derived from the groups when None
    d_feat: int = 16
    frames_per_token: int = 8
    frame_rate: float = 100.0
    noise_std: float = 0.05
    conflict_groups: tuple[tuple[int, ...], ...] | None = None  # None = singletons
    counts: tuple[int, ...] | int = 100
    min_tokens: int = 3
    max_tokens: int = 6
    num_speakers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.num_languages < 1:
            raise ConfigError("num_languages must be >= 1")
        if self.tokens_per_language < 1:
            raise ConfigError("tokens_per_language must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not (1 <= self.min_tokens <= self.max_tokens):
            raise ConfigError("need 1 <= min_tokens <= max_tokens")
        groups = self.conflict_groups
        if groups is None:
            groups = tuple((i,) for i in range(self.num_languages))
            object.__setattr__(self, "conflict_groups", groups)
        else:
            object.__setattr__(
                self, "conflict_groups", tuple(tuple(g) for g in groups)
            )
            groups = self.conflict_groups
        seen = [i for g in groups for i in g]
        if sorted(seen) != list(range(self.num_languages)):
            raise ConfigError(
                "every language index must appear in exactly one conflict group"
            )
        counts = self.counts
        if isinstance(counts, int):
            counts = (counts,) * self.num_languages
            object.__setattr__(self, "counts", counts)
        else:
            object.__setattr__(self, "counts", tuple(int(c) for c in counts))
            counts = self.counts
        if len(counts) != self.num_languages or any(c < 1 for c in counts):
            raise ConfigError("counts must give one integer >= 1 per language")
        needed = len(groups) * self.tokens_per_language
        if self.vocab_size is None:
            object.__setattr__(self, "vocab_size", needed)
        elif self.vocab_size < needed:
            raise ConfigError(
                f"vocab_size {self.vocab_size} < {needed} required by the groups"
            )

    # -- language / group bookkeeping ------------------------------------

    def languages(self) -> tuple[LanguageId, ...]:
        return tuple(LanguageId(f"L{i}", i) for i in range(self.num_languages))

    def language(self, key: int | str) -> LanguageId:
        for lang in self.languages():
            if key == lang.index or key == lang.code:
                return lang
        raise ConfigError(f"unknown language {key!r}")

    def group_of(self, lang_index: int) -> tuple[int, int]:
        """Return (group index, member position within the group)."""
        for gi, group in enumerate(self.conflict_groups):
            if lang_index in group:
                return gi, group.index(lang_index)
        raise ConfigError(f"language index {lang_index} is in no conflict group")

    def sub_vocabulary(self, lang: LanguageId) -> np.ndarray:
        """Token ids (1-based) available to this language."""
        gi, _ = self.group_of(lang.index)
        n = self.tokens_per_language
        return np.arange(1 + gi * n, 1 + (gi + 1) * n, dtype=np.int64)

    def token_map(self, lang: LanguageId) -> np.ndarray:
        """Prototype index -> token id; a cyclic shift per group member."""
        gi, member = self.group_of(lang.index)
        sub = self.sub_vocabulary(lang)
        n = self.tokens_per_language
        return sub[(np.arange(n) + member) % n]

    def group_prototypes(self, group_index: int) -> np.ndarray:
        """Prototype frame patterns [n_tokens, frames_per_token, d_feat]."""
        rng = np.random.default_rng([self.seed, 0x9E37, group_index])
        vecs = rng.standard_normal((self.tokens_per_language, self.d_feat))
        pats = np.repeat(vecs[:, None, :], self.frames_per_token, axis=1)
        return pats.astype(np.float32)


@dataclass(eq=False)
class Utterance:
    """One synthetic speech sample."""

    id: str
    lang: LanguageId
    speaker: str
    tokens: tuple[int, ...]
    features: np.ndarray  # [n_frames, d_feat] float32
    start_s: float
    end_s: float
    frame_rate: float = 100.0

    def __post_init__(self):
        self.tokens = tuple(int(t) for t in self.tokens)
        if self.end_s <= self.start_s:
            raise ContractError("end_s must exceed start_s")

    @property
    def n_frames(self) -> int:
        return int(self.features.shape[0])

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.lang == other.lang
            and self.speaker == other.speaker
            and self.tokens == other.tokens
            and self.start_s == other.start_s
            and self.end_s == other.end_s
            and self.frame_rate == other.frame_rate
            and self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )


def _utterance_rng(cfg: CorpusConfig, speaker: str, seed: int) -> np.random.Generator:
    # Deliberately language-independent so that conflict-group mates drawn
    # with matched (speaker, seed) share prototype sequences and noise.
    return np.random.default_rng([cfg.seed, zlib.crc32(speaker.encode()), seed])


def generate_utterance(
    cfg: CorpusConfig,
    lang: LanguageId,
    speaker: str,
    seed: int,
    prototypes: Mapping[int, np.ndarray] | None = None,
) -> Utterance:
    """Render a deterministic utterance for one language.

    ``prototypes`` optionally overrides the per-group prototype bank with
    arrays of shape [n_tokens, frames_per_token, d_feat]; the default bank
    repeats one vector per token.
    """
    cfg.language(lang.code)
    if cfg.language(lang.code).index != lang.index:
        raise ConfigError(f"language {lang} does not match the corpus config")
    gi, _ = cfg.group_of(lang.index)
    bank = None if prototypes is None else prototypes.get(gi)
    if bank is None:
        bank = cfg.group_prototypes(gi)
    bank = np.asarray(bank, dtype=np.float32)
    expect = (cfg.tokens_per_language, cfg.frames_per_token, cfg.d_feat)
    if bank.shape != expect:
        raise ConfigError(f"prototype bank shape {bank.shape} != {expect}")

    rng = _utterance_rng(cfg, speaker, seed)
    n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    proto_idx = rng.integers(0, cfg.tokens_per_language, size=n_tok)
    feats = bank[proto_idx].reshape(-1, cfg.d_feat)
    if cfg.noise_std > 0:
        feats = feats + rng.standard_normal(feats.shape) * cfg.noise_std
    tokens = cfg.token_map(lang)[proto_idx]
    n_frames = feats.shape[0]
    return Utterance(
        id=f"{lang.code}_{speaker}_{seed:06d}",
        lang=lang,
        speaker=speaker,
        tokens=tuple(int(t) for t in tokens),
        features=np.ascontiguousarray(feats, dtype=np.float32),
        start_s=0.0,
        end_s=n_frames / cfg.frame_rate,
        frame_rate=cfg.frame_rate,
    )


def balance_weights(counts: Sequence[int], beta: float = 0.5) -> np.ndarray:
    """Temperature resampling weights: p_i = counts_i**beta / sum."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 1):
        raise ValueError("all counts must be >= 1")
    w = counts**beta
    return w / w.sum()


def speed_perturb(u: Utterance, factor: float) -> Utterance:
    """Resample features along time by linear interpolation; labels unchanged."""
    if factor <= 0:
        raise ValueError(f"speed factor must be > 0, got {factor}")
    t = u.n_frames
    t_new = int(np.rint(t / factor))
    if t_new < 1:
        raise ValueError(f"factor {factor} collapses {t} frames to zero length")
    if t_new == t:
        feats = u.features.copy()
    else:
        pos = np.linspace(0.0, t - 1, t_new)
        base = np.arange(t, dtype=np.float64)
        feats = np.empty((t_new, u.features.shape[1]), dtype=np.float32)
        for c in range(u.features.shape[1]):
            feats[:, c] = np.interp(pos, base, u.features[:, c].astype(np.float64))
    return replace(
        u,
        features=feats,
        end_s=u.start_s + t_new / u.frame_rate,
        tokens=u.tokens,
    )


def spec_mask(
    u: Utterance,
    max_time_masks: int,
    max_feat_masks: int,
    rng: np.random.Generator,
    max_time_width: int = 10,
    max_feat_width: int = 4,
) -> Utterance:
    """SpecAugment-style masking: zero random time spans and feature channels."""
    t, d = u.features.shape
    if max_time_width >= t or max_feat_width >= d:
        raise ValueError("mask widths must be smaller than the feature matrix")
    feats = u.features.copy()
    for _ in range(max_time_masks):
        w = int(rng.integers(0, max_time_width + 1))
        t0 = int(rng.integers(0, t - w + 1))
        feats[t0 : t0 + w, :] = 0.0
    for _ in range(max_feat_masks):
        w = int(rng.integers(0, max_feat_width + 1))
        f0 = int(rng.integers(0, d - w + 1))
        feats[:, f0 : f0 + w] = 0.0
    return replace(u, features=feats)


# -- manifest + feature sidecar I/O ---------------------------------------


def write_features(path: Path, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_SIDECAR_HEADER.pack(_SIDECAR_MAGIC, features.shape[0], features.shape[1], 0))
        fh.write(features.tobytes(order="C"))


def read_features(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_SIDECAR_HEADER.size)
        if len(header) != _SIDECAR_HEADER.size:
            raise ManifestError(f"{path}: truncated sidecar header")
        magic, t, d, _ = _SIDECAR_HEADER.unpack(header)
        if magic != _SIDECAR_MAGIC:
            raise ManifestError(f"{path}: bad magic {magic!r}")
        data = fh.read(4 * t * d)
    if len(data) != 4 * t * d:
        raise ManifestError(f"{path}: truncated sidecar payload")
    return np.frombuffer(data, dtype="<f4").reshape(t, d).copy()


def write_manifest(
    path: str | Path, utterances: Sequence[Utterance], inline_features: bool = False
) -> None:
    """Write utterances as JSONL; features go to a sidecar dir unless inline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    feat_dir = path.parent / f"{path.stem}_feats"
    if not inline_features and utterances:
        feat_dir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for u in utterances:
            row = {
                "id": u.id,
                "lang": u.lang.code,
                "lang_index": u.lang.index,
                "speaker": u.speaker,
                "tokens": list(u.tokens),
                "start_s": u.start_s,
                "end_s": u.end_s,
                "frame_rate": u.frame_rate,
            }
            if inline_features:
                row["features"] = [[float(x) for x in r] for r in u.features]
            else:
                ref = f"{feat_dir.name}/{u.id}.slmf"
                write_features(path.parent / ref, u.features)
                row["feat_ref"] = ref
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_manifest(path: str | Path) -> list[Utterance]:
    path = Path(path)
    out: list[Utterance] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from exc
            try:
                if "features" in row:
                    feats = np.asarray(row["features"], dtype=np.float32)
                else:
                    feats = read_features(path.parent / row["feat_ref"])
                out.append(
                    Utterance(
                        id=row["id"],
                        lang=LanguageId(row["lang"], int(row["lang_index"])),
                        speaker=row["speaker"],
                        tokens=tuple(row["tokens"]),
                        features=feats,
                        start_s=float(row["start_s"]),
                        end_s=float(row["end_s"]),
                        frame_rate=float(row.get("frame_rate", 100.0)),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ManifestError(f"{path}: line {lineno}: missing field {exc}") from exc
    return out
