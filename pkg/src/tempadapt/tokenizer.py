"""Subword tokenizer: greedy frequency-based merge learning, longest-match
encoding with word-boundary tracking, and MLM masking.

The vocabulary is persisted as plain text, one subword per line, line
number = id. Continuation pieces carry the "##" prefix.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

PAD, UNK, CLS, SEP, MASK, URL, EMOJI = (
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[URL]", "[EMOJI]",
)
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK, URL, EMOJI)
# Placeholders survive case folding and are never segmented.
ATOMIC_PLACEHOLDERS = frozenset({URL, EMOJI})
NO_WORD = -1


@dataclass
class Vocabulary:
    tokens: list[str]
    token_to_id: dict[str, int] = field(default_factory=dict)
    # per-word segmentation memo; the vocabulary is immutable after training
    _seg_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ConfigurationError("duplicate tokens in vocabulary")
        for i, tok in enumerate(SPECIAL_TOKENS):
            if self.tokens[i] != tok:
                raise ConfigurationError(
                    f"special token {tok} must have id {i}, found {self.tokens[i]!r}"
                )

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK])

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK]

    @property
    def n_special(self) -> int:
        return len(SPECIAL_TOKENS)

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        tokens = Path(path).read_text().splitlines()
        return cls(tokens)


@dataclass
class TokenSequence:
    ids: list[int]
    word_index: list[int]  # NO_WORD for special positions
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + ["##" + c for c in word[1:]]


def _merge_symbols(a: str, b: str) -> str:
    return a + (b[2:] if b.startswith("##") else b)


def train_vocabulary(corpus: Iterable[str], size: int) -> Vocabulary:
    """Learn a subword vocabulary by greedy frequency-based merges.

    Starts from the character inventory (with continuation markers) and
    repeatedly merges the most frequent adjacent symbol pair, ties broken
    lexicographically, until `size` entries exist or no pair repeats.
    Frequent whole words therefore end up as single subwords.
    """
    word_freq: Counter[str] = Counter()
    for text in corpus:
        for word in text.split():
            if word in ATOMIC_PLACEHOLDERS:
                continue
            word_freq[word.casefold()] += 1

    alphabet = sorted({s for w in word_freq for s in _word_symbols(w)})
    floor = len(SPECIAL_TOKENS) + len(alphabet)
    if size < floor:
        raise ConfigurationError(
            f"vocabulary size {size} below character inventory + specials ({floor})"
        )

    segmentations = {w: _word_symbols(w) for w in word_freq}
    merged: list[str] = []
    while len(SPECIAL_TOKENS) + len(alphabet) + len(merged) < size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for w, syms in segmentations.items():
            f = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best = max(pair_freq, key=lambda p: (pair_freq[p], (-len(p[0]), p)))
        if pair_freq[best] < 2:
            break
        new_sym = _merge_symbols(*best)
        for w, syms in segmentations.items():
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(new_sym)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            segmentations[w] = out
        merged.append(new_sym)

    tokens = list(SPECIAL_TOKENS) + alphabet + merged
    return Vocabulary(tokens)


def _segment_word(word: str, vocab: Vocabulary) -> Optional[list[str]]:
    """Greedy longest-match-first segmentation; None if uncoverable."""
    if word in vocab._seg_cache:
        return vocab._seg_cache[word]
    pieces = []
    pos = 0
    while pos < len(word):
        end = len(word)
        piece = None
        while end > pos:
            cand = word[pos:end] if pos == 0 else "##" + word[pos:end]
            if cand in vocab.token_to_id:
                piece = cand
                break
            end -= 1
        if piece is None:
            vocab._seg_cache[word] = None
            return None
        pieces.append(piece)
        pos = end
    vocab._seg_cache[word] = pieces
    return pieces


def encode(text: str, vocab: Vocabulary, max_len: int = 128) -> TokenSequence:
    """Case-folded greedy subword encoding with CLS/SEP and truncation.

    Each subword records the position of its source word; uncoverable
    words become a single UNK.
    """
    ids = [vocab.token_to_id[CLS]]
    word_index = [NO_WORD]
    truncated = False
    for w_i, word in enumerate(text.split()):
        if word in ATOMIC_PLACEHOLDERS:
            pieces_ids = [vocab.token_to_id[word]]
        else:
            pieces = _segment_word(word.casefold(), vocab)
            if pieces is None:
                pieces_ids = [vocab.token_to_id[UNK]]
            else:
                pieces_ids = [vocab.token_to_id[p] for p in pieces]
        for pid in pieces_ids:
            if len(ids) == max_len - 1:
                truncated = True
                break
            ids.append(pid)
            word_index.append(w_i)
        if truncated:
            break
    ids.append(vocab.token_to_id[SEP])
    word_index.append(NO_WORD)
    return TokenSequence(ids=ids, word_index=word_index, truncated=truncated)


def decode(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of encode up to case folding and UNK substitution."""
    words: list[str] = []
    last_word = None
    for tid, w_i in zip(seq.ids, seq.word_index):
        if w_i == NO_WORD:
            continue
        piece = vocab.tokens[tid]
        if w_i != last_word:
            words.append(piece[2:] if piece.startswith("##") else piece)
            last_word = w_i
        else:
            words[-1] += piece[2:] if piece.startswith("##") else piece
    return " ".join(words)


@dataclass
class MaskingResult:
    masked: TokenSequence
    target_positions: list[int]
    target_ids: list[int]


def doc_masking_seed(seed: int, doc_id: str) -> int:
    """Stable per-document masking seed, independent of iteration order."""
    digest = hashlib.sha256(f"{seed}:{doc_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def apply_mlm_masking(
    seq: TokenSequence,
    vocab: Vocabulary,
    rate: float = 0.15,
    policy: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> MaskingResult:
    """Select each non-special position independently with probability
    `rate`; replace it with MASK / a random regular token / itself per the
    (mask, random, keep) policy. Deterministic given seed."""
    if not 0 <= rate <= 1:
        raise ConfigurationError(f"masking rate {rate} outside [0, 1]")
    if len(policy) != 3 or abs(sum(policy) - 1.0) > 1e-9 or min(policy) < 0:
        raise ConfigurationError(
            f"masking policy {policy} must be 3 nonnegative shares summing to 1"
        )
    rng = np.random.default_rng(seed)
    ids = list(seq.ids)
    positions, originals = [], []
    n_special = len(SPECIAL_TOKENS)
    if rate > 0:
        for pos, w_i in enumerate(seq.word_index):
            if w_i == NO_WORD:
                continue
            if rng.random() >= rate:
                continue
            positions.append(pos)
            originals.append(ids[pos])
            u = rng.random()
            if u < policy[0]:
                ids[pos] = vocab.mask_id
            elif u < policy[0] + policy[1]:
                ids[pos] = int(rng.integers(n_special, vocab.size))
            # else: keep original
    masked = TokenSequence(ids=ids, word_index=list(seq.word_index), truncated=seq.truncated)
    return MaskingResult(masked=masked, target_positions=positions, target_ids=originals)
