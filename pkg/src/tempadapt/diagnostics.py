"""Token-level attribution: POS alignment to subwords, per-token loss
deltas between a control and a candidate model, contribution shares by
POS and by decile, most-improved tokens and class-distinctiveness tables.

Deltas are signed (control loss minus candidate loss, positive means the
candidate improved) and negative deltas participate in every sum, which
makes the per-tag decomposition of the total exact.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import TimeSlice
from .errors import DataError
from .model import TokenLossRecord
from .tokenizer import NO_WORD, TokenSequence, Vocabulary, encode

NONE_TAG = "NONE"


@dataclass
class MaskedTokenRecord:
    doc_id: str
    period: str
    subword_id: int
    subword: str
    word_index: int
    position: int
    pos: str
    word: str
    loss_control: float
    loss_candidate: float

    @property
    def delta(self) -> float:
        return self.loss_control - self.loss_candidate


@dataclass
class PosContribution:
    pos: str
    contribution_share: float  # percent of total delta
    frequency_share: float  # percent of masked tokens


@dataclass
class DistinctivenessRow:
    class_bucket: int  # number of classes the subwords appear in
    n_subwords: int
    n_comments: int

    @property
    def avg_frequency(self) -> float:
        if self.n_subwords == 0:
            return 0.0
        return self.n_comments / self.n_subwords / self.class_bucket


def align_pos_to_subwords(word_tags: Sequence[str], seq: TokenSequence) -> list[str]:
    """Each subword inherits its source word's tag; special positions get
    NONE and are excluded from all shares downstream."""
    tags = []
    for w_i in seq.word_index:
        if w_i == NO_WORD:
            tags.append(NONE_TAG)
            continue
        if w_i >= len(word_tags):
            raise DataError(f"word index {w_i} outside tag range {len(word_tags)}")
        tags.append(word_tags[w_i])
    return tags


def loss_deltas(
    control: Sequence[TokenLossRecord],
    candidate: Sequence[TokenLossRecord],
    period: str,
    gold_tags: dict,
    doc_texts: dict,
    vocab: Vocabulary,
) -> list[MaskedTokenRecord]:
    """Pair two per-token loss runs (same slice, same masking seed) into
    MaskedTokenRecords carrying POS tags and source words."""
    if len(control) != len(candidate):
        raise DataError(
            f"record sets differ in size: {len(control)} control vs {len(candidate)} candidate"
        )
    records = []
    for ctl, cand in zip(control, candidate):
        if (ctl.doc_id, ctl.position) != (cand.doc_id, cand.position):
            raise DataError(
                f"misaligned records: control ({ctl.doc_id}, {ctl.position}) vs "
                f"candidate ({cand.doc_id}, {cand.position})"
            )
        words = doc_texts[ctl.doc_id].split()
        tags = gold_tags[ctl.doc_id]
        records.append(
            MaskedTokenRecord(
                doc_id=ctl.doc_id,
                period=period,
                subword_id=ctl.subword_id,
                subword=vocab.tokens[ctl.subword_id],
                word_index=ctl.word_index,
                position=ctl.position,
                pos=tags[ctl.word_index],
                word=words[ctl.word_index],
                loss_control=ctl.loss,
                loss_candidate=cand.loss,
            )
        )
    return records


def contribution_by_pos(records: Sequence[MaskedTokenRecord]) -> list[PosContribution]:
    """Per POS tag: share of the total loss delta and share of masked
    tokens. Both share columns sum to 100."""
    total = sum(r.delta for r in records)
    if total == 0:
        raise DataError("total loss delta is zero; contribution shares undefined")
    delta_by_tag: dict[str, float] = defaultdict(float)
    count_by_tag: dict[str, int] = defaultdict(int)
    for r in records:
        delta_by_tag[r.pos] += r.delta
        count_by_tag[r.pos] += 1
    n = len(records)
    return [
        PosContribution(
            pos=tag,
            contribution_share=delta_by_tag[tag] / total * 100.0,
            frequency_share=count_by_tag[tag] / n * 100.0,
        )
        for tag in sorted(delta_by_tag)
    ]


def decile_contributions(records: Sequence[MaskedTokenRecord]) -> list[float]:
    """Sort by delta descending, split into 10 near-equal bins (remainder
    to the earlier bins) and report each bin's share of the total delta."""
    if len(records) < 10:
        raise DataError(f"need at least 10 records for deciles, have {len(records)}")
    deltas = sorted((r.delta for r in records), reverse=True)
    total = sum(deltas)
    if total == 0:
        raise DataError("total loss delta is zero; decile shares undefined")
    n = len(deltas)
    base, rem = divmod(n, 10)
    shares = []
    start = 0
    for b in range(10):
        size = base + (1 if b < rem else 0)
        shares.append(sum(deltas[start : start + size]) / total * 100.0)
        start += size
    return shares


def top_improved_tokens(
    records: Sequence[MaskedTokenRecord], k: int
) -> list[MaskedTokenRecord]:
    """Top-k records by delta descending; ties broken by (period, doc id,
    position) for determinism."""
    if k < 1:
        raise DataError("k must be at least 1")
    ordered = sorted(records, key=lambda r: (-r.delta, r.period, r.doc_id, r.position))
    return ordered[:k]


def top_fraction(records: Sequence[MaskedTokenRecord], fraction: float = 0.1) -> list[MaskedTokenRecord]:
    """The top `fraction` of records by delta (at least one)."""
    k = max(1, int(len(records) * fraction))
    return top_improved_tokens(records, k)


def subword_class_occurrences(
    test_slice: TimeSlice, gold_tags: dict, vocab: Vocabulary, max_len: int = 128
) -> dict[tuple[str, str], dict[str, set]]:
    """(subword, POS) -> class -> set of doc ids containing it, from one
    full scan of a labelled test slice."""
    occurrences: dict[tuple[str, str], dict[str, set]] = defaultdict(lambda: defaultdict(set))
    for doc in test_slice.documents:
        if doc.source_label is None:
            raise DataError(f"document {doc.id} in labelled slice has no label")
        seq = encode(doc.text, vocab, max_len)
        tags = align_pos_to_subwords(gold_tags[doc.id], seq)
        for tid, tag in zip(seq.ids, tags):
            if tag == NONE_TAG:
                continue
            occurrences[(vocab.tokens[tid], tag)][doc.source_label].add(doc.id)
    return occurrences


def distinctiveness_table(
    top_records: Sequence[MaskedTokenRecord],
    test_slices: dict,
    gold_tags: dict,
    vocab: Vocabulary,
    n_classes: Optional[int] = None,
    max_len: int = 128,
) -> list[DistinctivenessRow]:
    """Bucket the distinct (subword, period) entries of the most-improved
    records by how many classes the subword appears in (same POS as the
    improved usage) within that period's labelled test slice.

    A comment counts once per subword it contains; average frequency is
    comments / subwords / classes-in-bucket.
    """
    # distinct (subword, period), tag taken from the highest-delta usage
    entries: dict[tuple[str, str], MaskedTokenRecord] = {}
    for r in sorted(top_records, key=lambda r: -r.delta):
        entries.setdefault((r.subword, r.period), r)

    occ_by_period = {
        period: subword_class_occurrences(sl, gold_tags, vocab, max_len)
        for period, sl in test_slices.items()
        if any(key[1] == period for key in entries)
    }
    if n_classes is None:
        labels = set()
        for sl in test_slices.values():
            labels.update(sl.labels())
        n_classes = len(labels)

    subwords_per_bucket: dict[int, int] = defaultdict(int)
    comments_per_bucket: dict[int, int] = defaultdict(int)
    for (subword, period), rec in entries.items():
        if period not in occ_by_period:
            raise DataError(f"no labelled test slice for period {period}")
        per_class = occ_by_period[period].get((subword, rec.pos), {})
        n_cls = len(per_class)
        if n_cls == 0:
            continue
        subwords_per_bucket[n_cls] += 1
        comments_per_bucket[n_cls] += sum(len(ids) for ids in per_class.values())
    return [
        DistinctivenessRow(
            class_bucket=b,
            n_subwords=subwords_per_bucket.get(b, 0),
            n_comments=comments_per_bucket.get(b, 0),
        )
        for b in range(1, n_classes + 1)
    ]


# ---------------------------------------------------------------------------
# CSV persistence

RECORD_COLUMNS = (
    "doc_id", "period", "subword", "word_index", "pos",
    "loss_control", "loss_candidate", "delta",
)


def save_records_csv(records: Sequence[MaskedTokenRecord], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.doc_id, r.period, r.subword, r.word_index, r.pos,
                    repr(r.loss_control), repr(r.loss_candidate), repr(r.delta),
                ]
            )
