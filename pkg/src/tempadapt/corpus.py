"""Time-stamped corpus handling: ingestion, normalization, filtering,
monthly partitioning, balanced sampling and vocabulary similarity.

Documents are newline-delimited JSON records on disk. A corpus directory
holds one file per (split role, period) plus a manifest recording counts,
the filters applied and the sampling seed.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .errors import ConfigurationError, DataError, SamplingError

SPLIT_ROLES = ("adaptation", "finetune", "test")

URL_RE = re.compile(r"""(?:https?://|www\.)[^\s<>"']+""", re.IGNORECASE)
# Common emoji blocks: misc symbols, dingbats, emoticons, transport,
# supplemental symbols, flags, skin-tone modifiers.
EMOJI_RE = re.compile(
    "["
    "\U0001F300-\U0001F5FF"
    "\U0001F600-\U0001F64F"
    "\U0001F680-\U0001F6FF"
    "\U0001F700-\U0001F77F"
    "\U0001F900-\U0001FAFF"
    "\U00002600-\U000027BF"
    "\U0001F1E6-\U0001F1FF"
    "\U0001F3FB-\U0001F3FF"
    "\U00002B00-\U00002BFF"
    "\U0000FE0F"
    "]+"
)
WHITESPACE_RE = re.compile(r"\s+")

DELETED_MARKERS = frozenset({"[deleted]", "[removed]"})


@dataclass
class Document:
    id: str
    text: str
    timestamp: int
    source_label: Optional[str] = None
    split_role: str = "adaptation"
    author: Optional[str] = None

    def period(self) -> str:
        return period_of(self.timestamp)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "timestamp": self.timestamp,
            "source_label": self.source_label,
            "split_role": self.split_role,
        }


@dataclass
class TimeSlice:
    period_id: str
    documents: list[Document] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.documents)

    def labels(self) -> list[str]:
        return sorted({d.source_label for d in self.documents if d.source_label is not None})


@dataclass
class CorpusManifest:
    corpus_id: str
    periods: list[str]
    counts: dict  # role -> period -> label -> count ("_unlabelled" for None)
    preprocessing_log: list = field(default_factory=list)
    seed: Optional[int] = None
    provenance: dict = field(default_factory=dict)
    balanced: bool = False

    def total(self, role: str) -> int:
        return sum(
            n for per in self.counts.get(role, {}).values() for n in per.values()
        )

    def save(self, path: Path) -> None:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path) -> "CorpusManifest":
        data = json.loads(Path(path).read_text())
        return cls(**data)


def period_of(timestamp: int) -> str:
    """Monthly period id for a UTC timestamp, e.g. 1583020800 -> '2020-03'.

    Months are half-open intervals [first second, first second of next
    month) in UTC, so a boundary timestamp belongs to the month it opens.
    """
    dt = datetime.fromtimestamp(int(timestamp), tz=timezone.utc)
    return f"{dt.year:04d}-{dt.month:02d}"


def normalize_text(raw: str) -> str:
    """Replace URLs/emojis with [URL]/[EMOJI], drop line breaks, collapse
    whitespace runs to single spaces and strip. Idempotent and total."""
    text = URL_RE.sub("[URL]", raw)
    text = EMOJI_RE.sub("[EMOJI]", text)
    text = WHITESPACE_RE.sub(" ", text)
    return text.strip()


@dataclass
class IngestStats:
    read: int = 0
    yielded: int = 0
    malformed: int = 0


def ingest(
    path: Path,
    field_map: dict,
    split_role: str = "adaptation",
    stats: Optional[IngestStats] = None,
) -> Iterator[Document]:
    """Stream Documents from a newline-delimited JSON file.

    field_map names the source fields, e.g. {"text": "body",
    "timestamp": "created_utc", "source_label": "sub"}. Records missing
    text or timestamp (or unparseable) are counted and skipped.
    """
    for key in ("text", "timestamp"):
        if key not in field_map:
            raise ConfigurationError(f"field_map is missing the {key!r} key")
    path = Path(path)
    if not path.exists():
        raise IOError(f"input file not found: {path}")
    if stats is None:
        stats = IngestStats()
    with path.open() as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            stats.read += 1
            try:
                record = json.loads(line)
                text = record[field_map["text"]]
                timestamp = int(record[field_map["timestamp"]])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                stats.malformed += 1
                continue
            label_key = field_map.get("source_label")
            author_key = field_map.get("author")
            doc_id = str(record.get(field_map.get("id", "id"), f"{path.name}:{lineno}"))
            stats.yielded += 1
            yield Document(
                id=doc_id,
                text=str(text),
                timestamp=timestamp,
                source_label=record.get(label_key) if label_key else None,
                split_role=split_role,
                author=record.get(author_key) if author_key else None,
            )


class Filter:
    """A named document predicate; True means keep."""

    name = "filter"

    def __call__(self, doc: Document) -> bool:  # pragma: no cover - interface
        raise NotImplementedError


class DeletedFilter(Filter):
    name = "deleted"

    def __call__(self, doc):
        return doc.text.strip().lower() not in DELETED_MARKERS


class BotAuthorFilter(Filter):
    """Drops documents from blocklisted authors.

    The blocklist can be extended with `flag_repeat_posters`, a declarative
    heuristic that blocks authors posting the same normalized text at least
    `repeat_threshold` times.
    """

    name = "bot_author"

    def __init__(self, blocklist: Iterable[str] = ()):
        self.blocklist = set(blocklist)

    def __call__(self, doc):
        return doc.author not in self.blocklist

    def flag_repeat_posters(self, docs: Iterable[Document], repeat_threshold: int) -> set[str]:
        counts = Counter(
            (d.author, normalize_text(d.text)) for d in docs if d.author is not None
        )
        flagged = {author for (author, _), n in counts.items() if n >= repeat_threshold}
        self.blocklist |= flagged
        return flagged


class LanguageFilter(Filter):
    """Keeps documents whose classified language matches `language`.

    The classifier is pluggable (any text -> language-code callable); there
    is no built-in detector.
    """

    name = "language"

    def __init__(self, language: str, classifier: Optional[Callable[[str], str]] = None):
        if classifier is None:
            raise ConfigurationError(
                "language filtering requested but no classifier configured"
            )
        self.language = language
        self.classifier = classifier

    def __call__(self, doc):
        return self.classifier(doc.text) == self.language


class MinLengthFilter(Filter):
    name = "min_length"

    def __init__(self, min_words: int):
        self.min_words = min_words

    def __call__(self, doc):
        return len(doc.text.split()) >= self.min_words


def filter_documents(
    docs: Iterable[Document],
    predicates: list[Filter],
    log: Optional[list] = None,
) -> Iterator[Document]:
    """Apply predicates in order; record per-predicate removal counts in
    `log` (appended as {"filter": name, "removed": n}) once exhausted."""
    removed = Counter()

    def gen():
        for doc in docs:
            for pred in predicates:
                if not pred(doc):
                    removed[pred.name] += 1
                    break
            else:
                yield doc
        if log is not None:
            for pred in predicates:
                log.append({"filter": pred.name, "removed": removed[pred.name]})

    return gen()


def deduplicate(slice_: TimeSlice, log: Optional[list] = None) -> TimeSlice:
    """Keep the first occurrence (input order) of each normalized text."""
    seen = set()
    kept = []
    for doc in slice_.documents:
        key = normalize_text(doc.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(doc)
    if log is not None:
        log.append(
            {
                "filter": "deduplicate",
                "period": slice_.period_id,
                "removed": len(slice_.documents) - len(kept),
            }
        )
    return TimeSlice(slice_.period_id, kept)


def partition_by_period(docs: Iterable[Document], granularity: str = "month") -> list[TimeSlice]:
    """Bin documents into chronologically ordered monthly slices; empty
    periods are omitted."""
    if granularity != "month":
        raise ConfigurationError(f"unsupported granularity: {granularity!r}")
    by_period: dict[str, list[Document]] = {}
    for doc in docs:
        by_period.setdefault(doc.period(), []).append(doc)
    return [TimeSlice(pid, by_period[pid]) for pid in sorted(by_period)]


def sample_balanced(
    slice_: TimeSlice, n: int, by_label: bool, seed: int
) -> TimeSlice:
    """Uniform sample without replacement, deterministic given seed.

    With by_label, n must divide evenly over the labels present and each
    label takes exactly n/labels documents.
    """
    rng = np.random.default_rng(seed)
    docs = slice_.documents
    if not by_label:
        if n > len(docs):
            raise SamplingError(
                f"period {slice_.period_id}: requested {n}, have {len(docs)}"
            )
        idx = rng.permutation(len(docs))[:n]
        return TimeSlice(slice_.period_id, [docs[i] for i in idx])

    labels = slice_.labels()
    if not labels or n % len(labels) != 0:
        raise SamplingError(
            f"n={n} not divisible by {len(labels)} labels in period {slice_.period_id}"
        )
    quota = n // len(labels)
    chosen = []
    for label in labels:
        pool = [d for d in docs if d.source_label == label]
        if len(pool) < quota:
            raise SamplingError(
                f"period {slice_.period_id}, label {label!r}: "
                f"need {quota}, have {len(pool)} (short {quota - len(pool)})"
            )
        idx = rng.permutation(len(pool))[:quota]
        chosen.extend(pool[i] for i in idx)
    return TimeSlice(slice_.period_id, chosen)


def extract_vocabulary(docs: Iterable[Document | str]) -> set[str]:
    """Distinct case-folded whitespace word types across documents."""
    vocab: set[str] = set()
    for doc in docs:
        text = doc if isinstance(doc, str) else doc.text
        vocab.update(w.casefold() for w in text.split())
    return vocab


def jaccard_similarity(a: set, b: set) -> float:
    """|A n B| / |A u B|; undefined (DataError) when both sets are empty."""
    if not a and not b:
        raise DataError("jaccard similarity of two empty sets is undefined")
    return len(a & b) / len(a | b)


# ---------------------------------------------------------------------------
# Corpus directory I/O


def save_slice(slice_: TimeSlice, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for doc in slice_.documents:
            fh.write(json.dumps(doc.to_record(), sort_keys=True) + "\n")


def load_slice(path: Path, period_id: Optional[str] = None) -> TimeSlice:
    path = Path(path)
    docs = []
    with path.open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            docs.append(
                Document(
                    id=rec["id"],
                    text=rec["text"],
                    timestamp=int(rec["timestamp"]),
                    source_label=rec.get("source_label"),
                    split_role=rec.get("split_role", "adaptation"),
                )
            )
    return TimeSlice(period_id or path.stem, docs)


def save_corpus(
    slices_by_role: dict[str, list[TimeSlice]],
    manifest: CorpusManifest,
    out_dir: Path,
) -> None:
    """Write one slice file per (role, period) plus the manifest."""
    out_dir = Path(out_dir)
    for role, slices in slices_by_role.items():
        for sl in slices:
            save_slice(sl, out_dir / "slices" / role / f"{sl.period_id}.jsonl")
    manifest.save(out_dir / "manifest.json")


def load_corpus(corpus_dir: Path) -> tuple[dict[str, list[TimeSlice]], CorpusManifest]:
    corpus_dir = Path(corpus_dir)
    manifest = CorpusManifest.load(corpus_dir / "manifest.json")
    slices_by_role: dict[str, list[TimeSlice]] = {}
    for role_dir in sorted((corpus_dir / "slices").iterdir()):
        slices_by_role[role_dir.name] = [
            load_slice(p) for p in sorted(role_dir.glob("*.jsonl"))
        ]
    return slices_by_role, manifest


def build_manifest(
    corpus_id: str,
    slices_by_role: dict[str, list[TimeSlice]],
    preprocessing_log: Optional[list] = None,
    seed: Optional[int] = None,
    provenance: Optional[dict] = None,
    balanced: bool = False,
) -> CorpusManifest:
    """Count the materialized slices into a manifest."""
    periods = sorted({sl.period_id for slices in slices_by_role.values() for sl in slices})
    counts: dict = {}
    for role, slices in slices_by_role.items():
        counts[role] = {}
        for sl in slices:
            per_label = Counter(d.source_label or "_unlabelled" for d in sl.documents)
            counts[role][sl.period_id] = dict(sorted(per_label.items()))
    manifest = CorpusManifest(
        corpus_id=corpus_id,
        periods=periods,
        counts=counts,
        preprocessing_log=preprocessing_log or [],
        seed=seed,
        provenance=provenance or {},
        balanced=balanced,
    )
    if balanced:
        for role in counts:
            for pid, per_label in counts[role].items():
                labelled = {k: v for k, v in per_label.items() if k != "_unlabelled"}
                if labelled and len(set(labelled.values())) > 1:
                    raise DataError(
                        f"manifest declared balanced but {role}/{pid} counts are {labelled}"
                    )
    return manifest
