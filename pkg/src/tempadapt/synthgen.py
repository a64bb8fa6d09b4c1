"""Synthetic temporal corpus generator.

Produces labelled monthly corpora with a Zipfian background vocabulary,
bursty event tokens (burst at onset, geometric decay afterwards), and
class-discriminative cue tokens that drift over time. Every word carries a
gold part-of-speech tag assigned by vocabulary stratum, and an event
ledger records the ground-truth placement of every event occurrence so
downstream attribution analyses can be checked exactly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import CorpusManifest, Document, TimeSlice, build_manifest
from .errors import ConfigurationError, DataError

POS_TAGS = ("PROPN", "NOUN", "VERB", "ADJ", "ADV", "DET", "CONJ", "PRON")

# Probability-mass shares of the background vocabulary per tag. Events are
# always PROPN and cue tokens always NOUN, on top of these.
BACKGROUND_TAG_SHARES = {
    "NOUN": 0.26,
    "VERB": 0.20,
    "ADJ": 0.12,
    "ADV": 0.08,
    "DET": 0.14,
    "CONJ": 0.08,
    "PRON": 0.12,
}

SHARED = "shared"
BASE_YEAR, BASE_MONTH = 2020, 1


@dataclass
class EventSpec:
    token: str
    onset_period: int
    peak_rate: float  # expected occurrences per 1,000 documents at onset
    decay_factor: float  # in (0, 1), applied per period after onset
    class_scope: str = SHARED  # "shared" or one class name


@dataclass
class CueConfig:
    n_stable_per_class: int = 4
    n_drifting_per_class: int = 6
    cue_rate: float = 0.06  # per-token probability of emitting a class cue
    drift_half_life: float = 2.0  # periods until half the drifting cues rotate


@dataclass
class GeneratorSpec:
    n_periods: int
    classes: list[str]
    docs_per_period_per_class: dict  # split role -> count
    background_vocab_size: int = 1200
    zipf_exponent: float = 1.1
    events: list[EventSpec] = field(default_factory=list)
    cue_config: CueConfig = field(default_factory=CueConfig)
    doc_length: tuple[int, int] = (12, 28)
    # Roles whose documents receive no event injections; lets a "pretrain"
    # split stand in for generic, time-neutral pre-training text.
    event_free_roles: tuple = ()
    seed: int = 0

    def validate(self) -> None:
        if self.n_periods < 2:
            raise ConfigurationError("need at least 2 periods")
        if len(self.classes) < 2:
            raise ConfigurationError("need at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("duplicate class names")
        for ev in self.events:
            if not 0 <= ev.onset_period < self.n_periods:
                raise ConfigurationError(
                    f"event {ev.token!r}: onset {ev.onset_period} outside [0, {self.n_periods})"
                )
            if ev.peak_rate <= 0:
                raise ConfigurationError(f"event {ev.token!r}: peak_rate must be > 0")
            if not 0 < ev.decay_factor < 1:
                raise ConfigurationError(f"event {ev.token!r}: decay_factor must be in (0,1)")
            if ev.class_scope != SHARED and ev.class_scope not in self.classes:
                raise ConfigurationError(f"event {ev.token!r}: unknown class scope")
        if self.cue_config.drift_half_life <= 0:
            raise ConfigurationError("drift half-life must be positive")
        lo, hi = self.doc_length
        if not 1 <= lo <= hi:
            raise ConfigurationError("invalid document length range")
        roles = set(self.docs_per_period_per_class)
        if not roles <= {"pretrain", "adaptation", "finetune", "test"}:
            raise ConfigurationError(f"unknown split roles: {roles}")
        if not set(self.event_free_roles) <= roles:
            raise ConfigurationError(
                f"event_free_roles {self.event_free_roles!r} not among split roles"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        data["events"] = [EventSpec(**ev) for ev in data.get("events", [])]
        if "cue_config" in data:
            data["cue_config"] = CueConfig(**data["cue_config"])
        if "doc_length" in data:
            data["doc_length"] = tuple(data["doc_length"])
        if "event_free_roles" in data:
            data["event_free_roles"] = tuple(data["event_free_roles"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["doc_length"] = list(self.doc_length)
        d["event_free_roles"] = list(self.event_free_roles)
        return d


def burst_profile(event: EventSpec, period: int, n_periods: Optional[int] = None) -> float:
    """Expected occurrences per 1,000 documents at `period`: zero before
    onset, peak at onset, geometric decay afterwards."""
    if period < 0 or (n_periods is not None and period >= n_periods):
        raise DataError(f"period {period} out of range")
    if period < event.onset_period:
        return 0.0
    return event.peak_rate * event.decay_factor ** (period - event.onset_period)


def period_id_for_index(index: int) -> str:
    """Map period index 0, 1, ... to consecutive month ids from 2020-01."""
    month0 = (BASE_YEAR * 12 + (BASE_MONTH - 1)) + index
    return f"{month0 // 12:04d}-{month0 % 12 + 1:02d}"


def _period_start_ts(index: int) -> int:
    month0 = (BASE_YEAR * 12 + (BASE_MONTH - 1)) + index
    dt = datetime(month0 // 12, month0 % 12 + 1, 1, tzinfo=timezone.utc)
    return int(dt.timestamp())


class EventLedger:
    """Ground truth of realized event occurrences per (event, period)."""

    def __init__(self):
        self.counts: dict[tuple[str, str], int] = {}
        self.classes: dict[tuple[str, str], set[str]] = {}

    def record(self, token: str, period_id: str, cls: str, n: int = 1) -> None:
        key = (token, period_id)
        self.counts[key] = self.counts.get(key, 0) + n
        self.classes.setdefault(key, set()).add(cls)

    def count(self, token: str, period_id: str) -> int:
        return self.counts.get((token, period_id), 0)

    def tokens(self) -> set[str]:
        return {token for token, _ in self.counts}

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for (token, period_id) in sorted(self.counts):
                fh.write(
                    json.dumps(
                        {
                            "event": token,
                            "period": period_id,
                            "count": self.counts[(token, period_id)],
                            "classes": sorted(self.classes[(token, period_id)]),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: Path) -> "EventLedger":
        ledger = cls()
        with Path(path).open() as fh:
            for line in fh:
                rec = json.loads(line)
                key = (rec["event"], rec["period"])
                ledger.counts[key] = rec["count"]
                ledger.classes[key] = set(rec["classes"])
        return ledger


@dataclass
class SyntheticCorpus:
    slices_by_role: dict[str, list[TimeSlice]]
    manifest: CorpusManifest
    gold_tags: dict[str, list[str]]  # doc id -> per-word tag
    ledger: EventLedger
    word_tags: dict[str, str]  # word type -> tag

    def save(self, out_dir: Path) -> None:
        from .corpus import save_corpus

        out_dir = Path(out_dir)
        save_corpus(self.slices_by_role, self.manifest, out_dir)
        self.ledger.save(out_dir / "event_ledger.jsonl")
        with (out_dir / "gold_tags.jsonl").open("w") as fh:
            for doc_id in sorted(self.gold_tags):
                fh.write(
                    json.dumps({"doc_id": doc_id, "tags": self.gold_tags[doc_id]}) + "\n"
                )

    @classmethod
    def load(cls, out_dir: Path) -> "SyntheticCorpus":
        from .corpus import load_corpus

        out_dir = Path(out_dir)
        slices_by_role, manifest = load_corpus(out_dir)
        ledger = EventLedger.load(out_dir / "event_ledger.jsonl")
        gold_tags = {}
        with (out_dir / "gold_tags.jsonl").open() as fh:
            for line in fh:
                rec = json.loads(line)
                gold_tags[rec["doc_id"]] = rec["tags"]
        return cls(slices_by_role, manifest, gold_tags, ledger, word_tags={})


def _background_vocabulary(spec: GeneratorSpec) -> tuple[list[str], np.ndarray, dict[str, str]]:
    """Background word types, their Zipf probabilities and their tags.

    Tags are assigned rank by rank to the stratum with the largest
    remaining probability-mass deficit, so the emitted tag distribution
    tracks BACKGROUND_TAG_SHARES.
    """
    n = spec.background_vocab_size
    words = [f"w{i:05d}" for i in range(n)]
    ranks = np.arange(1, n + 1, dtype=np.float64)
    probs = ranks ** (-spec.zipf_exponent)
    probs /= probs.sum()
    deficits = dict(BACKGROUND_TAG_SHARES)
    tags = {}
    for i, word in enumerate(words):
        tag = max(deficits, key=lambda t: (deficits[t], t))
        tags[word] = tag
        deficits[tag] -= probs[i]
    return words, probs, tags


def _drifting_inventories(
    spec: GeneratorSpec, cls: str, rng: np.random.Generator
) -> list[list[str]]:
    """Per-period active drifting-cue inventories for one class.

    Each period, every slot independently rotates to a fresh token with
    probability 1 - 0.5**(1/half_life), so inventory overlap at distance d
    is 0.5**(d/half_life) in expectation.
    """
    cue = spec.cue_config
    rotate_p = 1.0 - 0.5 ** (1.0 / cue.drift_half_life)
    next_fresh = cue.n_drifting_per_class
    active = [f"cue_{cls}_d{i:03d}" for i in range(cue.n_drifting_per_class)]
    inventories = [list(active)]
    for _ in range(1, spec.n_periods):
        for slot in range(len(active)):
            if rng.random() < rotate_p:
                active[slot] = f"cue_{cls}_d{next_fresh:03d}"
                next_fresh += 1
        inventories.append(list(active))
    return inventories


def generate_corpus(spec: GeneratorSpec) -> SyntheticCorpus:
    """Materialize the corpus described by `spec`, deterministically.

    Per period, class and split role exactly the requested number of
    documents is emitted. Background words are Zipfian; class cues are
    injected at the configured per-token rate from the class's current cue
    inventory; event occurrences are Poisson-thinned per document at the
    burst-profile rate and inserted at random positions.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    words, probs, word_tags = _background_vocabulary(spec)
    cdf = np.cumsum(probs)
    cue = spec.cue_config

    stable_cues = {
        cls: [f"cue_{cls}_s{i:03d}" for i in range(cue.n_stable_per_class)]
        for cls in spec.classes
    }
    drifting = {cls: _drifting_inventories(spec, cls, rng) for cls in spec.classes}
    for cls in spec.classes:
        for w in stable_cues[cls]:
            word_tags[w] = "NOUN"
        for inventory in drifting[cls]:
            for w in inventory:
                word_tags[w] = "NOUN"
    for ev in spec.events:
        if ev.token in word_tags and word_tags[ev.token] != "PROPN":
            raise ConfigurationError(f"event token {ev.token!r} collides with vocabulary")
        word_tags[ev.token] = "PROPN"

    ledger = EventLedger()
    gold_tags: dict[str, list[str]] = {}
    slices_by_role: dict[str, list[TimeSlice]] = {
        role: [] for role in spec.docs_per_period_per_class
    }
    lo, hi = spec.doc_length

    for p in range(spec.n_periods):
        period_id = period_id_for_index(p)
        base_ts = _period_start_ts(p)
        per_period_docs: dict[str, list[Document]] = {
            role: [] for role in spec.docs_per_period_per_class
        }
        serial = 0
        for cls in spec.classes:
            cue_pool = stable_cues[cls] + drifting[cls][p]
            active_events = [
                (ev, burst_profile(ev, p, spec.n_periods))
                for ev in spec.events
                if ev.class_scope in (SHARED, cls) and p >= ev.onset_period
            ]
            for role, n_docs in spec.docs_per_period_per_class.items():
                for d in range(n_docs):
                    length = int(rng.integers(lo, hi + 1))
                    is_cue = rng.random(length) < cue.cue_rate
                    n_cues = int(is_cue.sum())
                    bg_idx = np.searchsorted(cdf, rng.random(length - n_cues))
                    cue_idx = rng.integers(0, len(cue_pool), size=n_cues)
                    tokens: list[str] = []
                    bg_i = cue_i = 0
                    for flag in is_cue:
                        if flag:
                            tokens.append(cue_pool[cue_idx[cue_i]])
                            cue_i += 1
                        else:
                            tokens.append(words[bg_idx[bg_i]])
                            bg_i += 1
                    inject = active_events if role not in spec.event_free_roles else ()
                    for ev, rate in inject:
                        n_occ = int(rng.poisson(rate / 1000.0))
                        if n_occ == 0:
                            continue
                        for pos in rng.integers(0, len(tokens) + 1, size=n_occ):
                            tokens.insert(int(pos), ev.token)
                        ledger.record(ev.token, period_id, cls, n_occ)
                    doc_id = f"{spec.seed}-{period_id}-{role}-{cls}-{serial:06d}"
                    serial += 1
                    doc = Document(
                        id=doc_id,
                        text=" ".join(tokens),
                        timestamp=base_ts + serial,
                        source_label=cls,
                        split_role=role,
                    )
                    per_period_docs[role].append(doc)
                    gold_tags[doc_id] = [word_tags[t] for t in tokens]
        for role, docs in per_period_docs.items():
            slices_by_role[role].append(TimeSlice(period_id, docs))

    manifest = build_manifest(
        corpus_id=f"synth-seed{spec.seed}",
        slices_by_role=slices_by_role,
        preprocessing_log=[],
        seed=spec.seed,
        provenance={"source": "synthetic generator", "language": "synthetic"},
        balanced=True,
    )
    return SyntheticCorpus(slices_by_role, manifest, gold_tags, ledger, word_tags)


def make_discriminative_variant(spec: GeneratorSpec) -> GeneratorSpec:
    """Copy of `spec` with every shared event reassigned to a single class,
    round-robin over the class list; seed and all other fields unchanged."""
    variant = copy.deepcopy(spec)
    i = 0
    for ev in variant.events:
        if ev.class_scope == SHARED:
            ev.class_scope = variant.classes[i % len(variant.classes)]
            i += 1
    return variant


def default_event_specs(
    n_periods: int,
    events_per_period: int = 2,
    peak_rate: float = 120.0,
    decay_factor: float = 0.55,
) -> list[EventSpec]:
    """Bursty shared events with onsets spread over all periods.

    At the default peak rate an event appears in roughly 12% of onset-period
    documents and decays to under half that within two periods.
    """
    events = []
    for p in range(n_periods):
        for j in range(events_per_period):
            events.append(
                EventSpec(
                    token=f"ev{p:02d}x{j}",
                    onset_period=p,
                    peak_rate=peak_rate,
                    decay_factor=decay_factor,
                    class_scope=SHARED,
                )
            )
    return events
