from collections import Counter

import numpy as np
import pytest
from scipy import stats

from tempadapt.errors import ConfigurationError, DataError
from tempadapt.synthgen import (
    BACKGROUND_TAG_SHARES,
    EventSpec,
    GeneratorSpec,
    burst_profile,
    default_event_specs,
    generate_corpus,
    make_discriminative_variant,
    period_id_for_index,
)


def small_spec(seed=0, events=None, **kwargs):
    defaults = dict(
        n_periods=3,
        classes=["alpha", "bravo"],
        docs_per_period_per_class={"adaptation": 50, "finetune": 30, "test": 20},
        background_vocab_size=300,
        seed=seed,
    )
    defaults.update(kwargs)
    spec = GeneratorSpec(**defaults)
    spec.events = events if events is not None else default_event_specs(spec.n_periods, 1)
    return spec


class TestBurstProfile:
    def event(self, peak=100.0, decay=0.6, onset=1):
        return EventSpec("ev", onset_period=onset, peak_rate=peak, decay_factor=decay)

    def test_zero_before_onset(self):
        assert burst_profile(self.event(), 0) == 0.0

    def test_peak_at_onset(self):
        assert burst_profile(self.event(peak=100), 1) == 100.0

    def test_geometric_decay(self):
        assert burst_profile(self.event(peak=100, decay=0.6, onset=0), 2) == pytest.approx(36.0)

    def test_out_of_range(self):
        with pytest.raises(DataError):
            burst_profile(self.event(), -1)
        with pytest.raises(DataError):
            burst_profile(self.event(), 5, n_periods=5)


class TestGenerateCorpus:
    def test_document_counts(self):
        corpus = generate_corpus(small_spec())
        # 3 periods x 2 classes x 50 adaptation docs
        assert sum(len(sl) for sl in corpus.slices_by_role["adaptation"]) == 300
        assert corpus.manifest.total("finetune") == 180
        for sl in corpus.slices_by_role["test"]:
            assert len(sl) == 40

    def test_manifest_counts_exact(self):
        corpus = generate_corpus(small_spec())
        for role, slices in corpus.slices_by_role.items():
            for sl in slices:
                per_label = Counter(d.source_label for d in sl.documents)
                assert corpus.manifest.counts[role][sl.period_id] == dict(per_label)

    def test_deterministic(self):
        a = generate_corpus(small_spec(seed=5))
        b = generate_corpus(small_spec(seed=5))
        texts_a = [d.text for sl in a.slices_by_role["test"] for d in sl.documents]
        texts_b = [d.text for sl in b.slices_by_role["test"] for d in sl.documents]
        assert texts_a == texts_b
        assert a.ledger.counts == b.ledger.counts

    def test_no_event_before_onset(self):
        spec = small_spec(events=[EventSpec("lateev", 2, 200.0, 0.5)])
        corpus = generate_corpus(spec)
        for pid_idx in (0, 1):
            pid = period_id_for_index(pid_idx)
            assert corpus.ledger.count("lateev", pid) == 0
            for role, slices in corpus.slices_by_role.items():
                sl = slices[pid_idx]
                assert all("lateev" not in d.text.split() for d in sl.documents)

    def test_ledger_recountable(self):
        corpus = generate_corpus(small_spec())
        recount: Counter = Counter()
        for slices in corpus.slices_by_role.values():
            for sl in slices:
                for d in sl.documents:
                    for w in d.text.split():
                        if w in corpus.ledger.tokens():
                            recount[(w, sl.period_id)] += 1
        assert dict(recount) == corpus.ledger.counts

    def test_realized_count_in_poisson_interval(self):
        spec = small_spec(
            docs_per_period_per_class={"adaptation": 500},
            events=[EventSpec("bigev", 0, 100.0, 0.5)],
        )
        corpus = generate_corpus(spec)
        # 1,000 docs at onset, rate 100 per 1,000 -> mean 100
        realized = corpus.ledger.count("bigev", period_id_for_index(0))
        lo, hi = stats.poisson.interval(0.99, 100)
        assert lo <= realized <= hi

    def test_shared_event_spans_classes(self):
        spec = small_spec(events=[EventSpec("ev", 0, 300.0, 0.9)])
        corpus = generate_corpus(spec)
        key = ("ev", period_id_for_index(0))
        assert corpus.ledger.classes[key] == {"alpha", "bravo"}

    def test_gold_tags_cover_every_word(self):
        corpus = generate_corpus(small_spec())
        for slices in corpus.slices_by_role.values():
            for sl in slices:
                for d in sl.documents:
                    assert len(corpus.gold_tags[d.id]) == len(d.text.split())

    def test_tag_distribution_matches_strata(self):
        spec = small_spec(docs_per_period_per_class={"adaptation": 400}, events=[])
        spec.cue_config.cue_rate = 0.0
        corpus = generate_corpus(spec)
        counts: Counter = Counter()
        for sl in corpus.slices_by_role["adaptation"]:
            for d in sl.documents:
                counts.update(corpus.gold_tags[d.id])
        total = sum(counts.values())
        assert total > 10_000
        for tag, share in BACKGROUND_TAG_SHARES.items():
            assert counts[tag] / total == pytest.approx(share, abs=0.02)

    def test_event_free_roles(self):
        spec = small_spec(
            docs_per_period_per_class={"adaptation": 80, "pretrain": 80, "test": 20},
            events=[EventSpec("ev", 0, 500.0, 0.9)],
            event_free_roles=("pretrain",),
        )
        corpus = generate_corpus(spec)
        texts_by_role = {
            role: " ".join(d.text for sl in slices for d in sl.documents)
            for role, slices in corpus.slices_by_role.items()
        }
        assert "ev" not in texts_by_role["pretrain"].split()
        assert "ev" in texts_by_role["adaptation"].split()

    def test_event_free_roles_must_exist(self):
        spec = small_spec(event_free_roles=("pretrain",))
        with pytest.raises(ConfigurationError):
            generate_corpus(spec)

    def test_invalid_spec(self):
        with pytest.raises(ConfigurationError):
            generate_corpus(small_spec(n_periods=1))
        with pytest.raises(ConfigurationError):
            generate_corpus(small_spec(events=[EventSpec("x", 9, 10.0, 0.5)]))
        with pytest.raises(ConfigurationError):
            generate_corpus(small_spec(events=[EventSpec("x", 0, 10.0, 1.5)]))

    def test_save_load_roundtrip(self, tmp_path):
        corpus = generate_corpus(small_spec())
        corpus.save(tmp_path)
        from tempadapt.synthgen import SyntheticCorpus

        loaded = SyntheticCorpus.load(tmp_path)
        assert loaded.manifest.counts == corpus.manifest.counts
        assert loaded.ledger.counts == corpus.ledger.counts
        assert loaded.gold_tags == corpus.gold_tags
        texts = [d.text for sl in loaded.slices_by_role["test"] for d in sl.documents]
        orig = [d.text for sl in corpus.slices_by_role["test"] for d in sl.documents]
        assert texts == orig


class TestDiscriminativeVariant:
    def test_round_robin(self):
        events = [EventSpec(f"e{i}", 0, 10.0, 0.5) for i in range(4)]
        spec = small_spec(events=events)
        variant = make_discriminative_variant(spec)
        scopes = [ev.class_scope for ev in variant.events]
        assert scopes == ["alpha", "bravo", "alpha", "bravo"]
        # original untouched
        assert all(ev.class_scope == "shared" for ev in spec.events)

    def test_no_shared_events_noop(self):
        events = [EventSpec("e0", 0, 10.0, 0.5, class_scope="alpha")]
        spec = small_spec(events=events)
        variant = make_discriminative_variant(spec)
        assert variant.events[0].class_scope == "alpha"
        assert variant.seed == spec.seed

    def test_occurrences_confined_to_one_class(self):
        events = [EventSpec(f"e{i}", 0, 300.0, 0.9) for i in range(4)]
        spec = small_spec(events=events)
        variant = make_discriminative_variant(spec)
        corpus = generate_corpus(variant)
        scope = {ev.token: ev.class_scope for ev in variant.events}
        for (token, _), classes in corpus.ledger.classes.items():
            assert classes == {scope[token]}


class TestDeterminismAcrossSeeds:
    def test_different_seed_different_corpus(self):
        a = generate_corpus(small_spec(seed=1))
        b = generate_corpus(small_spec(seed=2))
        texts_a = [d.text for sl in a.slices_by_role["test"] for d in sl.documents]
        texts_b = [d.text for sl in b.slices_by_role["test"] for d in sl.documents]
        assert texts_a != texts_b
