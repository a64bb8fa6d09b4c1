"""Generate a small synthetic temporal corpus and look inside it.

Documents are monthly, labelled, and contain three vocabulary strata:
a Zipfian background, bursty "event" tokens that appear at an onset month
and decay geometrically, and class cue tokens that drift over time. Every
word carries a gold part-of-speech tag and every event occurrence is
recorded in a ledger we can recount later.
"""

from collections import Counter

from tempadapt.synthgen import (
    CueConfig,
    GeneratorSpec,
    burst_profile,
    default_event_specs,
    generate_corpus,
)

spec = GeneratorSpec(
    n_periods=6,
    classes=["sports", "music", "politics"],
    docs_per_period_per_class={"adaptation": 50, "finetune": 20, "test": 10},
    background_vocab_size=400,
    events=default_event_specs(6, events_per_period=1, peak_rate=200.0),
    cue_config=CueConfig(cue_rate=0.08),
    seed=0,
)

corpus = generate_corpus(spec)

print("slices per role:")
for role, slices in corpus.slices_by_role.items():
    total = sum(len(sl) for sl in slices)
    print(f"  {role}: {len(slices)} monthly slices, {total} documents")

first = corpus.slices_by_role["test"][0].documents[0]
print(f"\nsample document ({first.id}, label={first.source_label}):")
print(" ", first.text)
print("  tags:", " ".join(corpus.gold_tags[first.id]))

# The burst profile is deterministic: peak at onset, geometric decay after.
event = spec.events[1]
print(f"\nexpected occurrences of {event.token!r} per 1,000 docs by month:")
print(" ", [round(burst_profile(event, p), 1) for p in range(6)])

# The ledger records where every event token actually landed.
print("\nledger counts for that event by month:")
counts = Counter()
for (token, period), n in corpus.ledger.counts.items():
    if token == event.token:
        counts[period] = n
print(" ", dict(sorted(counts.items())))
