"""Train a subword vocabulary and mask a document for the MLM objective.

The tokenizer is WordPiece-flavored: greedy pair-merge training, greedy
longest-match segmentation, fixed special-token ids, and `[URL]`/`[EMOJI]`
placeholders that never get split. Masking is driven by a per-document
seed so any two models can be evaluated on identical masked positions.
"""

from tempadapt.corpus import normalize_text
from tempadapt.tokenizer import (
    apply_mlm_masking,
    decode,
    doc_masking_seed,
    encode,
    train_vocabulary,
)

corpus = [
    "the match went to extra time",
    "extra time again in the big match",
    "the band played extra long tonight",
] * 30

vocab = train_vocabulary(corpus, 120)
print(f"vocabulary: {vocab.size} entries, first ten: {vocab.tokens[:10]}")

raw = "The MATCH went to https://example.com \U0001F600 extra time"
text = normalize_text(raw)
print("\nnormalized:", text)

seq = encode(text, vocab)
print("subwords:   ", [vocab.tokens[i] for i in seq.ids])
print("word index: ", seq.word_index)
print("round trip: ", decode(seq, vocab))

seed = doc_masking_seed(12345, "demo-doc")
masked = apply_mlm_masking(seq, vocab, rate=0.3, seed=seed)
print("\nmasked:     ", [vocab.tokens[i] for i in masked.masked.ids])
print("targets at: ", masked.target_positions)
