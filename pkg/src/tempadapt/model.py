"""Small transformer encoder with an MLM head and a linear classification
head, plus the two training regimes: continued pre-training on masked
tokens ("adaptation") and supervised fine-tuning.

All training is CPU-friendly and deterministic given seeds; checkpoints
are pure values (training never mutates its input checkpoint).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Document, TimeSlice
from .errors import ConfigurationError, DataError, IntegrityError
from .tokenizer import (
    MaskingResult,
    TokenSequence,
    Vocabulary,
    apply_mlm_masking,
    doc_masking_seed,
    encode,
)

CHECKPOINT_FORMAT_VERSION = 1


def set_deterministic(enabled: bool = True) -> None:
    """Deterministic mode is the default for all acceptance runs."""
    torch.use_deterministic_algorithms(enabled)


set_deterministic(True)


@dataclass
class ModelConfig:
    layers: int = 2
    hidden_size: int = 64
    attention_heads: int = 2
    feedforward_size: int = 256
    dropout: float = 0.1
    vocab_size: int = 2000
    max_len: int = 128
    n_classes: int = 2

    def validate(self) -> None:
        if self.hidden_size % self.attention_heads != 0:
            raise ConfigurationError(
                f"hidden size {self.hidden_size} not divisible by {self.attention_heads} heads"
            )
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout {self.dropout} outside [0, 1)")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    # fine-tuning often wants a different step size than MLM training;
    # None falls back to learning_rate
    finetune_learning_rate: Optional[float] = None
    weight_decay: float = 0.01
    adaptation_epochs: int = 1
    adaptation_batch: int = 128
    finetune_epochs: int = 3
    finetune_batch: int = 32
    mask_rate: float = 0.15
    mask_policy: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigurationError("rates must be positive")
        if self.finetune_learning_rate is not None and self.finetune_learning_rate <= 0:
            raise ConfigurationError("rates must be positive")
        if min(self.adaptation_batch, self.finetune_batch) < 1:
            raise ConfigurationError("batch sizes must be positive")


class TransformerEncoderModel(nn.Module):
    """BERT-style encoder: token + position embeddings, post-LN attention
    blocks, an MLM projection over the vocabulary and a linear classifier
    over mean-pooled non-pad positions."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        h = config.hidden_size
        self.token_embedding = nn.Embedding(config.vocab_size, h)
        self.position_embedding = nn.Embedding(config.max_len, h)
        self.embed_norm = nn.LayerNorm(h)
        self.dropout = nn.Dropout(config.dropout)
        self.attn_layers = nn.ModuleList(
            nn.MultiheadAttention(h, config.attention_heads, dropout=config.dropout, batch_first=True)
            for _ in range(config.layers)
        )
        self.attn_norms = nn.ModuleList(nn.LayerNorm(h) for _ in range(config.layers))
        self.ff_in = nn.ModuleList(nn.Linear(h, config.feedforward_size) for _ in range(config.layers))
        self.ff_out = nn.ModuleList(nn.Linear(config.feedforward_size, h) for _ in range(config.layers))
        self.ff_norms = nn.ModuleList(nn.LayerNorm(h) for _ in range(config.layers))
        self.mlm_head = nn.Linear(h, config.vocab_size)
        self.cls_head = nn.Linear(h, config.n_classes)

    def hidden_states(self, input_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.token_embedding(input_ids) + self.position_embedding(positions)[None, :, :]
        x = self.dropout(self.embed_norm(x))
        for i in range(self.config.layers):
            attn_out, _ = self.attn_layers[i](
                x, x, x, key_padding_mask=pad_mask, need_weights=False
            )
            x = self.attn_norms[i](x + self.dropout(attn_out))
            ff = self.ff_out[i](F.gelu(self.ff_in[i](x)))
            x = self.ff_norms[i](x + self.dropout(ff))
        return x

    def mlm_logits(self, input_ids, pad_mask):
        return self.mlm_head(self.hidden_states(input_ids, pad_mask))

    def cls_logits(self, input_ids, pad_mask):
        # mean-pool over non-pad positions: MLM pre-training shapes token
        # representations, not any single position, so pooling lets the
        # classifier benefit from adaptation
        hidden = self.hidden_states(input_ids, pad_mask)
        keep = (~pad_mask).unsqueeze(-1).to(hidden.dtype)
        pooled = (hidden * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        return self.cls_head(pooled)


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict  # parameter name -> torch.Tensor
    provenance: dict = field(default_factory=dict)
    content_hash: str = ""

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = state_hash(self.state)

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        torch.save(self.state, out_dir / "weights.pt")
        (out_dir / "config.json").write_text(json.dumps(asdict(self.config), indent=2) + "\n")
        (out_dir / "provenance.json").write_text(
            json.dumps(
                {"format_version": CHECKPOINT_FORMAT_VERSION, **self.provenance},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        (out_dir / "hash.txt").write_text(self.content_hash + "\n")

    @classmethod
    def load(cls, out_dir: Path) -> "Checkpoint":
        out_dir = Path(out_dir)
        state = torch.load(out_dir / "weights.pt", weights_only=True)
        config = ModelConfig(**json.loads((out_dir / "config.json").read_text()))
        provenance = json.loads((out_dir / "provenance.json").read_text())
        provenance.pop("format_version", None)
        stored_hash = (out_dir / "hash.txt").read_text().strip()
        ckpt = cls(config=config, state=state, provenance=provenance)
        if ckpt.content_hash != stored_hash:
            raise IntegrityError(
                f"checkpoint at {out_dir}: stored hash {stored_hash} does not match weights"
            )
        return ckpt


def state_hash(state: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def init_model(config: ModelConfig, seed: int, provenance: Optional[dict] = None) -> Checkpoint:
    """Random checkpoint, deterministic given seed."""
    torch.manual_seed(seed)
    model = TransformerEncoderModel(config)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    prov = {"strategy": "init", "seed": seed}
    prov.update(provenance or {})
    return Checkpoint(config=config, state=state, provenance=prov)


def init_from(checkpoint: Checkpoint) -> TransformerEncoderModel:
    """Materialize a model instance from a checkpoint (exact load)."""
    model = TransformerEncoderModel(checkpoint.config)
    model.load_state_dict({k: v.clone() for k, v in checkpoint.state.items()})
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Batching


def collate_mlm(
    batch: Sequence[MaskingResult], pad_id: int, device: str = "cpu"
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad masked sequences; targets are -100 except at masked positions."""
    max_len = max(len(m.masked) for m in batch)
    input_ids = torch.full((len(batch), max_len), pad_id, dtype=torch.long, device=device)
    targets = torch.full((len(batch), max_len), -100, dtype=torch.long, device=device)
    pad_mask = torch.ones((len(batch), max_len), dtype=torch.bool, device=device)
    for i, m in enumerate(batch):
        n = len(m.masked)
        input_ids[i, :n] = torch.tensor(m.masked.ids, dtype=torch.long)
        pad_mask[i, :n] = False
        for pos, tid in zip(m.target_positions, m.target_ids):
            targets[i, pos] = tid
    return input_ids, pad_mask, targets


def collate_cls(
    batch: Sequence[TokenSequence], pad_id: int, device: str = "cpu"
) -> tuple[torch.Tensor, torch.Tensor]:
    max_len = max(len(s) for s in batch)
    input_ids = torch.full((len(batch), max_len), pad_id, dtype=torch.long, device=device)
    pad_mask = torch.ones((len(batch), max_len), dtype=torch.bool, device=device)
    for i, s in enumerate(batch):
        input_ids[i, : len(s)] = torch.tensor(s.ids, dtype=torch.long)
        pad_mask[i, : len(s)] = False
    return input_ids, pad_mask


# ---------------------------------------------------------------------------
# Losses


def mlm_loss(
    model: TransformerEncoderModel,
    input_ids: torch.Tensor,
    pad_mask: torch.Tensor,
    targets: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean cross-entropy over masked positions plus the per-position
    losses (-log softmax probability of the original token)."""
    if int((targets != -100).sum()) == 0:
        raise DataError("batch has no masked positions; mean loss undefined")
    logits = model.mlm_logits(input_ids, pad_mask)
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = targets.reshape(-1)
    keep = flat_targets != -100
    per_position = F.cross_entropy(flat_logits[keep], flat_targets[keep], reduction="none")
    return per_position.mean(), per_position


def cls_loss(
    model: TransformerEncoderModel,
    input_ids: torch.Tensor,
    pad_mask: torch.Tensor,
    labels: torch.Tensor,
) -> torch.Tensor:
    n_classes = model.config.n_classes
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label outside [0, {n_classes})")
    logits = model.cls_logits(input_ids, pad_mask)
    return F.cross_entropy(logits, labels)


@torch.no_grad()
def predict(
    model: TransformerEncoderModel,
    docs: Sequence[Document],
    vocab: Vocabulary,
    batch_size: int = 256,
) -> tuple[list[int], np.ndarray]:
    """Predicted label and softmax probability vector per document."""
    model.eval()
    seqs = [encode(d.text, vocab, model.config.max_len) for d in docs]
    probs = []
    for start in range(0, len(seqs), batch_size):
        batch = seqs[start : start + batch_size]
        input_ids, pad_mask = collate_cls(batch, vocab.pad_id)
        logits = model.cls_logits(input_ids, pad_mask)
        probs.append(F.softmax(logits.double(), dim=-1).numpy())
    prob_matrix = np.concatenate(probs) if probs else np.zeros((0, model.config.n_classes))
    labels = [int(i) for i in prob_matrix.argmax(axis=1)]
    return labels, prob_matrix


# ---------------------------------------------------------------------------
# Training regimes


def _label_index(docs: Sequence[Document]) -> dict[str, int]:
    labels = {d.source_label for d in docs}
    if None in labels:
        raise DataError("unlabelled document in a labelled training set")
    return {lab: i for i, lab in enumerate(sorted(labels))}


def adapt(
    checkpoint: Checkpoint,
    slices: Sequence[TimeSlice],
    vocab: Vocabulary,
    train_config: TrainConfig,
    strategy: Optional[str] = None,
) -> Checkpoint:
    """Continue pre-training on the MLM objective, one pass over the data.

    Pure with respect to the input checkpoint. Strategy provenance is
    DAda when the slices span more than one period, TAda for a single
    period, unless given explicitly.
    """
    train_config.validate()
    for sl in slices:
        if len(sl) == 0:
            raise DataError(f"empty adaptation slice {sl.period_id}")
    docs = [d for sl in slices for d in sl.documents]
    periods = sorted({sl.period_id for sl in slices})
    if strategy is None:
        strategy = "TAda" if len(periods) == 1 else "DAda"
    model = init_from(checkpoint)
    if docs:
        torch.manual_seed(train_config.seed)
        model.train()
        optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
        )
        rng = np.random.default_rng(train_config.seed)
        for _ in range(train_config.adaptation_epochs):
            order = rng.permutation(len(docs))
            for start in range(0, len(order), train_config.adaptation_batch):
                batch_docs = [docs[i] for i in order[start : start + train_config.adaptation_batch]]
                batch = []
                for doc in batch_docs:
                    seq = encode(doc.text, vocab, checkpoint.config.max_len)
                    masked = apply_mlm_masking(
                        seq,
                        vocab,
                        rate=train_config.mask_rate,
                        policy=train_config.mask_policy,
                        seed=doc_masking_seed(train_config.seed, doc.id),
                    )
                    if masked.target_positions:
                        batch.append(masked)
                if not batch:
                    continue
                input_ids, pad_mask, targets = collate_mlm(batch, vocab.pad_id)
                loss, _ = mlm_loss(model, input_ids, pad_mask, targets)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
    model.eval()
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    provenance = {
        "strategy": strategy,
        "adaptation_periods": periods,
        "adaptation_size": len(docs),
        "base_checkpoint": checkpoint.content_hash,
        "seed": train_config.seed,
        "finetune_strategy": None,
    }
    return Checkpoint(config=checkpoint.config, state=state, provenance=provenance)


def finetune(
    checkpoint: Checkpoint,
    docs: Sequence[Document],
    vocab: Vocabulary,
    train_config: TrainConfig,
    strategy: Optional[str] = None,
    label_index: Optional[dict] = None,
) -> Checkpoint:
    """Train the classification head (and encoder) for the configured
    number of epochs on labelled documents."""
    train_config.validate()
    if not docs:
        raise DataError("empty fine-tuning set")
    if label_index is None:
        label_index = _label_index(docs)
    periods = sorted({d.period() for d in docs})
    if strategy is None:
        strategy = "TFt" if len(periods) == 1 else "RFt"
    model = init_from(checkpoint)
    if train_config.finetune_epochs > 0:
        torch.manual_seed(train_config.seed)
        model.train()
        optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=(train_config.finetune_learning_rate or train_config.learning_rate),
            weight_decay=train_config.weight_decay,
        )
        rng = np.random.default_rng(train_config.seed)
        seqs = [encode(d.text, vocab, checkpoint.config.max_len) for d in docs]
        labels = [label_index[d.source_label] for d in docs]
        for _ in range(train_config.finetune_epochs):
            order = rng.permutation(len(docs))
            for start in range(0, len(order), train_config.finetune_batch):
                idx = order[start : start + train_config.finetune_batch]
                input_ids, pad_mask = collate_cls([seqs[i] for i in idx], vocab.pad_id)
                label_t = torch.tensor([labels[i] for i in idx], dtype=torch.long)
                loss = cls_loss(model, input_ids, pad_mask, label_t)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
    model.eval()
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    provenance = {
        "strategy": checkpoint.provenance.get("strategy"),
        "adaptation_periods": checkpoint.provenance.get("adaptation_periods"),
        "finetune_strategy": strategy,
        "finetune_periods": periods,
        "finetune_size": len(docs),
        "label_index": {str(k): v for k, v in label_index.items()},
        "base_checkpoint": checkpoint.content_hash,
        "seed": train_config.seed,
    }
    return Checkpoint(config=checkpoint.config, state=state, provenance=provenance)


# ---------------------------------------------------------------------------
# Per-token evaluation


@dataclass
class TokenLossRecord:
    doc_id: str
    position: int  # position within the token sequence
    word_index: int
    subword_id: int
    loss: float


@torch.no_grad()
def per_token_losses(
    model: TransformerEncoderModel,
    test_slice: TimeSlice,
    vocab: Vocabulary,
    masking_seed: int,
    mask_rate: float = 0.15,
    mask_policy: Sequence[float] = (0.8, 0.1, 0.1),
    batch_size: int = 256,
) -> list[TokenLossRecord]:
    """Loss of every masked position in the slice under `model`.

    Masking depends only on (masking_seed, doc id), so two models called
    with the same seed are evaluated on identical masked positions.
    """
    model.eval()
    maskings = []
    for doc in test_slice.documents:
        seq = encode(doc.text, vocab, model.config.max_len)
        masked = apply_mlm_masking(
            seq, vocab, rate=mask_rate, policy=mask_policy,
            seed=doc_masking_seed(masking_seed, doc.id),
        )
        if masked.target_positions:
            maskings.append((doc, masked))
    records: list[TokenLossRecord] = []
    for start in range(0, len(maskings), batch_size):
        chunk = maskings[start : start + batch_size]
        input_ids, pad_mask, targets = collate_mlm([m for _, m in chunk], vocab.pad_id)
        _, per_position = mlm_loss(model, input_ids, pad_mask, targets)
        losses = iter(per_position.double().numpy())
        for doc, masked in chunk:
            for pos, tid in zip(masked.target_positions, masked.target_ids):
                records.append(
                    TokenLossRecord(
                        doc_id=doc.id,
                        position=pos,
                        word_index=masked.masked.word_index[pos],
                        subword_id=tid,
                        loss=float(next(losses)),
                    )
                )
    return records


def mean_token_loss(records: Sequence[TokenLossRecord]) -> float:
    if not records:
        raise DataError("no token loss records")
    return float(np.mean([r.loss for r in records]))
