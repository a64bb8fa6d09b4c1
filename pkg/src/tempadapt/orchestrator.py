"""Config-driven execution of the full experiment grid.

A plan names a corpus (synthetic spec or materialized directory), a
strategy grid over adaptation (NAda/DAda/TAda) and fine-tuning (RFt/TFt),
sizes and seeds. The runner trains checkpoints on demand with
content-hash caching, builds cross-temporal matrices, runs scale sweeps
and the six-way strategy comparison, and emits CSV reports plus heatmaps.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .corpus import TimeSlice, sample_balanced
from .errors import ConfigurationError, DataError, IntegrityError
from .evaluation import (
    CrossTemporalMatrix,
    build_matrix,
    macro_f1,
    pseudo_perplexity,
)
from .model import (
    Checkpoint,
    ModelConfig,
    TrainConfig,
    adapt,
    finetune,
    init_from,
    init_model,
    per_token_losses,
    predict,
)
from .synthgen import GeneratorSpec, SyntheticCorpus, generate_corpus
from .tokenizer import Vocabulary, train_vocabulary

ADAPT_STRATEGIES = ("NAda", "DAda", "TAda")
FINETUNE_STRATEGIES = ("RFt", "TFt")
CACHE_ENV_VAR = "TEMPADAPT_CACHE"


@dataclass
class ExperimentPlan:
    corpus_spec: Optional[GeneratorSpec] = None
    corpus_dir: Optional[str] = None
    strategy_grid: list = field(
        default_factory=lambda: [
            (a, f) for a in ADAPT_STRATEGIES for f in FINETUNE_STRATEGIES
        ]
    )
    adaptation_size: int = 5000
    finetune_size: int = 1000
    # Generic MLM pre-training budget for the base checkpoint, drawn from the
    # corpus's "pretrain" slices. 0 keeps the base randomly initialized.
    # Pre-training typically runs much longer than adaptation; pretrain_epochs
    # of None falls back to the train config's adaptation_epochs.
    pretrain_size: int = 0
    pretrain_epochs: Optional[int] = None
    adaptation_sizes: list = field(default_factory=lambda: [0, 1000, 5000])
    finetune_sizes: list = field(default_factory=lambda: [200, 1000])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vocab_size: int = 2000
    masking_seed: int = 12345
    out_dir: str = "runs/default"

    def validate(self) -> None:
        for a, f in self.strategy_grid:
            if a not in ADAPT_STRATEGIES or f not in FINETUNE_STRATEGIES:
                raise ConfigurationError(f"unknown strategy combination ({a}, {f})")
        if self.corpus_spec is None and self.corpus_dir is None:
            raise ConfigurationError("plan needs a corpus spec or a corpus directory")
        self.model.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy_grid"] = [list(x) for x in self.strategy_grid]
        d["train"]["mask_policy"] = list(self.train.mask_policy)
        if self.corpus_spec is not None:
            d["corpus_spec"] = self.corpus_spec.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        if data.get("corpus_spec"):
            data["corpus_spec"] = GeneratorSpec.from_dict(data["corpus_spec"])
        if "model" in data and isinstance(data["model"], dict):
            data["model"] = ModelConfig(**data["model"])
        if "train" in data and isinstance(data["train"], dict):
            train = dict(data["train"])
            if "mask_policy" in train:
                train["mask_policy"] = tuple(train["mask_policy"])
            data["train"] = TrainConfig(**train)
        if "strategy_grid" in data:
            data["strategy_grid"] = [tuple(x) for x in data["strategy_grid"]]
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: Path) -> "ExperimentPlan":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def to_yaml(self, path: Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    def plan_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class RunRecord:
    plan_hash: str
    checkpoint_hashes: dict
    metrics: dict
    wall_clock_seconds: float
    seeds: list

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        )


def _slice_hash(docs: Sequence) -> str:
    digest = hashlib.sha256()
    for doc in docs:
        digest.update(doc.id.encode())
        digest.update(doc.text.encode())
    return digest.hexdigest()


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def even_quotas(total: int, n_bins: int) -> list[int]:
    """Equal per-bin quotas with the remainder assigned to earliest bins."""
    base, rem = divmod(total, n_bins)
    return [base + (1 if i < rem else 0) for i in range(n_bins)]


class ExperimentRunner:
    """Executes one plan: corpus, vocabulary, cached checkpoints, metrics."""

    def __init__(self, plan: ExperimentPlan, cache_dir: Optional[Path] = None):
        plan.validate()
        self.plan = plan
        self.out_dir = Path(plan.out_dir)
        if cache_dir is None:
            cache_dir = os.environ.get(CACHE_ENV_VAR) or self.out_dir / "cache"
        self.cache_dir = Path(cache_dir)
        self.training_runs = 0  # cache misses that actually trained
        self._eval_memo: dict = {}
        self._setup_corpus()
        self._setup_vocab()

    # -- corpus / vocabulary -------------------------------------------------

    def _setup_corpus(self) -> None:
        plan = self.plan
        if plan.corpus_dir is not None:
            corpus_dir = Path(plan.corpus_dir)
            if not (corpus_dir / "manifest.json").exists():
                raise ConfigurationError(f"no corpus at {corpus_dir}")
            self.corpus = SyntheticCorpus.load(corpus_dir)
        else:
            self.corpus = generate_corpus(plan.corpus_spec)
        roles = self.corpus.slices_by_role
        for role in ("adaptation", "finetune", "test"):
            if role not in roles or not roles[role]:
                raise ConfigurationError(f"corpus has no {role!r} slices")
        self.periods = [sl.period_id for sl in roles["test"]]
        self.pretrain_slices = {sl.period_id: sl for sl in roles.get("pretrain", [])}
        self.adaptation_slices = {sl.period_id: sl for sl in roles["adaptation"]}
        self.finetune_slices = {sl.period_id: sl for sl in roles["finetune"]}
        self.test_slices = {sl.period_id: sl for sl in roles["test"]}
        labels: set = set()
        for sl in roles["finetune"]:
            labels.update(sl.labels())
        self.label_index = {lab: i for i, lab in enumerate(sorted(labels))}
        self.n_classes = len(self.label_index)
        if self.plan.model.n_classes != self.n_classes:
            self.plan.model.n_classes = self.n_classes

    def _setup_vocab(self) -> None:
        vocab_path = self.out_dir / "vocab.txt"
        texts = [
            doc.text
            for pid in self.periods
            for doc in self.adaptation_slices[pid].documents
        ]
        self.vocab = train_vocabulary(texts, self.plan.vocab_size)
        vocab_path.parent.mkdir(parents=True, exist_ok=True)
        self.vocab.save(vocab_path)
        self.plan.model.vocab_size = self.vocab.size

    # -- data selection ------------------------------------------------------

    def adaptation_data(self, strategy: str, period: Optional[str], seed: int,
                        size: Optional[int] = None) -> list[TimeSlice]:
        size = self.plan.adaptation_size if size is None else size
        if strategy == "NAda" or size == 0:
            return []
        if strategy == "TAda":
            if period is None:
                raise ConfigurationError("TAda requires a period")
            sl = self.adaptation_slices[period]
            n = min(size, len(sl))
            return [sample_balanced(sl, n, by_label=False, seed=_derive_seed("tada", seed, period))]
        if strategy == "DAda":
            quotas = even_quotas(size, len(self.periods))
            out = []
            for pid, quota in zip(self.periods, quotas):
                if quota == 0:
                    continue
                sl = self.adaptation_slices[pid]
                out.append(
                    sample_balanced(sl, min(quota, len(sl)), by_label=False,
                                    seed=_derive_seed("dada", seed, pid))
                )
            return out
        raise ConfigurationError(f"unknown adaptation strategy {strategy!r}")

    def finetune_data(self, strategy: str, period: Optional[str], seed: int,
                      size: Optional[int] = None) -> list:
        size = self.plan.finetune_size if size is None else size
        if strategy == "TFt":
            if period is None:
                raise ConfigurationError("TFt requires a period")
            sl = self.finetune_slices[period]
            n = min(size, len(sl))
            n -= n % self.n_classes
            sampled = sample_balanced(sl, n, by_label=True,
                                      seed=_derive_seed("tft", seed, period))
            return sampled.documents
        if strategy == "RFt":
            quotas = even_quotas(size, len(self.periods))
            docs = []
            for pid, quota in zip(self.periods, quotas):
                if quota == 0:
                    continue
                sl = self.finetune_slices[pid]
                by_label = quota % self.n_classes == 0
                sampled = sample_balanced(sl, min(quota, len(sl)), by_label=by_label,
                                          seed=_derive_seed("rft", seed, pid))
                docs.extend(sampled.documents)
            return docs
        raise ConfigurationError(f"unknown fine-tuning strategy {strategy!r}")

    # -- cached training -----------------------------------------------------

    def pretrain_data(self, seed: int) -> list[TimeSlice]:
        """Period-balanced sample of the corpus's pretrain split."""
        if not self.pretrain_slices:
            raise ConfigurationError("plan requests pre-training but the corpus has no 'pretrain' slices")
        quotas = even_quotas(self.plan.pretrain_size, len(self.periods))
        out = []
        for pid, quota in zip(self.periods, quotas):
            if quota == 0:
                continue
            sl = self.pretrain_slices[pid]
            out.append(
                sample_balanced(sl, min(quota, len(sl)), by_label=False,
                                seed=_derive_seed("pretrain", seed, pid))
            )
        return out

    def base_checkpoint(self, seed: int) -> Checkpoint:
        """The shared starting point for every strategy: randomly initialized,
        or generically MLM pre-trained when the plan carries a pretrain budget."""
        init = init_model(self.plan.model, seed, provenance={"strategy": "NAda"})
        if self.plan.pretrain_size <= 0:
            return init
        slices = self.pretrain_data(seed)
        data_hash = _slice_hash([d for sl in slices for d in sl.documents])
        train = self._train_config(seed)
        if self.plan.pretrain_epochs is not None:
            train.adaptation_epochs = self.plan.pretrain_epochs
        key = self._cache_key("pretrain", init.content_hash, data_hash, train, seed)
        inputs = {"kind": "pretrain", "base": init.content_hash, "data": data_hash, "seed": seed}
        return self._cached(
            key, inputs,
            lambda: adapt(init, slices, self.vocab, train, strategy="NAda"),
        )

    def _cache_key(self, kind: str, base_hash: str, data_hash: str,
                   train: TrainConfig, seed: int) -> str:
        blob = json.dumps(
            {
                "kind": kind,
                "base": base_hash,
                "data": data_hash,
                "train": {**asdict(train), "mask_policy": list(train.mask_policy)},
                "seed": seed,
            },
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()

    def _cached(self, key: str, inputs: dict, train_fn) -> Checkpoint:
        ckpt_dir = self.cache_dir / key
        if (ckpt_dir / "hash.txt").exists():
            ckpt = Checkpoint.load(ckpt_dir)
            stored = ckpt.provenance.get("cache_inputs")
            if stored is not None and stored != inputs:
                raise IntegrityError(
                    f"cache entry {key} has conflicting provenance: {stored} != {inputs}"
                )
            return ckpt
        ckpt = train_fn()
        self.training_runs += 1
        ckpt.provenance["cache_inputs"] = inputs
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=self.cache_dir, prefix=f".{key[:12]}-"))
        ckpt.save(tmp)
        try:
            tmp.rename(ckpt_dir)
        except OSError:
            # concurrent writer got there first; its content is equivalent
            import shutil

            shutil.rmtree(tmp, ignore_errors=True)
        return ckpt

    def adapted_checkpoint(self, strategy: str, period: Optional[str], seed: int,
                           size: Optional[int] = None) -> Checkpoint:
        base = self.base_checkpoint(seed)
        if strategy == "NAda":
            return base
        slices = self.adaptation_data(strategy, period, seed, size)
        data_hash = _slice_hash([d for sl in slices for d in sl.documents])
        train = self._train_config(seed)
        key = self._cache_key("adapt", base.content_hash, data_hash, train, seed)
        inputs = {"kind": "adapt", "base": base.content_hash, "data": data_hash, "seed": seed}
        return self._cached(
            key, inputs,
            lambda: adapt(base, slices, self.vocab, train, strategy=strategy),
        )

    def finetuned_checkpoint(self, adapt_strategy: str, adapt_period: Optional[str],
                             ft_strategy: str, ft_period: Optional[str], seed: int,
                             adaptation_size: Optional[int] = None,
                             finetune_size: Optional[int] = None) -> Checkpoint:
        base = self.adapted_checkpoint(adapt_strategy, adapt_period, seed, adaptation_size)
        docs = self.finetune_data(ft_strategy, ft_period, seed, finetune_size)
        data_hash = _slice_hash(docs)
        train = self._train_config(seed)
        key = self._cache_key("finetune", base.content_hash, data_hash, train, seed)
        inputs = {"kind": "finetune", "base": base.content_hash, "data": data_hash, "seed": seed}
        return self._cached(
            key, inputs,
            lambda: finetune(base, docs, self.vocab, train, strategy=ft_strategy,
                             label_index=self.label_index),
        )

    def _train_config(self, seed: int) -> TrainConfig:
        train = TrainConfig(**asdict(self.plan.train))
        train.seed = seed
        return train

    # -- evaluation ----------------------------------------------------------

    def evaluate_ppl(self, ckpt: Checkpoint, test_slice: TimeSlice) -> float:
        memo_key = ("ppl", ckpt.content_hash, test_slice.period_id, len(test_slice))
        if memo_key in self._eval_memo:
            return self._eval_memo[memo_key]
        model = init_from(ckpt)
        records = per_token_losses(
            model, test_slice, self.vocab, masking_seed=self.plan.masking_seed,
            mask_rate=self.plan.train.mask_rate, mask_policy=self.plan.train.mask_policy,
        )
        value = pseudo_perplexity([r.loss for r in records])
        self._eval_memo[memo_key] = value
        return value

    def evaluate_f1(self, ckpt: Checkpoint, test_slice: TimeSlice) -> float:
        memo_key = ("f1", ckpt.content_hash, test_slice.period_id, len(test_slice))
        if memo_key in self._eval_memo:
            return self._eval_memo[memo_key]
        model = init_from(ckpt)
        preds, _ = predict(model, test_slice.documents, self.vocab)
        golds = [self.label_index[d.source_label] for d in test_slice.documents]
        value = macro_f1(preds, golds, self.n_classes)
        self._eval_memo[memo_key] = value
        return value

    # -- matrices ------------------------------------------------------------

    def mlm_matrix(self, seed: int) -> CrossTemporalMatrix:
        """TAda-per-period PP matrix against the DAda control."""
        checkpoints = {
            pid: self.adapted_checkpoint("TAda", pid, seed) for pid in self.periods
        }
        control = self.adapted_checkpoint("DAda", None, seed)
        return build_matrix(
            checkpoints, self.test_slices, self.evaluate_ppl, control,
            metric="pseudo_perplexity",
        )

    def f1_matrix(self, seed: int, adapt_strategy: str = "NAda") -> CrossTemporalMatrix:
        """TFt-per-period macro-F1 matrix against the RFt control."""
        checkpoints = {
            pid: self.finetuned_checkpoint(adapt_strategy, pid if adapt_strategy == "TAda" else None,
                                           "TFt", pid, seed)
            for pid in self.periods
        }
        control = self.finetuned_checkpoint(
            adapt_strategy, None, "RFt", None, seed
        )
        return build_matrix(
            checkpoints, self.test_slices, self.evaluate_f1, control, metric="macro_f1"
        )

    # -- grids ---------------------------------------------------------------

    def pooled_test_docs(self, per_period: Optional[int] = None) -> TimeSlice:
        """Evenly-pooled cross-period test set."""
        docs = []
        for pid in self.periods:
            sl = self.test_slices[pid]
            take = len(sl) if per_period is None else min(per_period, len(sl))
            docs.extend(sl.documents[:take])
        return TimeSlice("pooled", docs)

    def adaptation_scale_ppl(self, sizes: Sequence[int], seed: int) -> dict[int, float]:
        """PP on the pooled test set per adaptation size (0 = NAda)."""
        pooled = self.pooled_test_docs()
        out = {}
        for size in sizes:
            strategy = "NAda" if size == 0 else "DAda"
            ckpt = self.adapted_checkpoint(strategy, None, seed, size)
            out[size] = self.evaluate_ppl(ckpt, pooled)
        return out

    def scale_sweep(self, adaptation_sizes: Sequence[int],
                    finetune_sizes: Sequence[int], seed: int) -> np.ndarray:
        """Macro F1 grid over (adaptation size, fine-tune size), NAda/DAda
        with RFt, on the evenly-pooled test set."""
        if list(adaptation_sizes) != sorted(adaptation_sizes) or list(
            finetune_sizes
        ) != sorted(finetune_sizes):
            raise ConfigurationError("sweep sizes must be ascending")
        for size in list(adaptation_sizes) + list(finetune_sizes):
            if size > sum(len(sl) for sl in self.adaptation_slices.values()):
                raise DataError(f"sweep size {size} exceeds available data")
        pooled = self.pooled_test_docs()
        grid = np.empty((len(adaptation_sizes), len(finetune_sizes)))
        for i, a_size in enumerate(adaptation_sizes):
            a_strategy = "NAda" if a_size == 0 else "DAda"
            for j, f_size in enumerate(finetune_sizes):
                ckpt = self.finetuned_checkpoint(
                    a_strategy, None, "RFt", None, seed,
                    adaptation_size=a_size, finetune_size=f_size,
                )
                grid[i, j] = self.evaluate_f1(ckpt, pooled)
        return grid

    def strategy_compare(self, seed: int,
                         finetune_size: Optional[int] = None) -> dict[str, float]:
        """Mean macro F1 over all period test sets for the six strategy
        combinations; temporal strategies use the run whose period matches
        the test period."""
        results = {}
        for a_strat, f_strat in self.plan.strategy_grid:
            scores = []
            for pid in self.periods:
                ckpt = self.finetuned_checkpoint(
                    a_strat, pid if a_strat == "TAda" else None,
                    f_strat, pid if f_strat == "TFt" else None,
                    seed, finetune_size=finetune_size,
                )
                scores.append(self.evaluate_f1(ckpt, self.test_slices[pid]))
            results[f"{a_strat}+{f_strat}"] = float(np.mean(scores))
        return results

    # -- full plan -----------------------------------------------------------

    def run(self) -> RunRecord:
        """Train and evaluate everything the plan requests and write all
        artifacts under the plan's output directory."""
        start = time.monotonic()
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        self.plan.to_yaml(out / "plan.yaml")
        self.corpus.save(out / "corpus")
        metrics: dict = {}
        checkpoint_hashes: dict = {}
        per_seed_mlm = []
        per_seed_f1 = []
        for seed in self.plan.seeds:
            mlm = self.mlm_matrix(seed)
            mlm.save(out / f"mlm_matrix_seed{seed}")
            report(mlm, out / f"mlm_matrix_seed{seed}", percent=True)
            per_seed_mlm.append(mlm)
            f1m = self.f1_matrix(seed)
            f1m.save(out / f"f1_matrix_seed{seed}")
            report(f1m, out / f"f1_matrix_seed{seed}", percent=True)
            per_seed_f1.append(f1m)
            metrics[f"strategy_compare_seed{seed}"] = self.strategy_compare(seed)
            for pid in self.periods:
                ckpt = self.adapted_checkpoint("TAda", pid, seed)
                checkpoint_hashes[f"TAda:{pid}:seed{seed}"] = ckpt.content_hash
            checkpoint_hashes[f"DAda:seed{seed}"] = self.adapted_checkpoint(
                "DAda", None, seed
            ).content_hash
        metrics["strategy_compare_median"] = median_over_seeds(
            [metrics[f"strategy_compare_seed{s}"] for s in self.plan.seeds]
        )
        with (out / "strategy_compare.csv").open("w") as fh:
            fh.write("configuration,macro_f1_median\n")
            for name, value in sorted(metrics["strategy_compare_median"].items()):
                fh.write(f"{name},{value!r}\n")
        record = RunRecord(
            plan_hash=self.plan.plan_hash(),
            checkpoint_hashes=checkpoint_hashes,
            metrics=metrics,
            wall_clock_seconds=time.monotonic() - start,
            seeds=list(self.plan.seeds),
        )
        record.save(out / "run_record.json")
        return record


def median_over_seeds(results: Sequence[dict]) -> dict:
    keys = results[0].keys()
    return {k: float(np.median([r[k] for r in results])) for k in keys}


def median_matrix(matrices: Sequence[CrossTemporalMatrix]) -> CrossTemporalMatrix:
    """Cell-wise median of per-seed matrices; controls are medianed too."""
    first = matrices[0]
    values = np.median(np.stack([m.values for m in matrices]), axis=0)
    control = np.median(np.stack([m.control for m in matrices]), axis=0)
    return CrossTemporalMatrix(
        list(first.row_periods), list(first.col_periods), values, control,
        metric=first.metric,
    )


def report(matrix: CrossTemporalMatrix, out_dir: Path, percent: bool = True) -> Path:
    """CSV (written by matrix.save) plus a heatmap image with period labels
    on both axes; percent-difference scales are signed and centered at 0."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix.save(out_dir)
    data = matrix.percent_differences if percent else matrix.values
    if data.size == 0:
        raise DataError("empty matrix")
    fig, ax = plt.subplots(figsize=(
        max(4, 0.5 * len(matrix.col_periods) + 2),
        max(3, 0.5 * len(matrix.row_periods) + 1.5),
    ))
    if percent:
        limit = max(float(np.max(np.abs(data))), 1e-12)
        im = ax.imshow(data, cmap="RdBu_r", vmin=-limit, vmax=limit)
    else:
        im = ax.imshow(data, cmap="viridis")
    ax.set_xticks(range(len(matrix.col_periods)), matrix.col_periods, rotation=90)
    ax.set_yticks(range(len(matrix.row_periods)), matrix.row_periods)
    ax.set_xlabel("test period")
    ax.set_ylabel("train period")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = out_dir / ("heatmap_percent.png" if percent else "heatmap_raw.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
