"""Desk-scale benchmark for time-specific continued pre-training and
fine-tuning of masked language models on monthly corpora."""

from .corpus import (
    CorpusManifest,
    Document,
    TimeSlice,
    deduplicate,
    extract_vocabulary,
    ingest,
    jaccard_similarity,
    normalize_text,
    partition_by_period,
    sample_balanced,
)
from .errors import ConfigurationError, DataError, IntegrityError, SamplingError
from .evaluation import (
    CrossTemporalMatrix,
    build_matrix,
    macro_f1,
    offdiagonal_pairs,
    pseudo_perplexity,
    relative_difference,
    wilcoxon_signed_rank,
)
from .model import Checkpoint, ModelConfig, TrainConfig, adapt, finetune, init_from, init_model
from .orchestrator import ExperimentPlan, ExperimentRunner
from .synthgen import EventSpec, GeneratorSpec, burst_profile, generate_corpus, make_discriminative_variant
from .tokenizer import Vocabulary, apply_mlm_masking, encode, decode, train_vocabulary

__version__ = "0.1.0"
