"""Acceptance gate for the temporal-adaptation benchmark.

Each test covers one numbered criterion and prints a PASS/FAIL line
(run with `pytest -s tests/test_acceptance.py` to see them live).
Criteria 1-3 are exact oracle checks; 4-10 are ordering/property checks
on the default 12-month synthetic experiment (median over 3 seeds);
11 checks byte-level reproducibility and cache behavior.
"""

import itertools
import math
import random
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from scipy import stats

from tempadapt.diagnostics import (
    contribution_by_pos,
    decile_contributions,
    distinctiveness_table,
    loss_deltas,
    top_fraction,
)
from tempadapt.corpus import jaccard_similarity
from tempadapt.evaluation import (
    macro_f1,
    offdiagonal_pairs,
    pseudo_perplexity,
    relative_difference,
    wilcoxon_signed_rank,
)
from tempadapt.model import (
    ModelConfig,
    TrainConfig,
    cls_loss,
    collate_cls,
    collate_mlm,
    init_from,
    init_model,
    mlm_loss,
    per_token_losses,
)
from tempadapt.orchestrator import ExperimentPlan, ExperimentRunner, median_matrix
from tempadapt.synthgen import (
    CueConfig,
    EventSpec,
    GeneratorSpec,
    make_discriminative_variant,
)
from tempadapt.tokenizer import apply_mlm_masking, doc_masking_seed, encode, train_vocabulary

SEEDS = [0, 1, 2]
N_PERIODS = 12


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# Shared experiment fixtures


def default_spec() -> GeneratorSpec:
    # Three event tiers shape the per-token delta distribution:
    #  - "flash" events burst at onset and vanish (large, concentrated deltas),
    #  - "mild" events decay slowly (moderate deltas at short lags),
    #  - "chronic" tokens run at a near-constant rate from month one, so both
    #    the control and the adapted model know them equally well.
    events = []
    for p in range(N_PERIODS):
        for j in range(2):
            events.append(EventSpec(token=f"ev{p:02d}f{j}", onset_period=p,
                                    peak_rate=400.0, decay_factor=0.3))
        for j in range(5):
            events.append(EventSpec(token=f"ev{p:02d}m{j}", onset_period=p,
                                    peak_rate=216.0, decay_factor=0.96))
    for j in range(12):
        events.append(EventSpec(token=f"ev00c{j}", onset_period=0,
                                peak_rate=500.0, decay_factor=0.998))
    return GeneratorSpec(
        n_periods=N_PERIODS,
        classes=[f"c{i}" for i in range(5)],
        docs_per_period_per_class={"pretrain": 200, "adaptation": 1000,
                                   "finetune": 200, "test": 100},
        background_vocab_size=60,
        events=events,
        cue_config=CueConfig(n_stable_per_class=12, n_drifting_per_class=2,
                             cue_rate=0.3, drift_half_life=3.0),
        doc_length=(8, 14),
        # the pretrain split stands in for generic pre-training text, so it
        # carries no time-specific event tokens
        event_free_roles=("pretrain",),
        seed=7,
    )


def default_plan(out_dir) -> ExperimentPlan:
    return ExperimentPlan(
        corpus_spec=default_spec(),
        adaptation_size=5000,
        finetune_size=1000,
        pretrain_size=5000,
        pretrain_epochs=14,
        seeds=list(SEEDS),
        model=ModelConfig(),
        train=TrainConfig(learning_rate=1e-3, adaptation_epochs=2,
                          finetune_learning_rate=3e-4, seed=0),
        vocab_size=2000,
        out_dir=str(out_dir),
    )


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    """The default plan, fully executed once; everything downstream reads
    through this runner's cache and evaluation memo."""
    root = tmp_path_factory.mktemp("acceptance")
    runner = ExperimentRunner(default_plan(root / "runA"), cache_dir=root / "cache")
    record = runner.run()
    return SimpleNamespace(root=root, runner=runner, record=record)


@pytest.fixture(scope="session")
def mlm_matrices(experiment):
    return [experiment.runner.mlm_matrix(seed) for seed in SEEDS]


@pytest.fixture(scope="session")
def f1_matrices(experiment):
    return [experiment.runner.f1_matrix(seed) for seed in SEEDS]


# ---------------------------------------------------------------------------
# 1. Metric exactness


class TestCriterion1Metrics:
    def test_metric_exactness(self):
        rng = random.Random(0)
        worst = 0.0
        for _ in range(25):
            losses = [rng.uniform(0.0, 8.0) for _ in range(rng.randint(1, 60))]
            oracle = math.exp(sum(losses) / len(losses))
            worst = max(worst, abs(pseudo_perplexity(losses) - oracle) / oracle)

        sklearn_f1 = pytest.importorskip("sklearn.metrics").f1_score
        for _ in range(25):
            n_classes = rng.randint(2, 6)
            n = rng.randint(5, 80)
            golds = [rng.randrange(n_classes) for _ in range(n)]
            preds = [rng.randrange(n_classes) for _ in range(n)]
            oracle = 100.0 * sklearn_f1(
                golds, preds, labels=list(range(n_classes)),
                average="macro", zero_division=0,
            )
            ours = macro_f1(preds, golds, n_classes)
            if oracle:
                worst = max(worst, abs(ours - oracle) / abs(oracle))

        for _ in range(25):
            base = rng.uniform(0.5, 100.0)
            new = rng.uniform(0.5, 100.0)
            oracle = (new - base) / base * 100.0
            worst = max(worst, abs(relative_difference(new, base) - oracle) / max(abs(oracle), 1e-12))

        for _ in range(25):
            a = {rng.randrange(40) for _ in range(rng.randint(1, 25))}
            b = {rng.randrange(40) for _ in range(rng.randint(1, 25))}
            oracle = len(a & b) / len(a | b)
            ours = jaccard_similarity(a, b)
            worst = max(worst, abs(ours - oracle) / max(oracle, 1e-12))

        anchor = relative_difference(8.36, 19.54)
        anchor_ok = abs(anchor - (-57.22)) < 0.01
        _report(
            1, "metric exactness", worst < 1e-9 and anchor_ok,
            f"worst rel err {worst:.2e}; 8.36 vs 19.54 -> {anchor:.2f}%",
        )


# ---------------------------------------------------------------------------
# 2. Wilcoxon exactness


def brute_force_wilcoxon_p(diffs: np.ndarray, alternative: str) -> float:
    """Literal 2^n sign enumeration on midranks of |diffs| (no zeros)."""
    ranks = stats.rankdata(np.abs(diffs))
    observed = float(ranks[diffs > 0].sum())
    hits = total = 0
    for signs in itertools.product((0, 1), repeat=len(diffs)):
        w = float(sum(r for r, s in zip(ranks, signs) if s))
        total += 1
        if alternative == "greater":
            hits += w >= observed - 1e-12
        else:
            hits += w <= observed + 1e-12
    return hits / total


class TestCriterion2Wilcoxon:
    def test_wilcoxon_exactness(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for case in range(200):
            n = int(rng.integers(1, 13))
            diffs = rng.choice([-3.0, -2.0, -1.5, -1.0, 1.0, 1.5, 2.0, 3.0], size=n)
            diffs += rng.normal(0, 0.01, size=n) * (rng.random(size=n) > 0.5)
            alternative = "greater" if case % 2 == 0 else "less"
            pairs = [(float(d), 0.0) for d in diffs]
            ours = wilcoxon_signed_rank(pairs, alternative=alternative).p_value
            oracle = brute_force_wilcoxon_p(diffs, alternative)
            worst = max(worst, abs(ours - oracle))
        all_pos = wilcoxon_signed_rank([(1.0 * k, 0.0) for k in range(1, 6)],
                                       alternative="greater").p_value
        _report(
            2, "Wilcoxon exactness",
            worst < 1e-12 and all_pos == pytest.approx(0.03125, abs=1e-12),
            f"worst abs err {worst:.2e}; all-positive n=5 p={all_pos}",
        )


# ---------------------------------------------------------------------------
# 3. Gradient check


class TestCriterion3Gradients:
    STEP = 1e-4
    TOL = 1e-3

    def _max_rel_err(self, model, loss_fn) -> float:
        model.double()
        loss = loss_fn(model)
        model.zero_grad()
        loss.backward()
        worst = 0.0
        for _, param in model.named_parameters():
            if param.grad is None:
                continue
            analytic = param.grad.detach().clone()
            flat = param.data.view(-1)
            numeric = torch.zeros_like(analytic).view(-1)
            for j in range(flat.numel()):
                orig = flat[j].item()
                flat[j] = orig + self.STEP
                up = loss_fn(model).item()
                flat[j] = orig - self.STEP
                down = loss_fn(model).item()
                flat[j] = orig
                numeric[j] = (up - down) / (2 * self.STEP)
            numeric = numeric.view_as(analytic)
            denom = max(float(analytic.norm()), float(numeric.norm()), 1e-8)
            worst = max(worst, float((analytic - numeric).norm()) / denom)
        return worst

    def test_gradient_check(self):
        vocab = train_vocabulary(["ab ba aab bab"] * 6, 24)
        config = ModelConfig(layers=2, hidden_size=8, attention_heads=2,
                             feedforward_size=16, dropout=0.0,
                             vocab_size=vocab.size, max_len=12, n_classes=3)
        model = init_from(init_model(config, seed=5))
        maskings = []
        for i, text in enumerate(["ab ba aab", "bab ab"]):
            seq = encode(text, vocab, config.max_len)
            m = apply_mlm_masking(seq, vocab, rate=0.6, seed=doc_masking_seed(3, f"g{i}"))
            if m.target_positions:
                maskings.append(m)
        ids, pad, targets = collate_mlm(maskings, vocab.pad_id)

        def mlm_fn(m):
            with torch.enable_grad():
                return mlm_loss(m, ids, pad, targets)[0]

        worst_mlm = self._max_rel_err(model, mlm_fn)

        seqs = [encode(t, vocab, config.max_len) for t in ["ab ba", "ba aab ab"]]
        cids, cpad = collate_cls(seqs, vocab.pad_id)
        labels = torch.tensor([0, 2])
        model2 = init_from(init_model(config, seed=6))

        def cls_fn(m):
            with torch.enable_grad():
                return cls_loss(m, cids, cpad, labels)

        worst_cls = self._max_rel_err(model2, cls_fn)
        _report(
            3, "gradient check", max(worst_mlm, worst_cls) < self.TOL,
            f"max rel err mlm {worst_mlm:.2e}, cls {worst_cls:.2e}",
        )


# ---------------------------------------------------------------------------
# 4-7. Default-plan ordering properties


class TestCriterion4DiagonalDominance:
    def test_diagonal_dominance(self, experiment, mlm_matrices):
        median = median_matrix(mlm_matrices)
        wins = sum(
            1 for j in range(N_PERIODS)
            if int(np.argmin(median.values[:, j])) == j
        )
        elapsed = experiment.record.wall_clock_seconds
        _report(
            4, "diagonal dominance", wins >= 9 and elapsed < 1800,
            f"matching-month model best on {wins}/12 test months; "
            f"full plan ran in {elapsed:.0f}s",
        )


class TestCriterion5Asymmetry:
    def test_past_future_asymmetry(self, mlm_matrices):
        # pairs are (earlier model on later month, later model on earlier
        # month); PP higher on the future side means diffs > 0
        p_values = []
        for matrix in mlm_matrices:
            pairs = offdiagonal_pairs(matrix)
            assert len(pairs) == 66
            p_values.append(wilcoxon_signed_rank(pairs, alternative="greater").p_value)
        p_med = float(np.median(p_values))
        _report(
            5, "past/future asymmetry", p_med < 0.05,
            f"median one-sided p over 66 pairs = {p_med:.2e}",
        )


class TestCriterion6ScaleEffect:
    SIZES = [0, 1000, 5000, 20000]

    def test_adaptation_scale(self, experiment):
        per_seed = [experiment.runner.adaptation_scale_ppl(self.SIZES, seed)
                    for seed in SEEDS]
        medians = [float(np.median([r[s] for r in per_seed])) for s in self.SIZES]
        decreasing = all(b < a for a, b in zip(medians, medians[1:]))
        gains = [a - b for a, b in zip(medians, medians[1:])]
        diminishing = all(g2 < g1 for g1, g2 in zip(gains, gains[1:]))
        _report(
            6, "adaptation scale effect", decreasing and diminishing,
            "PP " + " -> ".join(f"{v:.1f}" for v in medians),
        )


class TestCriterion7TemporalFinetuning:
    def test_temporal_finetuning(self, f1_matrices):
        median = median_matrix(f1_matrices)
        wins = sum(
            1 for j in range(N_PERIODS)
            if median.values[j, j] > median.control[j]
        )
        by_distance: dict[int, list[float]] = {}
        for i in range(N_PERIODS):
            for j in range(N_PERIODS):
                by_distance.setdefault(abs(i - j), []).append(median.values[i, j])
        distances = sorted(by_distance)
        means = [float(np.mean(by_distance[d])) for d in distances]
        rho, p = stats.spearmanr(distances, means)
        _report(
            7, "temporal fine-tuning",
            wins >= 9 and rho < 0 and p < 0.05,
            f"TFt beats RFt on {wins}/12 matching months; "
            f"distance decay rho={rho:.2f}, p={p:.1e}",
        )


# ---------------------------------------------------------------------------
# 8-9. Strategy ordering with shared vs class-specific events


class TestCriterion8StrategyNull:
    def test_shared_events_null(self, experiment):
        per_seed = [experiment.runner.strategy_compare(seed) for seed in SEEDS]
        med = {k: float(np.median([r[k] for r in per_seed])) for k in per_seed[0]}
        gap = med["DAda+RFt"] - med["NAda+RFt"]
        tada_rft = abs(med["TAda+RFt"] - med["DAda+RFt"])
        tada_tft = abs(med["TAda+TFt"] - med["DAda+TFt"])
        ok = gap > 0 and tada_rft < gap and tada_tft < gap
        _report(
            8, "strategy ordering with shared events", ok,
            f"DAda-NAda gap {gap:.2f}; |TAda-DAda| RFt {tada_rft:.2f}, TFt {tada_tft:.2f}",
        )


class TestCriterion9DiscriminativeEvents:
    def test_discriminative_flip(self, experiment):
        plan = default_plan(experiment.root / "runDisc")
        plan.corpus_spec = make_discriminative_variant(default_spec())
        runner = ExperimentRunner(plan, cache_dir=experiment.root / "cache_disc")
        diffs = []
        for seed in SEEDS:
            tada = float(np.mean([
                runner.evaluate_f1(
                    runner.finetuned_checkpoint("TAda", pid, "RFt", None, seed),
                    runner.test_slices[pid])
                for pid in runner.periods
            ]))
            dada = float(np.mean([
                runner.evaluate_f1(
                    runner.finetuned_checkpoint("DAda", None, "RFt", None, seed),
                    runner.test_slices[pid])
                for pid in runner.periods
            ]))
            diffs.append(tada - dada)
        margin = float(np.median(diffs))
        se = float(np.std(diffs, ddof=1) / math.sqrt(len(diffs)))
        _report(
            9, "class-specific events flip the null", margin > se,
            f"TAda+RFt - DAda+RFt median {margin:.2f}, seed SE {se:.2f}",
        )


# ---------------------------------------------------------------------------
# 10. Attribution structure


class TestCriterion10Attribution:
    def test_attribution_structure(self, experiment):
        runner = experiment.runner
        control = runner.adapted_checkpoint("DAda", None, seed=0)
        control_model = init_from(control)
        records = []
        for pid in runner.periods:
            candidate_model = init_from(runner.adapted_checkpoint("TAda", pid, seed=0))
            sl = runner.test_slices[pid]
            ctl = per_token_losses(control_model, sl, runner.vocab,
                                   masking_seed=runner.plan.masking_seed)
            cand = per_token_losses(candidate_model, sl, runner.vocab,
                                    masking_seed=runner.plan.masking_seed)
            texts = {d.id: d.text for d in sl.documents}
            records.extend(loss_deltas(ctl, cand, pid, runner.corpus.gold_tags,
                                       texts, runner.vocab))

        contrib = {c.pos: c for c in contribution_by_pos(records)}
        propn = contrib["PROPN"]
        over_represented = propn.contribution_share > propn.frequency_share

        propn_records = [r for r in records if r.pos == "PROPN"]
        top_decile_share = decile_contributions(propn_records)[0]

        top = top_fraction(records, 0.1)
        event_tokens = runner.corpus.ledger.tokens()
        event_fraction = sum(1 for r in top if r.word in event_tokens) / len(top)

        rows = distinctiveness_table(top, runner.test_slices,
                                     runner.corpus.gold_tags, runner.vocab,
                                     n_classes=runner.n_classes)
        n_subwords = sum(r.n_subwords for r in rows)
        multi_class = sum(r.n_subwords for r in rows if r.class_bucket >= 2)
        multi_fraction = multi_class / max(n_subwords, 1)

        ok = (over_represented and top_decile_share > 50.0
              and multi_fraction >= 0.60 and event_fraction >= 0.80)
        _report(
            10, "attribution structure", ok,
            f"PROPN {propn.contribution_share:.1f}% of delta vs "
            f"{propn.frequency_share:.1f}% of tokens; PROPN top decile "
            f"{top_decile_share:.1f}%; {100*multi_fraction:.1f}% of top subwords "
            f"in >=2 classes; {100*event_fraction:.1f}% of top tokens are events",
        )


# ---------------------------------------------------------------------------
# 11. Determinism and cache behavior


class TestCriterion11Determinism:
    def test_byte_level_reproducibility(self, experiment):
        run_b = experiment.root / "runB"
        runner_b = ExperimentRunner(default_plan(run_b),
                                    cache_dir=experiment.root / "cache")
        runner_b.run()
        run_a = experiment.root / "runA"
        csvs_a = sorted(p.relative_to(run_a) for p in run_a.rglob("*.csv"))
        csvs_b = sorted(p.relative_to(run_b) for p in run_b.rglob("*.csv"))
        same_set = csvs_a == csvs_b and len(csvs_a) > 0
        mismatched = [
            str(rel) for rel in csvs_a
            if (run_a / rel).read_bytes() != (run_b / rel).read_bytes()
        ] if same_set else ["<csv listings differ>"]
        ok = same_set and not mismatched and runner_b.training_runs == 0
        _report(
            11, "determinism and caching", ok,
            f"{len(csvs_a)} CSVs byte-identical; cache-hit rerun trained "
            f"{runner_b.training_runs} checkpoints"
            + (f"; mismatches: {mismatched[:3]}" if mismatched else ""),
        )
