from __future__ import annotations

import datetime as dt
import json
from typing import Mapping

import numpy as np
import pytest

from disco.errors import EmptySide, LengthMismatch, MissingWeights, ZeroVariance
from disco.harness import (
    ChronologicalSplit,
    ModelSplit,
    PredictorConfig,
    SelectionConfig,
    UniformSplit,
    mae,
    median_date_cutoff,
    midranks,
    pearson,
    run_pipeline,
    save_report,
    spearman,
    split_models,
    sweep_budgets,
    write_sweep_csv,
)
from disco.predictors import ForestConfig
from disco.synth import SynthConfig, generate_population

from conftest import make_manifest


@pytest.fixture(scope="module")
def population():
    cfg = SynthConfig(m_models=14, n_samples=160, c_classes=3, ability_dim=2,
                      seed=5, noise_temperature=0.8)
    return generate_population(cfg)


class TestSplits:
    def _manifest(self, dates, accs=None):
        n = len(dates)
        return make_manifest([0] * 3, 2, [f"m{i}" for i in range(n)],
                             accuracies=accs or [0.5] * n, dates=dates)

    def test_all_before_cutoff_is_empty_side(self):
        man = self._manifest([dt.date(2020, 1, 1), dt.date(2021, 1, 1)])
        with pytest.raises(EmptySide):
            split_models(man, ChronologicalSplit(dt.date(2022, 1, 1)))

    def test_uniform_ratio_arithmetic(self):
        man = self._manifest([dt.date(2020, 1, 1)] * 40)
        split = split_models(man, UniformSplit(0.9, seed=1))
        assert len(split.source_ids) == 36
        assert len(split.target_ids) == 4

    def test_chronological_matches_date_oracle(self, rng):
        dates = [dt.date(2020, 1, 1) + dt.timedelta(days=int(d))
                 for d in rng.integers(0, 2000, size=25)]
        man = self._manifest(dates)
        cutoff = dt.date(2023, 1, 1)
        split = split_models(man, ChronologicalSplit(cutoff))
        for i, meta in enumerate(man.models):
            expected_source = meta.release_date < cutoff
            assert (meta.model_id in split.source_ids) == expected_source
            assert (meta.model_id in split.target_ids) == (not expected_source)

    def test_covers_only_models_with_accuracy(self):
        man = self._manifest([dt.date(2020, 1, 1), dt.date(2024, 1, 1),
                              dt.date(2024, 6, 1)], accs=[0.5, None, 0.7])
        split = split_models(man, ChronologicalSplit(dt.date(2022, 1, 1)))
        assert split.source_ids == ["m0"]
        assert split.target_ids == ["m2"]
        assert set(split.source_ids).isdisjoint(split.target_ids)

    def test_median_cutoff_halves_population(self, population):
        manifest, _ = population
        cutoff = median_date_cutoff(manifest)
        split = split_models(manifest, ChronologicalSplit(cutoff))
        m = len(manifest.models)
        assert abs(len(split.source_ids) - m / 2) <= 1


class TestMae:
    def test_identical(self):
        assert mae([0.1, 0.9], [0.1, 0.9]) == 0.0

    def test_percentage_points(self):
        assert abs(mae([0.5], [0.4]) - 10.0) < 1e-12

    def test_matches_summation_oracle(self, rng):
        t, p = rng.random(100), rng.random(100)
        total = 0.0
        for a, b in zip(t, p):
            total += abs(a - b)
        assert abs(mae(t, p) - 100 * total / 100) < 1e-9

    def test_symmetry_and_scale(self, rng):
        t, p = rng.random(30), rng.random(30)
        assert mae(t, p) == mae(p, t)
        assert abs(mae(3 * t, 3 * p) - 3 * mae(t, p)) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            mae([0.1], [0.2, 0.3])


def midranks_oracle(values):
    # O(n^2) counting definition: 1 + #smaller + #ties/2
    values = list(values)
    out = []
    for x in values:
        smaller = sum(1 for y in values if y < x)
        ties = sum(1 for y in values if y == x) - 1
        out.append(1.0 + smaller + ties / 2.0)
    return np.asarray(out)


class TestSpearman:
    def test_monotone_transform_invariance(self, rng):
        t = rng.random(40)
        assert abs(spearman(t, np.exp(t) + 5) - 1.0) < 1e-12

    def test_reversed(self):
        t = np.arange(10.0)
        assert abs(spearman(t, -t) + 1.0) < 1e-12

    def test_ties_match_counting_oracle(self, rng):
        for _ in range(50):
            t = rng.integers(0, 5, size=20).astype(float)
            p = rng.integers(0, 5, size=20).astype(float)
            if np.all(t == t[0]) or np.all(p == p[0]):
                continue
            assert np.abs(midranks(t) - midranks_oracle(t)).max() < 1e-12
            expect = pearson(midranks_oracle(t), midranks_oracle(p))
            assert abs(spearman(t, p) - expect) < 1e-12

    def test_zero_variance_is_error(self):
        with pytest.raises(ZeroVariance):
            spearman([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])


class TestPearson:
    def test_affine(self, rng):
        t = rng.random(25)
        assert abs(pearson(t, 2 * t + 1) - 1.0) < 1e-12

    def test_negation(self, rng):
        t = rng.random(25)
        assert abs(pearson(t, -t) + 1.0) < 1e-12

    def test_matches_covariance_formula_oracle(self, rng):
        t, p = rng.random(60), rng.random(60)
        cov = np.mean((t - t.mean()) * (p - p.mean()))
        expect = cov / (t.std() * p.std())
        assert abs(pearson(t, p) - expect) < 1e-12

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            pearson([0.5, 0.5], [0.1, 0.2])


class RecordingTensors(Mapping):
    def __init__(self, inner):
        self.inner = inner
        self.accesses = []

    def __getitem__(self, key):
        self.accesses.append(key)
        return self.inner[key]

    def __iter__(self):
        return iter(self.inner)

    def __len__(self):
        return len(self.inner)


class TestRunPipeline:
    def test_self_prediction_is_exact(self, population):
        manifest, tensors = population
        ids = manifest.model_ids()
        split = ModelSplit(source_ids=ids, target_ids=ids, policy="self")
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="random"),
                              PredictorConfig(kind="knn", k_neighbors=1),
                              k=20, seed=0)
        assert report.mae_pp == 0.0
        assert report.spearman == 1.0

    def test_full_budget_direct_eval_exact(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="random"),
                              PredictorConfig(kind="direct"),
                              k=manifest.num_samples, seed=0)
        assert report.mae_pp == 0.0

    def test_sources_read_before_targets(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        recorder = RecordingTensors(tensors)
        run_pipeline(manifest, recorder, split, SelectionConfig(method="topk_pds"),
                     PredictorConfig(kind="knn"), k=10, seed=0)
        first_target = min(recorder.accesses.index(t) for t in split.target_ids)
        last_source = max(recorder.accesses.index(s) for s in split.source_ids)
        assert last_source < first_target

    def test_target_tensors_cannot_leak_into_selection(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        cfg = (SelectionConfig(method="topk_pds"),
               PredictorConfig(kind="random_forest",
                               forest=ForestConfig(n_trees=10)))
        r1 = run_pipeline(manifest, tensors, split, *cfg, k=12, seed=1)

        # corrupt one target model's tensor; all other targets' predictions
        # must be unchanged (selection, PCA, and training saw sources only)
        victim = split.target_ids[0]
        mutated = dict(tensors)
        rng = np.random.default_rng(99)
        raw = rng.random((manifest.num_samples, manifest.num_classes)) + 1e-6
        raw /= raw.sum(axis=1, keepdims=True)
        from disco.store import PredictionTensor
        mutated[victim] = PredictionTensor.from_values(victim, raw.astype(np.float32))
        r2 = run_pipeline(manifest, mutated, split, *cfg, k=12, seed=1)
        for (m1, _, p1), (m2, _, p2) in zip(r1.pairs, r2.pairs):
            assert m1 == m2
            if m1 != victim:
                assert p1 == p2

    def test_deterministic(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        args = (manifest, tensors, split, SelectionConfig(method="topk_jsd"),
                PredictorConfig(kind="random_forest", forest=ForestConfig(n_trees=15)))
        r1 = run_pipeline(*args, k=8, seed=4)
        r2 = run_pipeline(*args, k=8, seed=4)
        assert r1.pairs == r2.pairs

    def test_weighted_sum_route(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="kmedoids_corr"),
                              PredictorConfig(kind="weighted_sum"), k=6, seed=0)
        assert 0 <= report.mae_pp <= 100

    def test_weighted_sum_needs_weights(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        with pytest.raises(MissingWeights):
            run_pipeline(manifest, tensors, split,
                         SelectionConfig(method="random"),
                         PredictorConfig(kind="weighted_sum"), k=6, seed=0)

    def test_report_serialization(self, population, tmp_path):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="random"),
                              PredictorConfig(kind="direct"), k=10, seed=0)
        path = tmp_path / "report.json"
        save_report(report, path, provenance={"seed": 0})
        obj = json.loads(path.read_text())
        assert obj["mae_pp"] == report.mae_pp
        assert obj["selection"] == "random"
        assert len(obj["pairs"]) == len(split.target_ids)


class TestSweep:
    def test_single_cell_equals_run_pipeline(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        cfg = (SelectionConfig(method="random"), PredictorConfig(kind="direct"))
        reports = sweep_budgets(manifest, tensors, split, [cfg], [10], [3])
        single = run_pipeline(manifest, tensors, split, *cfg, k=10, seed=3)
        assert len(reports) == 1
        assert reports[0].pairs == single.pairs

    def test_cardinality(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        configs = [(SelectionConfig(method="random"), PredictorConfig(kind="direct")),
                   (SelectionConfig(method="topk_pds"), PredictorConfig(kind="knn"))]
        reports = sweep_budgets(manifest, tensors, split, configs, [20, 40], [0, 1, 2])
        assert len(reports) == 2 * 2 * 3

    def test_budgets_must_be_sorted(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        from disco.errors import InvalidConfig
        with pytest.raises(InvalidConfig):
            sweep_budgets(manifest, tensors, split,
                          [(SelectionConfig(method="random"),
                            PredictorConfig(kind="direct"))], [10, 5], [0])

    def test_direct_eval_error_shrinks_with_budget(self):
        # sampling error at K=100 should beat K=10 on average over seeds
        cfg = SynthConfig(m_models=24, n_samples=400, c_classes=3, ability_dim=2,
                          seed=42, noise_temperature=0.8)
        manifest, tensors = generate_population(cfg)
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        sel = SelectionConfig(method="random")
        pred = PredictorConfig(kind="direct")
        maes = {10: [], 100: []}
        for seed in range(20):
            for k in (10, 100):
                r = run_pipeline(manifest, tensors, split, sel, pred, k, seed)
                maes[k].append(r.mae_pp)
        assert np.mean(maes[100]) <= np.mean(maes[10])

    def test_csv_export(self, population, tmp_path):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        cfg = (SelectionConfig(method="random"), PredictorConfig(kind="direct"))
        reports = sweep_budgets(manifest, tensors, split, [cfg], [25], [0, 1])
        path = tmp_path / "sweep.csv"
        write_sweep_csv(reports, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "method,selection,predictor,k,seed,mae_pp,spearman,pearson"
        assert len(lines) == 3
        assert lines[1].startswith("random+direct,random,direct,25,0,")


class TestOtherPredictorRoutes:
    def test_linear_pipeline(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="topk_pds"),
                              PredictorConfig(kind="linear"), k=10, seed=0)
        assert 0.0 <= report.mae_pp <= 100.0
        assert all(0.0 <= p <= 1.0 for _, _, p in report.pairs)

    def test_best_for_validation_pipeline(self, population):
        manifest, tensors = population
        split = split_models(manifest, ChronologicalSplit(median_date_cutoff(manifest)))
        report = run_pipeline(manifest, tensors, split,
                              SelectionConfig(method="best_for_validation",
                                              candidates=20),
                              PredictorConfig(kind="knn"), k=10, seed=0)
        assert report.k == 10
