"""Risk estimates, metrics, and the repeated-split experiment protocol."""

import dataclasses

import numpy as np
import pytest

from riskcal.assessment import (
    DEFAULT_METHODS,
    ExperimentConfig,
    Method,
    alpha_emp,
    alpha_hat_calibrated,
    alpha_hat_smx,
    assess,
    ece,
    report_rows,
    reports_to_csv,
    run_experiment,
    summary_to_dict,
    sweep,
)
from riskcal.calibration import HistogramBinningModel, IsotonicModel, fit_histogram_binning
from riskcal.core import Dataset
from riskcal.datagen import SyntheticConfig, generate_synthetic


def small_pool(seed=0, n=200, k_classes=5):
    pool, _ = generate_synthetic(
        SyntheticConfig(K=k_classes, pool_size=n, concentration=1.0, seed=seed)
    )
    return pool


class TestMethodParse:
    def test_aliases(self):
        assert Method.parse("smx") is Method.SMX
        assert Method.parse("HIST_BIN") is Method.HIST_BIN
        assert Method.parse(" iso-reg ") is Method.ISO_REG

    def test_unknown(self):
        with pytest.raises(ValueError):
            Method.parse("magic")


class TestAlphaEmp:
    def test_all_correct(self):
        ds = Dataset(probabilities=[[0.8, 0.2]] * 3, labels=[0, 0, 0])
        assert alpha_emp(ds, 1) == 0.0

    def test_none_correct(self):
        ds = Dataset(probabilities=[[0.8, 0.2]] * 3, labels=[1, 1, 1])
        assert alpha_emp(ds, 1) == 1.0

    def test_counting(self):
        ds = Dataset(probabilities=[[0.8, 0.2]] * 4, labels=[0, 0, 0, 1])
        assert alpha_emp(ds, 1) == 0.25


class TestAlphaHatSmx:
    def test_constant_confidence(self):
        ds = Dataset(probabilities=[[0.9, 0.06, 0.04]] * 5, labels=[0] * 5)
        assert alpha_hat_smx(ds, 1) == pytest.approx(0.1)

    def test_full_set_is_exactly_zero(self):
        ds = small_pool(seed=1)
        assert alpha_hat_smx(ds, ds.n_classes) == 0.0

    def test_mean_of_two(self):
        ds = Dataset(probabilities=[[0.6, 0.4], [0.8, 0.2]], labels=[0, 0])
        assert alpha_hat_smx(ds, 1) == pytest.approx(0.3)


class TestAlphaHatCalibrated:
    def test_identity_calibrator_matches_smx(self):
        ds = small_pool(seed=2)
        from riskcal.core import top_k_mass

        conf = np.unique(top_k_mass(ds, 1))
        identity = IsotonicModel(breakpoints=conf, values=conf)
        assert alpha_hat_calibrated(identity, ds, 1) == pytest.approx(
            alpha_hat_smx(ds, 1), abs=1e-12
        )

    def test_constant_calibrator(self):
        ds = small_pool(seed=3)
        constant = HistogramBinningModel(
            boundaries=np.array([0.0, 1.0]), thetas=np.array([0.75])
        )
        assert alpha_hat_calibrated(constant, ds, 1) == pytest.approx(0.25)

    def test_binning_composition(self):
        model = fit_histogram_binning(
            [0.2, 0.3, 0.8], [0, 0, 1], n_bins=2, strategy="equal-width"
        )
        ds = Dataset(
            probabilities=[[0.2, 0.5, 0.3], [0.9, 0.06, 0.04]], labels=[1, 0]
        )
        # confidences 0.5 -> theta_2 = 1, and 0.9 -> 1; wait: 0.5 sits in the
        # right bin, so r = (1, 1)? No: scores are 0.5 and 0.9, both bin 2.
        assert alpha_hat_calibrated(model, ds, 1) == pytest.approx(0.0)

    def test_binning_mixed_bins(self):
        model = fit_histogram_binning(
            [0.2, 0.3, 0.8], [0, 0, 1], n_bins=2, strategy="equal-width"
        )
        ds = Dataset(
            probabilities=[[0.4, 0.35, 0.25], [0.9, 0.06, 0.04]], labels=[0, 0]
        )
        # confidences 0.4 -> theta_1 = 0 and 0.9 -> theta_2 = 1
        assert alpha_hat_calibrated(model, ds, 1) == pytest.approx((1.0 + 0.0) / 2)

    def test_rejects_non_calibrator(self):
        with pytest.raises(TypeError):
            alpha_hat_calibrated(object(), small_pool(seed=4), 1)


class TestECE:
    def test_perfectly_calibrated_bins(self):
        # each bin's accuracy equals its mean confidence
        scores = np.array([0.25] * 4 + [0.75] * 4)
        targets = np.array([1, 0, 0, 0, 1, 1, 1, 0])
        assert ece(scores, targets, n_bins=2) == pytest.approx(0.0)

    def test_single_bin_gap(self):
        scores = np.full(10, 0.9)
        targets = np.array([1, 0] * 5)
        assert ece(scores, targets, n_bins=1) == pytest.approx(0.4)

    def test_lower_bounds_marginal_gap(self):
        """|mean(target) - mean(confidence)| <= ECE on any instance."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 200))
            s = rng.random(n)
            t = rng.integers(0, 2, n).astype(float)
            m = int(rng.integers(1, 20))
            assert abs(t.mean() - s.mean()) <= ece(s, t, m) + 1e-9

    def test_empty_input(self):
        with pytest.raises(ValueError):
            ece([], [], 10)


class TestAssess:
    def test_delta_and_conservative_consistency(self):
        pool = small_pool(seed=6, n=300)
        calib, test = pool.subset(np.arange(100)), pool.subset(np.arange(100, 300))
        for r in assess(calib, test, k=1):
            assert r.delta == r.alpha_hat - r.alpha_emp
            assert r.conservative == (r.delta >= 0)
            assert r.n_calib == 100 and r.n_test == 200

    def test_method_subset_and_order(self):
        pool = small_pool(seed=7, n=120)
        calib, test = pool.subset(np.arange(40)), pool.subset(np.arange(40, 120))
        reports = assess(calib, test, k=2, methods=(Method.INVCP, Method.SMX))
        assert [r.method for r in reports] == [Method.INVCP, Method.SMX]

    def test_full_set_every_method(self):
        """At k = K the empirical risk is 0 and no method may go negative."""
        pool = small_pool(seed=8, n=300)
        calib, test = pool.subset(np.arange(100)), pool.subset(np.arange(100, 300))
        reports = assess(calib, test, k=pool.n_classes)
        for r in reports:
            assert r.alpha_emp == 0.0
            assert r.alpha_hat >= 0.0
            if r.method is Method.SMX:
                assert r.alpha_hat == 0.0


class TestRunExperiment:
    def test_single_repeat_matches_reports(self):
        pool = small_pool(seed=9, n=250)
        summary = run_experiment(pool, ExperimentConfig(k=1, repeats=1, seed=5))
        for method, stats in summary.method_stats.items():
            (report,) = [r for r in summary.reports if r.method is method]
            assert stats.mean_delta == report.delta
            assert stats.std_delta == 0.0

    def test_table_one_proportions(self):
        pool = small_pool(seed=10, n=10000, k_classes=3)
        summary = run_experiment(
            pool, ExperimentConfig(k=1, methods=(Method.SMX,), repeats=1, seed=0)
        )
        assert summary.n_calib == 2000 and summary.n_test == 8000

    def test_bit_reproducible(self):
        pool = small_pool(seed=11, n=400)
        cfg = ExperimentConfig(k=1, repeats=5, seed=123)
        a = run_experiment(pool, cfg)
        b = run_experiment(pool, cfg)
        assert reports_to_csv(a) == reports_to_csv(b)
        assert summary_to_dict(a) == summary_to_dict(b)

    def test_jobs_do_not_change_results(self):
        pool = small_pool(seed=12, n=300)
        base = ExperimentConfig(k=1, repeats=6, seed=9)
        parallel = dataclasses.replace(base, jobs=4)
        assert reports_to_csv(run_experiment(pool, base)) == reports_to_csv(
            run_experiment(pool, parallel)
        )

    def test_splits_disjoint_and_exhaustive(self):
        pool = small_pool(seed=13, n=100)
        cfg = ExperimentConfig(k=1, repeats=3, seed=77)
        n_calib = 20
        for i in range(cfg.repeats):
            rng = np.random.default_rng(np.random.SeedSequence(77, spawn_key=(i,)))
            perm = rng.permutation(len(pool))
            assert len(set(perm[:n_calib]) & set(perm[n_calib:])) == 0
            assert len(set(perm)) == len(pool)

    def test_invalid_fraction(self):
        pool = small_pool(seed=14, n=50)
        with pytest.raises(ValueError):
            run_experiment(pool, ExperimentConfig(repeats=1, calib_fraction=1.5))
        with pytest.raises(ValueError):
            run_experiment(pool, ExperimentConfig(repeats=1, calib_fraction=0.0))

    def test_smx_unbiased_on_calibrated_pool(self):
        """On a faithfully reported pool the softmax estimate centres on the
        empirical risk."""
        pool, _ = generate_synthetic(
            SyntheticConfig(K=10, pool_size=4000, concentration=1.0, seed=15)
        )
        summary = run_experiment(
            pool, ExperimentConfig(k=1, methods=(Method.SMX,), repeats=20, seed=2)
        )
        stats = summary.method_stats[Method.SMX]
        assert abs(stats.mean_delta) <= max(2 * stats.std_delta, 2e-3)


class TestSweep:
    def test_singleton_axis(self):
        pool = small_pool(seed=16, n=200)
        cfg = ExperimentConfig(k=1, methods=(Method.SMX,), repeats=2, seed=1)
        assert len(sweep(pool, cfg, "M", [4])) == 1

    def test_axis_n_sets_split_sizes(self):
        pool = small_pool(seed=17, n=300)
        cfg = ExperimentConfig(k=1, methods=(Method.SMX,), repeats=2, seed=1)
        summaries = sweep(pool, cfg, "n", [50, 100])
        assert [s.n_calib for s in summaries] == [50, 100]
        assert [s.n_test for s in summaries] == [250, 200]

    def test_seed_stream_is_paired(self):
        """Same seed stream per axis value: SMX (which ignores M) must give
        identical deltas across M values."""
        pool = small_pool(seed=18, n=200)
        cfg = ExperimentConfig(k=1, methods=(Method.SMX, Method.HIST_BIN),
                               repeats=3, seed=4)
        a, b = sweep(pool, cfg, "M", [2, 8])
        smx_a = [r.delta for r in a.reports if r.method is Method.SMX]
        smx_b = [r.delta for r in b.reports if r.method is Method.SMX]
        assert smx_a == smx_b

    def test_bin_count_trend_on_overconfident_pool(self):
        """Coarse bins underfit an over-confident pool; M=8 should do at
        least as well as M=2 for histogram binning."""
        pool, _ = generate_synthetic(
            SyntheticConfig(K=10, pool_size=6000, concentration=0.5,
                            distortion_T=0.6, seed=5)
        )
        cfg = ExperimentConfig(k=1, methods=(Method.HIST_BIN,), repeats=20,
                               seed=3, strategy="equal-width")
        m2, m8 = sweep(pool, cfg, "M", [2, 8])
        assert abs(m8.method_stats[Method.HIST_BIN].mean_delta) <= abs(
            m2.method_stats[Method.HIST_BIN].mean_delta
        )

    def test_unknown_axis(self):
        pool = small_pool(seed=19, n=100)
        with pytest.raises(ValueError):
            sweep(pool, ExperimentConfig(repeats=1), "bins", [2])

    def test_empty_values(self):
        pool = small_pool(seed=20, n=100)
        with pytest.raises(ValueError):
            sweep(pool, ExperimentConfig(repeats=1), "M", [])


class TestEmission:
    def test_rows_shape_and_columns(self):
        pool = small_pool(seed=21, n=150)
        summary = run_experiment(pool, ExperimentConfig(k=1, repeats=3, seed=6))
        rows = report_rows(summary)
        assert len(rows) == 3 * len(DEFAULT_METHODS)
        assert set(rows[0]) == {
            "method", "k", "repeat", "seed", "alpha_hat", "alpha_emp",
            "delta", "conservative",
        }

    def test_csv_floats_round_trip(self):
        pool = small_pool(seed=22, n=150)
        summary = run_experiment(pool, ExperimentConfig(k=1, repeats=2, seed=8))
        text = reports_to_csv(summary)
        header, *lines = text.strip().split("\n")
        assert header == "method,k,repeat,seed,alpha_hat,alpha_emp,delta,conservative"
        for line, report in zip(lines, summary.reports):
            fields = line.split(",")
            assert float(fields[4]) == report.alpha_hat
            assert float(fields[6]) == report.delta
            assert fields[7] in ("true", "false")

    def test_summary_dict_is_json_ready(self):
        import json

        pool = small_pool(seed=23, n=150)
        summary = run_experiment(pool, ExperimentConfig(k=2, repeats=2, seed=3))
        payload = summary_to_dict(summary)
        parsed = json.loads(json.dumps(payload))
        assert parsed["config"]["k"] == 2
        assert set(parsed["methods"]) == {m.value for m in DEFAULT_METHODS}
