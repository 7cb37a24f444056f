"""Prediction, calibration, effect simulation, and aggregation."""

import numpy as np
import pandas as pd
import pytest

from abundmap.draws import PosteriorDraws
from abundmap.exceptions import DataError
from abundmap.predict import (
    aggregate,
    calibrate,
    coarsen_regions,
    lambda_summary,
    linear_predictors,
    predict_counts,
    predict_pipeline,
    predict_sizes,
    PredictionSet,
    simulate_missing_effects,
    summarize_cells,
)

# the three known district totals used as calibration fixtures
KNOWN_TOTALS = {"A": 102.0, "B": 78.0, "C": 65.0}


def synthetic_predictions(n_draws=40, cells_per_district=5, seed=0):
    rng = np.random.default_rng(seed)
    labels = []
    for d in KNOWN_TOTALS:
        labels += [d] * cells_per_district
    districts = np.array(labels)
    counts = rng.gamma(2.0, 3.0, size=(n_draws, len(districts)))
    return PredictionSet(cell_ids=np.arange(len(districts)), districts=districts, counts=counts)


class TestCalibrate:
    def test_exact_match_per_draw(self):
        pred = calibrate(synthetic_predictions(), KNOWN_TOTALS)
        for lab, total in KNOWN_TOTALS.items():
            sums = pred.counts_calibrated[:, pred.districts == lab].sum(axis=1)
            np.testing.assert_allclose(sums, total, atol=1e-9)

    def test_simple_arithmetic(self):
        districts = np.array(["A"] * 4)
        counts = np.full((1, 4), 20.0)  # predicted sum 80 against total 102
        pred = calibrate(PredictionSet(np.arange(4), districts, counts), {"A": 102.0})
        lam = pred.lam["lam"].iloc[0]
        assert lam == pytest.approx(1.275)
        assert pred.counts_calibrated.sum() == pytest.approx(102.0)

    def test_identity_when_sum_matches(self):
        districts = np.array(["A"] * 3)
        counts = np.array([[34.0, 34.0, 34.0]])
        pred = calibrate(PredictionSet(np.arange(3), districts, counts), {"A": 102.0})
        np.testing.assert_allclose(pred.counts_calibrated, counts)
        assert pred.lam["lam"].iloc[0] == pytest.approx(1.0)

    def test_idempotent(self):
        pred = calibrate(synthetic_predictions(), KNOWN_TOTALS)
        again = calibrate(pred, KNOWN_TOTALS)
        np.testing.assert_allclose(again.counts_calibrated, pred.counts_calibrated, atol=1e-12)
        assert np.allclose(again.lam["lam"], 1.0)

    def test_precalibration_scaling_absorbed(self):
        base = synthetic_predictions()
        scaled = PredictionSet(base.cell_ids, base.districts, base.counts * 7.3)
        a = calibrate(base, KNOWN_TOTALS)
        b = calibrate(scaled, KNOWN_TOTALS)
        np.testing.assert_allclose(a.counts_calibrated, b.counts_calibrated, atol=1e-9)

    def test_uncalibrated_districts_pass_through(self):
        pred = calibrate(synthetic_predictions(), {"A": 102.0})
        mask = pred.districts != "A"
        np.testing.assert_array_equal(pred.counts_calibrated[:, mask], pred.counts[:, mask])

    def test_degenerate_draw_flagged(self):
        districts = np.array(["A", "A"])
        counts = np.array([[1.0, 1.0], [0.0, 0.0]])
        pred = calibrate(PredictionSet(np.arange(2), districts, counts), {"A": 10.0})
        assert pred.flagged_draws == {"A": [1]}
        np.testing.assert_allclose(pred.counts_calibrated[0], [5.0, 5.0])
        np.testing.assert_array_equal(pred.counts_calibrated[1], [0.0, 0.0])

    def test_lambda_summary_shape(self):
        pred = calibrate(synthetic_predictions(), KNOWN_TOTALS)
        summary = lambda_summary(pred)
        assert list(summary.columns) == ["district", "lambda_mean", "lambda_q2.5", "lambda_q97.5"]
        assert len(summary) == 3


class TestAggregate:
    def test_single_region_equals_grand_total(self):
        pred = synthetic_predictions()
        table = aggregate(pred.counts, ["all"] * pred.counts.shape[1])
        grand = pred.counts.sum(axis=1)
        assert table["mean"].iloc[0] == pytest.approx(grand.mean())

    def test_partition_additivity(self):
        pred = synthetic_predictions()
        halves = ["left" if i < 7 else "right" for i in range(pred.counts.shape[1])]
        table = aggregate(pred.counts, halves)
        total = aggregate(pred.counts, ["all"] * pred.counts.shape[1])
        assert table["mean"].sum() == pytest.approx(total["mean"].iloc[0])

    def test_quantiles_match_direct_computation(self):
        pred = synthetic_predictions()
        table = aggregate(pred.counts, ["all"] * pred.counts.shape[1], quantiles=(0.025, 0.975))
        sums = pred.counts.sum(axis=1)
        assert table["q2.5"].iloc[0] == pytest.approx(np.quantile(sums, 0.025))
        assert table["q97.5"].iloc[0] == pytest.approx(np.quantile(sums, 0.975))

    def test_region_label_mismatch_rejected(self):
        pred = synthetic_predictions()
        with pytest.raises(DataError):
            aggregate(pred.counts, ["a", "b"])


class TestPredictCounts:
    def test_expected_mode_formula(self, count_fit):
        est, cells, _ = count_fit
        from scipy.special import expit

        counts = predict_counts(est.draws_, cells.head(30), mode="expected")
        eta_p, eta_mu = linear_predictors(est.draws_, cells.head(30))
        manual = (1.0 - expit(eta_p)) * np.exp(eta_mu)
        np.testing.assert_allclose(counts, manual, atol=1e-10)

    def test_sampled_mode_matches_expected_in_mean(self, count_fit):
        est, cells, _ = count_fit
        sub = cells.head(20)
        expected = predict_counts(est.draws_, sub, mode="expected")
        rng_totals = []
        for s in range(40):
            rng_totals.append(predict_counts(est.draws_, sub, mode="sampled", seed=s).mean())
        mc = np.mean(rng_totals)
        assert mc == pytest.approx(expected.mean(), rel=0.05)

    def test_offset_removed_at_prediction(self, count_fit):
        # with retention 0.5, predicted latent counts should roughly double
        # the observed process, up to model error
        est, cells, _ = count_fit
        latent = predict_counts(est.draws_, cells).mean(axis=0).sum()
        observed = cells["count"].sum()
        assert latent > 1.4 * observed

    def test_sampled_mode_deterministic_given_seed(self, count_fit):
        est, cells, _ = count_fit
        a = predict_counts(est.draws_, cells.head(10), mode="sampled", seed=3)
        b = predict_counts(est.draws_, cells.head(10), mode="sampled", seed=3)
        np.testing.assert_array_equal(a, b)

    def test_gp_term_used_at_prediction(self, count_fit_gp):
        est, cells, _ = count_fit_gp
        with_gp, _ = linear_predictors(est.draws_, cells.head(40), include_gp=True)
        without, _ = linear_predictors(est.draws_, cells.head(40), include_gp=False)
        assert not np.allclose(with_gp, without)


class TestSimulateMissingEffects:
    def test_existing_districts_unchanged(self, count_fit):
        est, _, _ = count_fit
        before = est.draws_.col("gamma_p[D0]").copy()
        out = simulate_missing_effects(est.draws_, ["D0", "ZZ"], seed=4)
        np.testing.assert_array_equal(out.col("gamma_p[D0]"), before)
        assert "gamma_p[ZZ]" in out.names

    def test_zero_variance_gives_exact_zero(self):
        draws = PosteriorDraws(
            np.zeros((1, 5, 2)), ["sigma_district_p", "sigma_district_mu"],
            meta={"model": "count", "districts": ["A"], "include_district_effects": True},
        )
        out = simulate_missing_effects(draws, ["B"], seed=0)
        np.testing.assert_array_equal(out.col("gamma_p[B]"), 0.0)
        np.testing.assert_array_equal(out.col("gamma_mu[B]"), 0.0)

    def test_simulated_variance_tracks_posterior(self, count_fit):
        est, _, _ = count_fit
        out = simulate_missing_effects(est.draws_, [f"NEW{i}" for i in range(40)], seed=9)
        sims = np.column_stack([out.col(f"gamma_p[NEW{i}]") for i in range(40)])
        sd_draws = est.draws_.col("sigma_district_p")
        emp = sims.var(axis=1).mean()
        want = np.mean(sd_draws**2)
        assert emp == pytest.approx(want, rel=0.1)

    def test_effects_deterministic_given_seed(self, count_fit):
        est, _, _ = count_fit
        a = simulate_missing_effects(est.draws_, ["Q"], seed=7).col("gamma_p[Q]")
        b = simulate_missing_effects(est.draws_, ["Q"], seed=7).col("gamma_p[Q]")
        np.testing.assert_array_equal(a, b)

    def test_no_effect_model_gets_zeros(self, count_fit_gp):
        est, _, _ = count_fit_gp  # fitted without district effects
        out = simulate_missing_effects(est.draws_, ["B"], seed=0)
        np.testing.assert_array_equal(out.col("gamma_p[B]"), 0.0)


class TestPredictSizes:
    def test_degenerate_cells(self, size_fit):
        est, marks = size_fit
        cells = pd.DataFrame({
            "cell_id": [0], "lon": [0.5], "lat": [0.5], "district": ["D0"], "x1": [0.0],
        })
        sizes = predict_sizes(est.draws_, cells)
        # hurdle mean is (1-p) exp(mu + sigma^2/2): positive and finite
        assert np.all(sizes > 0)
        assert np.all(np.isfinite(sizes))

    def test_matches_manual_hurdle_mean(self, size_fit):
        est, _ = size_fit
        cells = pd.DataFrame({
            "cell_id": [0, 1], "lon": [0.2, 0.8], "lat": [0.5, 0.5],
            "district": ["D0", "D1"], "x1": [-1.0, 1.0],
        })
        sizes = predict_sizes(est.draws_, cells)
        eta_p, eta_mu = linear_predictors(est.draws_, cells)
        sigma = est.draws_.col("sigma_size")[:, None]
        manual = (1 - 1 / (1 + np.exp(-eta_p))) * np.exp(eta_mu + sigma**2 / 2)
        np.testing.assert_allclose(sizes, manual, atol=1e-10)


class TestPipeline:
    def test_abundance_recomputable_per_draw(self, count_fit, size_fit):
        count_est, cells, districts = count_fit
        size_est, _ = size_fit
        cells = cells.copy()
        # size model knows D0..D3; map the nine count districts onto them
        cells["district"] = ["D" + str(int(d[1]) % 4) for d in cells["district"]]
        totals = districts.copy()
        totals["district"] = ["D" + str(i % 4) for i in range(len(totals))]
        totals = totals.drop_duplicates("district").reset_index(drop=True)
        totals["known_total"] = [150.0, 80.0, np.nan, 60.0]
        pred = predict_pipeline(count_est.draws_, size_est.draws_, cells, totals, seed=3)
        # pipeline oracle: recompute abundance from its parts for 10 draws
        for k in range(0, pred.abundance.shape[0], max(1, pred.abundance.shape[0] // 10)):
            np.testing.assert_allclose(
                pred.abundance[k], pred.counts_calibrated[k] * pred.sizes[k], atol=1e-8
            )
        # calibrated districts hit their totals per draw
        for lab, total in [("D0", 150.0), ("D1", 80.0), ("D3", 60.0)]:
            sums = pred.counts_calibrated[:, pred.districts == lab].sum(axis=1)
            np.testing.assert_allclose(sums, total, atol=1e-9)

    def test_summaries_and_coarsening(self, count_fit):
        est, cells, districts = count_fit
        pred = predict_pipeline(est.draws_, None, cells, districts, seed=1)
        table = summarize_cells(pred.counts_calibrated, pred.cell_ids)
        assert list(table.columns) == ["cell_id", "mean", "sd", "q2.5", "q50", "q97.5"]
        blocks = coarsen_regions(cells, 4)
        agg = aggregate(pred.counts_calibrated, blocks)
        assert agg["mean"].sum() == pytest.approx(pred.counts_calibrated.sum(axis=1).mean())
        assert len(agg) == 36  # 24/4 = 6 blocks per axis


class TestLambdaNearOneWhenWellSpecified:
    def test_lambda_centers_near_unity(self, count_fit):
        """With a well-specified model, calibration factors should hover
        around one when the known total equals the realized truth."""
        est, cells, districts = count_fit
        totals = districts.copy()
        true_total = cells.attrs["true_total"]
        totals["known_total"] = np.nan
        totals.loc[0, "known_total"] = np.nan
        pred_counts = predict_counts(est.draws_, cells)
        pred = PredictionSet(cells["cell_id"].to_numpy(),
                             cells["district"].astype(str).to_numpy(), pred_counts)
        out = calibrate(pred, {"D0": float(
            cells.loc[cells["district"] == "D0", "count"].sum() * 2.0
        )})
        lam = out.lam["lam"].to_numpy()
        assert 0.7 <= np.mean(lam) <= 1.3
