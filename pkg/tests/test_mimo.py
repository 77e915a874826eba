import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimogpr import gpr, mimo
from mimogpr.timeseries import Month, TimeSeriesPanel, embed, fit_standardizer


def normal_equations_oracle(forecasts, targets, penalty):
    """Brute-force regularized normal equations via explicit inverse."""
    n, m = forecasts.shape
    f_aug = np.hstack([forecasts, np.ones((n, 1))])
    mask = np.eye(m + 1)
    mask[m, m] = 0.0
    return (np.linalg.inv(f_aug.T @ f_aug + penalty * mask) @ f_aug.T @ targets).T


def random_stage(rng, n, m):
    f = rng.normal(size=(n, m))
    y = rng.normal(size=(n, m))
    return mimo.FirstStageMatrix(forecasts=f, targets=y)


class TestFitCombiner:
    def test_square_system_interpolates_at_zero_penalty(self):
        rng = np.random.default_rng(0)
        m = 3
        stage = random_stage(rng, m + 1, m)  # augmented matrix is square
        weights = mimo.fit_combiner(stage, 0.0)
        for i in range(stage.n_fit):
            np.testing.assert_allclose(
                mimo.combine(weights, stage.forecasts[i]), stage.targets[i], atol=1e-8
            )

    def test_huge_penalty_shrinks_to_column_means(self):
        rng = np.random.default_rng(1)
        stage = random_stage(rng, 40, 2)
        weights = mimo.fit_combiner(stage, 1e12)
        np.testing.assert_allclose(weights.weights[:, :-1], 0.0, atol=1e-9)
        np.testing.assert_allclose(weights.weights[:, -1], stage.targets.mean(axis=0), rtol=1e-9)

    def test_matches_normal_equations_oracle(self):
        rng = np.random.default_rng(2)
        stage = random_stage(rng, 12, 3)
        weights = mimo.fit_combiner(stage, 0.1)
        expected = normal_equations_oracle(stage.forecasts, stage.targets, 0.1)
        np.testing.assert_allclose(weights.weights, expected, atol=1e-10)

    def test_zero_penalty_equals_least_squares_on_full_rank(self):
        rng = np.random.default_rng(3)
        stage = random_stage(rng, 30, 4)
        weights = mimo.fit_combiner(stage, 0.0)
        expected = normal_equations_oracle(stage.forecasts, stage.targets, 0.0)
        np.testing.assert_allclose(weights.weights, expected, atol=1e-10)

    def test_singular_at_zero_penalty_reported(self):
        f = np.ones((8, 2))  # identical columns: rank deficient
        stage = mimo.FirstStageMatrix(forecasts=f, targets=np.random.default_rng(4).normal(size=(8, 2)))
        with pytest.raises(ValueError, match="positive ridge penalty"):
            mimo.fit_combiner(stage, 0.0)

    def test_too_few_rows_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="at least"):
            mimo.fit_combiner(random_stage(rng, 3, 3), 0.1)

    def test_penalty_continuity(self):
        rng = np.random.default_rng(6)
        stage = random_stage(rng, 20, 3)
        base = mimo.fit_combiner(stage, 0.1).weights
        deltas = []
        for eps in (1e-4, 1e-6, 1e-8):
            shifted = mimo.fit_combiner(stage, 0.1 + eps).weights
            deltas.append(np.max(np.abs(shifted - base)))
        assert deltas[0] > deltas[1] > deltas[2]
        assert deltas[2] < 1e-6


class TestCombine:
    def test_identity_combiner_passes_through(self):
        weights = mimo.CombinerWeights(
            weights=np.hstack([np.eye(3), np.zeros((3, 1))]), ridge_penalty=0.0
        )
        f = np.array([1.5, -2.0, 0.25])
        np.testing.assert_array_equal(mimo.combine(weights, f), f)

    def test_intercept_only_combiner(self):
        intercept = np.array([3.0, -1.0])
        weights = mimo.CombinerWeights(
            weights=np.hstack([np.zeros((2, 2)), intercept[:, None]]), ridge_penalty=0.0
        )
        for f in (np.zeros(2), np.array([5.0, 7.0])):
            np.testing.assert_array_equal(mimo.combine(weights, f), intercept)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(4, 5))
        weights = mimo.CombinerWeights(weights=w, ridge_penalty=0.1)
        f = rng.normal(size=4)
        expected = [
            sum(w[i, j] * f[j] for j in range(4)) + w[i, 4] for i in range(4)
        ]
        np.testing.assert_allclose(mimo.combine(weights, f), expected, atol=1e-14)

    def test_dimension_mismatch_rejected(self):
        weights = mimo.CombinerWeights(weights=np.zeros((2, 3)), ridge_penalty=0.0)
        with pytest.raises(ValueError, match="expected 2"):
            mimo.combine(weights, np.zeros(3))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_affine_identity(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(3, 4))
        weights = mimo.CombinerWeights(weights=w, ridge_penalty=0.0)
        f1, f2 = rng.normal(size=(2, 3))
        a, b = rng.normal(size=2)
        # combine(f) - combine(0) is linear in f
        offset = mimo.combine(weights, np.zeros(3))
        lhs = mimo.combine(weights, a * f1 + b * f2) - offset
        rhs = a * (mimo.combine(weights, f1) - offset) + b * (mimo.combine(weights, f2) - offset)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestSelectRidgePenalty:
    def test_single_element_grid(self):
        rng = np.random.default_rng(8)
        stage = random_stage(rng, 12, 2)
        assert mimo.select_ridge_penalty(stage, stage, [0.25]) == 0.25

    def test_square_self_validation_selects_interpolant(self):
        rng = np.random.default_rng(9)
        stage = random_stage(rng, 4, 3)  # square augmented system
        penalty = mimo.select_ridge_penalty(stage, stage, [0.0, 0.1, 1.0])
        assert penalty == 0.0

    def test_exhaustive_grid_oracle(self):
        rng = np.random.default_rng(10)
        m, n = 3, 24
        a = rng.normal(size=(m, m))
        f_train = rng.normal(size=(n, m))
        y_train = f_train @ a.T + 0.05 * rng.normal(size=(n, m))
        f_valid = rng.normal(size=(n, m))
        y_valid = f_valid @ a.T + 0.05 * rng.normal(size=(n, m))
        train = mimo.FirstStageMatrix(forecasts=f_train, targets=y_train)
        valid = mimo.FirstStageMatrix(forecasts=f_valid, targets=y_valid)
        grid = [0.0, 1e-3, 1e-2, 1e-1, 1.0]
        chosen = mimo.select_ridge_penalty(train, valid, grid)
        chosen_mse = mimo.combiner_mse(mimo.fit_combiner(train, chosen), valid)
        for penalty in grid:
            other = mimo.combiner_mse(mimo.fit_combiner(train, penalty), valid)
            assert chosen_mse <= other + 1e-12

    def test_ties_break_toward_larger_penalty(self):
        # candidate errors identical across penalties when targets are exactly 0
        stage = mimo.FirstStageMatrix(forecasts=np.eye(2).repeat(3, 0), targets=np.zeros((6, 2)))
        assert mimo.select_ridge_penalty(stage, stage, [0.0, 0.5, 1.0]) == 1.0

    def test_empty_grid_rejected(self):
        rng = np.random.default_rng(11)
        stage = random_stage(rng, 8, 2)
        with pytest.raises(ValueError, match="empty"):
            mimo.select_ridge_penalty(stage, stage, [])


class _LastValueForecaster:
    """Stub one-step forecaster returning the most recent lag."""

    def predict_next(self, lags_raw):
        return float(lags_raw[0])


def _fit_small_gprs(panel, lag_order, train_len, seed=0):
    models = []
    for s in range(panel.n_series):
        ds = embed(panel.values[:train_len, s], lag_order)
        std = fit_standardizer(ds)
        models.append(
            gpr.fit(std.apply(ds), gpr.FitConfig(restarts=1, seed=seed + s), standardizer=std)
        )
    return models


def _toy_panel(n=48, m=2, seed=12):
    rng = np.random.default_rng(seed)
    t = np.arange(n)[:, None]
    values = 50 + 10 * np.sin(2 * np.pi * t / 12 + np.array([[0.0, 1.0]])[:, :m])
    values = values + rng.normal(scale=0.5, size=(n, m))
    names = tuple(f"s{i + 1:02d}" for i in range(m))
    return TimeSeriesPanel(start_month=Month(2000, 1), series_names=names, values=values)


class TestBuildFirstStage:
    def test_entries_match_independent_predictions(self):
        panel = _toy_panel()
        p, train_len = 6, 36
        models = _fit_small_gprs(panel, p, train_len)
        fit_range = range(train_len, 46)
        stage = mimo.build_first_stage(models, panel, fit_range, p)
        assert stage.forecasts.shape == (10, 2)
        for row, t in enumerate(fit_range):
            for s, model in enumerate(models):
                lags = panel.values[t - p : t, s][::-1]
                z = model.standardizer.apply_inputs(lags[None, :])
                mu, _ = gpr.predict(model, z)
                expected = float(model.standardizer.invert_target(mu[0]))
                assert stage.forecasts[row, s] == expected
                assert stage.targets[row, s] == panel.values[t, s]

    def test_single_series_degenerate(self):
        panel = _toy_panel(m=1)
        models = _fit_small_gprs(panel, 6, 36)
        stage = mimo.build_first_stage(models, panel, range(36, 44), 6)
        assert stage.forecasts.shape == (8, 1)

    def test_empty_range_rejected(self):
        panel = _toy_panel()
        models = [_LastValueForecaster(), _LastValueForecaster()]
        with pytest.raises(ValueError, match="empty"):
            mimo.build_first_stage(models, panel, range(36, 36), 6)

    def test_range_beyond_panel_rejected(self):
        panel = _toy_panel()
        models = [_LastValueForecaster(), _LastValueForecaster()]
        with pytest.raises(ValueError, match="infeasible"):
            mimo.build_first_stage(models, panel, range(40, 60), 6)


class TestMimoForecaster:
    def test_one_step_without_combiner_passes_first_stage(self):
        fc = mimo.MimoForecaster(
            series_names=("a", "b"),
            lag_order=2,
            first_stage=(_LastValueForecaster(), _LastValueForecaster()),
        )
        history = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
        np.testing.assert_array_equal(fc.one_step(history), [3.0, 30.0])

    def test_single_series_pipeline_is_affine_in_first_stage(self):
        panel = _toy_panel(m=1)
        p, train_len = 6, 36
        models = _fit_small_gprs(panel, p, train_len)
        stage = mimo.build_first_stage(models, panel, range(train_len, 48), p)
        weights = mimo.fit_combiner(stage, 1e-3)
        w, b = weights.weights[0, 0], weights.weights[0, 1]
        combined = mimo.MimoForecaster(
            series_names=panel.series_names, lag_order=p,
            first_stage=tuple(models), combiner=weights,
        )
        plain = mimo.MimoForecaster(
            series_names=panel.series_names, lag_order=p, first_stage=tuple(models),
        )
        for t in (40, 44, 47):
            history = panel.values[t - p : t]
            f = plain.one_step(history)[0]
            np.testing.assert_allclose(combined.one_step(history)[0], w * f + b, rtol=1e-12)

    def test_history_too_short_rejected(self):
        fc = mimo.MimoForecaster(
            series_names=("a",), lag_order=5, first_stage=(_LastValueForecaster(),)
        )
        with pytest.raises(ValueError, match="history"):
            fc.one_step(np.zeros((3, 1)))
