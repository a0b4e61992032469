import math

import numpy as np
import pytest

from fedconform.conformal import (
    CalibrationState,
    calibrate_client,
    nonconformity,
    nonconformity_batch,
    pooled_threshold,
    prediction_set,
    prediction_sets_batch,
    threshold_for,
)
from fedconform.core import FULL_SET, InvalidInputError
from helpers import ForcedScoreModel, forced_score_examples, rank_oracle


def state_from_scores(scores, client_id=0, alphas=()):
    sorted_scores = np.sort(np.asarray(scores, dtype=np.float64))
    thresholds = {a: threshold_for(sorted_scores, a) for a in alphas}
    return CalibrationState(client_id, sorted_scores, thresholds)


class TestNonconformity:
    def test_values(self):
        assert nonconformity([0.7, 0.2, 0.1], 0) == pytest.approx(0.3, abs=1e-12)
        assert nonconformity([0.0, 1.0, 0.0], 1) == 0.0
        assert nonconformity([0.25, 0.25, 0.25, 0.25], 2) == 0.75

    def test_label_out_of_range(self):
        with pytest.raises(InvalidInputError):
            nonconformity([0.5, 0.5], 2)
        with pytest.raises(InvalidInputError):
            nonconformity([0.5, 0.5], -1)

    def test_batch_matches_scalar(self):
        probs = np.array([[0.6, 0.4], [0.1, 0.9]])
        labels = np.array([0, 1])
        got = nonconformity_batch(probs, labels)
        np.testing.assert_allclose(got, [nonconformity(p, y) for p, y in zip(probs, labels)])


class TestCalibrateClient:
    def test_rank_selection_on_forced_scores(self):
        scores = [0.1 * i for i in range(1, 10)]
        model = ForcedScoreModel(scores)
        state = calibrate_client(model, forced_score_examples(scores, client_id=4), [0.1])
        assert state.client_id == 4
        assert state.size == 9
        assert state.thresholds[0.1] == pytest.approx(0.9, abs=1e-12)

    def test_small_calibration_set_gives_full_set_sentinel(self):
        scores = [0.2, 0.4, 0.6, 0.8]
        model = ForcedScoreModel(scores)
        state = calibrate_client(model, forced_score_examples(scores), [0.1])
        assert math.isinf(state.thresholds[0.1])
        assert state.thresholds[0.1] == FULL_SET

    def test_duplicate_scores(self):
        scores = [0.5] * 5
        model = ForcedScoreModel(scores)
        state = calibrate_client(model, forced_score_examples(scores), [0.2])
        # rank ceil(0.8 * 6) = 5 lands on the last duplicate
        assert state.thresholds[0.2] == pytest.approx(0.5, abs=1e-12)

    def test_scores_sorted_ascending(self):
        scores = [0.9, 0.1, 0.5, 0.3]
        model = ForcedScoreModel(scores)
        state = calibrate_client(model, forced_score_examples(scores), [0.25])
        assert np.all(np.diff(state.sorted_scores) >= 0.0)

    def test_empty_calibration_rejected(self):
        with pytest.raises(InvalidInputError):
            calibrate_client(ForcedScoreModel([0.5]), [], [0.1])

    def test_every_finite_threshold_is_a_calibration_score(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.uniform(size=int(rng.integers(1, 40)))
            model = ForcedScoreModel(scores)
            alphas = [0.05, 0.1, 0.3]
            state = calibrate_client(model, forced_score_examples(scores), alphas)
            for tau in state.thresholds.values():
                if math.isfinite(tau):
                    assert np.any(np.isclose(state.sorted_scores, tau, atol=0.0))


class TestPooledThreshold:
    def test_hand_pooled_case(self):
        states = [
            state_from_scores([0.2, 0.4]),
            state_from_scores([0.6, 0.8], client_id=1),
        ]
        # pooled m=4, rank ceil(0.8 * 5) = 4 -> fourth smallest = 0.8
        assert pooled_threshold(states, 0.2) == pytest.approx(0.8, abs=1e-15)

    def test_single_client_identity(self):
        state = state_from_scores(np.linspace(0.05, 0.95, 13), alphas=[0.15])
        assert pooled_threshold([state], 0.15) == state.thresholds[0.15]

    def test_duplicated_clients_keep_rank_alignment(self):
        scores = [0.1 * i for i in range(1, 10)]
        states = [state_from_scores(scores, client_id=i) for i in range(2)]
        # pooled m=18, rank ceil(0.9 * 19) = 18 -> 0.9
        assert pooled_threshold(states, 0.1) == pytest.approx(0.9, abs=1e-15)

    def test_matches_sort_all_then_index_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(120):
            states = [
                state_from_scores(rng.uniform(size=int(rng.integers(1, 30))), client_id=i)
                for i in range(int(rng.integers(1, 5)))
            ]
            alpha = float(rng.uniform(0.02, 0.5))
            pooled = sorted(float(v) for s in states for v in s.sorted_scores)
            rank = rank_oracle(len(pooled), alpha)
            expected = FULL_SET if rank is None else pooled[rank - 1]
            assert pooled_threshold(states, alpha) == expected

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            pooled_threshold([], 0.1)


class TestPredictionSet:
    def test_threshold_one_admits_every_label(self):
        assert prediction_set([0.5, 0.3, 0.2], 1.0) == {0, 1, 2}

    def test_hand_case(self):
        # scores are (0.4, 0.7, 0.9); only the first is <= 0.5
        assert prediction_set([0.6, 0.3, 0.1], 0.5) == {0}

    def test_zero_threshold_empty_set(self):
        assert prediction_set([0.9, 0.05, 0.05], 0.0) == frozenset()

    def test_full_set_sentinel(self):
        assert prediction_set([0.9, 0.05, 0.05], FULL_SET) == {0, 1, 2}

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.dirichlet(np.ones(5))
            lo, hi = sorted(rng.uniform(size=2))
            assert prediction_set(p, lo) <= prediction_set(p, hi)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(4), size=20)
        taus = rng.uniform(size=20)
        sets = prediction_sets_batch(probs, taus)
        for row, tau, got in zip(probs, taus, sets):
            assert got == prediction_set(row, tau)


class TestCoverageLaw:
    @pytest.mark.parametrize("alpha", [0.1, 0.2])
    def test_marginal_coverage_monte_carlo(self, alpha):
        # m calibration plus 1 test score drawn IID from a continuous
        # distribution: coverage probability is rank/(m+1), which lies in
        # [1 - alpha, 1 - alpha + 1/(m+1)]; check the Monte-Carlo rate
        # against that band within 3 binomial standard errors
        from fedconform.core import quantile_index

        m, trials = 100, 10_000
        rng = np.random.default_rng(int(alpha * 1000))
        cal = np.sort(rng.uniform(size=(trials, m)), axis=1)
        test = rng.uniform(size=trials)
        rank = quantile_index(m, alpha)
        thresholds = cal[:, rank - 1]
        rate = float((test <= thresholds).mean())
        lower, upper = 1 - alpha, 1 - alpha + 1 / (m + 1)
        sigma = math.sqrt((1 - alpha) * alpha / trials)
        assert lower - 3 * sigma <= rate <= upper + 3 * sigma
