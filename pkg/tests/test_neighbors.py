import numpy as np
import pytest

from fedconform.core import DimensionError, InvalidInputError, LabeledExample
from fedconform.fedtrain import MLPClassifier, ModelParameters, layout_size
from fedconform.neighbors import (
    DistanceReply,
    FeatureBank,
    PixelBank,
    assignment_accuracy,
    build_feature_bank,
    build_pixel_bank,
    min_distance,
    min_distances_batch,
    top_k_clients,
    vectorize_pixels,
)
from helpers import ForcedScoreModel


def cluster_examples(center, n, client_id, rng, label=0, scale=1.0):
    return [
        LabeledExample(center + scale * rng.standard_normal(len(center)), label, client_id)
        for _ in range(n)
    ]


class TestBanks:
    def test_feature_bank_preserves_order_and_cardinality(self):
        # ForcedScoreModel embeds to the raw features, so the bank is the
        # calibration matrix itself
        model = ForcedScoreModel(np.zeros(4))
        cal = [LabeledExample([float(i), 2.0 * i], 0, 7) for i in range(4)]
        bank = build_feature_bank(model, cal)
        assert bank.client_id == 7
        np.testing.assert_array_equal(
            bank.vectors, [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]
        )

    def test_feature_bank_zero_model_is_all_zeros(self):
        flat = np.zeros(layout_size(2, 3, 2))
        model = MLPClassifier(ModelParameters(2, 3, 2, flat))
        cal = [LabeledExample([1.0, -1.0], 0, 0), LabeledExample([2.0, 3.0], 1, 0)]
        np.testing.assert_array_equal(build_feature_bank(model, cal).vectors, np.zeros((2, 3)))

    def test_feature_bank_rebuild_identical(self):
        model = ForcedScoreModel(np.zeros(3))
        cal = [LabeledExample([float(i), -float(i)], 0, 1) for i in range(3)]
        a = build_feature_bank(model, cal)
        b = build_feature_bank(model, cal)
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_pixel_bank_stacks_flattened_features(self):
        cal = [LabeledExample([1.0, 2.0], 0, 3), LabeledExample([3.0, 4.0], 1, 3)]
        bank = build_pixel_bank(cal)
        assert isinstance(bank, PixelBank)
        np.testing.assert_array_equal(bank.vectors, [[1.0, 2.0], [3.0, 4.0]])

    def test_empty_calibration_rejected(self):
        with pytest.raises(InvalidInputError):
            build_pixel_bank([])


class TestMinDistance:
    BANK = FeatureBank(0, np.array([[0.0, 0.0], [3.0, 4.0]]))

    def test_member_query_is_zero(self):
        assert min_distance(self.BANK, [0.0, 0.0]) == 0.0

    def test_nearest_of_two(self):
        assert min_distance(self.BANK, [3.0, 0.0]) == pytest.approx(3.0, abs=1e-12)

    def test_singleton_identity(self):
        bank = FeatureBank(0, np.array([[1.0, 2.0, 3.0]]))
        assert min_distance(bank, [1.0, 2.0, 3.0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            min_distance(self.BANK, [1.0, 2.0, 3.0])
        with pytest.raises(DimensionError):
            min_distances_batch(self.BANK, np.zeros((2, 3)))


class TestTopK:
    REPLIES = [DistanceReply(0, 0.5), DistanceReply(1, 0.1), DistanceReply(2, 0.9)]

    def test_nearest_single(self):
        assert top_k_clients(self.REPLIES, 1) == [1]

    def test_full_ordering(self):
        assert top_k_clients(self.REPLIES, 3) == [1, 0, 2]

    def test_tie_breaks_to_lower_client_id(self):
        replies = [DistanceReply(1, 0.5), DistanceReply(0, 0.5)]
        assert top_k_clients(replies, 1) == [0]

    def test_invariant_under_reply_permutation(self):
        rng = np.random.default_rng(0)
        replies = [DistanceReply(i, float(d)) for i, d in enumerate(rng.uniform(size=6))]
        expected = top_k_clients(replies, 4)
        for _ in range(10):
            shuffled = [replies[i] for i in rng.permutation(6)]
            assert top_k_clients(shuffled, 4) == expected

    def test_k_out_of_range(self):
        with pytest.raises(InvalidInputError):
            top_k_clients(self.REPLIES, 0)
        with pytest.raises(InvalidInputError):
            top_k_clients(self.REPLIES, 4)


class TestVectorizePixels:
    def test_grid_flattens_row_major(self):
        np.testing.assert_array_equal(
            vectorize_pixels([[1.0, 2.0], [3.0, 4.0]]), [1.0, 2.0, 3.0, 4.0]
        )

    def test_flat_input_unchanged(self):
        np.testing.assert_array_equal(vectorize_pixels([5.0, 6.0]), [5.0, 6.0])

    def test_single_pixel_channels(self):
        np.testing.assert_array_equal(
            vectorize_pixels([[[0.1, 0.2, 0.3]]]), [0.1, 0.2, 0.3]
        )


class TestAssignmentAccuracy:
    def separated_world(self, spread=40.0, n=25, clients=3, dim=4, seed=0):
        rng = np.random.default_rng(seed)
        test, banks = [], []
        for cid in range(clients):
            center = np.zeros(dim)
            center[cid % dim] = spread * (1 + cid)
            cal = cluster_examples(center, n, cid, rng)
            banks.append(build_pixel_bank(cal))
            test.extend(cluster_examples(center, 10, cid, rng))
        return test, banks

    def test_k_equal_to_client_count_is_always_one(self):
        test, banks = self.separated_world(spread=0.1)
        assert assignment_accuracy(test, banks, len(banks)) == 1.0

    def test_separated_clusters_top1(self):
        test, banks = self.separated_world(spread=40.0)
        assert assignment_accuracy(test, banks, 1) == 1.0

    def test_monotone_in_k(self):
        test, banks = self.separated_world(spread=1.0)
        accs = [assignment_accuracy(test, banks, k) for k in range(1, len(banks) + 1)]
        assert all(b >= a for a, b in zip(accs, accs[1:]))
        assert accs[-1] == 1.0

    def test_requires_origin_ground_truth(self):
        test, banks = self.separated_world()
        missing = [LabeledExample(test[0].features, test[0].label, -1)]
        with pytest.raises(InvalidInputError):
            assignment_accuracy(missing, banks, 1)

    def test_embed_fn_is_applied(self):
        # scaling embedding keeps the separated geometry, so accuracy stays 1
        test, banks = self.separated_world(spread=40.0)
        scaled_banks = [FeatureBank(b.client_id, 2.0 * b.vectors) for b in banks]
        acc = assignment_accuracy(test, scaled_banks, 1, embed_fn=lambda x: 2.0 * x)
        assert acc == 1.0
