import json

import numpy as np
import pytest
from scipy.stats import spearmanr
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oracles import optimal_partition_sse
from tokvec import (
    Codebook,
    CodebookFormatError,
    DimensionMismatchError,
    RoundingEncoder,
    SubvectorClusteringEncoder,
    format_rounded_token,
    load_codebook,
    make_gaussian_mixture,
    save_codebook,
)


class TestFormatRoundedToken:
    def test_reference_values(self):
        assert format_rounded_token(1, 0.1234, 2) == "pos1val0.12"
        assert format_rounded_token(2, -0.2394, 2) == "pos2val-0.24"
        assert format_rounded_token(3, 0.0657, 2) == "pos3val0.07"

    def test_half_rounds_away_from_zero(self):
        assert format_rounded_token(1, 0.125, 2) == "pos1val0.13"
        assert format_rounded_token(1, -0.125, 2) == "pos1val-0.13"
        assert format_rounded_token(1, 2.5, 0) == "pos1val3"
        assert format_rounded_token(1, -2.5, 0) == "pos1val-3"
        assert format_rounded_token(1, 0.15, 1) == "pos1val0.1"  # 0.15 is 0.1499... in binary

    def test_fixed_width_keeps_trailing_zeros(self):
        assert format_rounded_token(1, 0.1, 2) == "pos1val0.10"
        assert format_rounded_token(1, 2.0, 3) == "pos1val2.000"

    def test_no_decimal_point_at_zero_decimals(self):
        assert format_rounded_token(4, 17.2, 0) == "pos4val17"

    def test_negative_zero_is_normalized(self):
        assert format_rounded_token(1, -0.004, 2) == "pos1val0.00"
        assert format_rounded_token(1, -0.4, 0) == "pos1val0"
        assert format_rounded_token(1, 0.0, 2) == "pos1val0.00"

    def test_large_magnitudes_do_not_overflow(self):
        assert format_rounded_token(1, 1e300, 0).startswith("pos1val1")

    def test_validation(self):
        with pytest.raises(ValueError, match="position"):
            format_rounded_token(0, 1.0, 2)
        with pytest.raises(ValueError, match="decimals"):
            format_rounded_token(1, 1.0, -1)
        with pytest.raises(ValueError, match="finite"):
            format_rounded_token(1, float("nan"), 2)


class TestRoundingEncoder:
    def test_reference_token_sets(self):
        x = [0.1234, -0.2394, 0.0657]
        assert RoundingEncoder(decimals=2, max_tokens=3).encode(x) == {
            "pos1val0.12",
            "pos2val-0.24",
            "pos3val0.07",
        }
        assert RoundingEncoder(decimals=2, max_tokens=2).encode(x) == {
            "pos1val0.12",
            "pos2val-0.24",
        }
        assert RoundingEncoder(decimals=2, max_tokens=1).encode(x) == {"pos2val-0.24"}

    def test_magnitude_tie_goes_to_lower_position(self):
        assert RoundingEncoder(decimals=1, max_tokens=1).encode([0.5, -0.5]) == {
            "pos1val0.5"
        }
        assert RoundingEncoder(decimals=1, max_tokens=2).encode([-0.3, 0.3, 0.3]) == {
            "pos1val-0.3",
            "pos2val0.3",
        }

    def test_max_tokens_none_keeps_all(self):
        tokens = RoundingEncoder(decimals=0).encode([1.0, 2.0, 3.0, 4.0])
        assert tokens == {"pos1val1", "pos2val2", "pos3val3", "pos4val4"}

    def test_max_tokens_above_dimension_keeps_all(self):
        assert len(RoundingEncoder(decimals=1, max_tokens=99).encode([1.0, 2.0])) == 2

    def test_token_count_is_min_of_budget_and_dimension(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            d = int(rng.integers(1, 12))
            m = int(rng.integers(1, 15))
            x = rng.normal(size=d)
            tokens = RoundingEncoder(decimals=3, max_tokens=m).encode(x)
            assert len(tokens) == min(m, d)

    def test_transform_matches_encode_row_by_row(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(25, 7))
        encoder = RoundingEncoder(decimals=1, max_tokens=4)
        assert encoder.transform(X) == [encoder.encode(row) for row in X]

    def test_stateless_fit_and_clone(self):
        encoder = RoundingEncoder(decimals=1, max_tokens=4)
        assert encoder.fit(None) is encoder
        params = clone(encoder).get_params()
        assert params["decimals"] == 1 and params["max_tokens"] == 4

    def test_describe(self):
        assert RoundingEncoder(decimals=2, max_tokens=8).describe() == {
            "scheme": "rounding",
            "p": 2,
            "m": 8,
        }
        assert RoundingEncoder(decimals=0).describe()["m"] is None

    def test_accepts_any_dimension(self):
        encoder = RoundingEncoder(decimals=0)
        assert encoder.expected_dimension is None
        assert encoder.encode([1.0]) == {"pos1val1"}
        assert len(encoder.encode(np.ones(32))) == 32

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError, match="decimals"):
            RoundingEncoder(decimals=-1).encode([1.0])
        with pytest.raises(ValueError, match="max_tokens"):
            RoundingEncoder(decimals=0, max_tokens=0).encode([1.0])

    def test_non_finite_vector_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            RoundingEncoder().encode([np.inf, 0.0])


def _hand_codebook():
    centroids = np.array(
        [
            [[0.0, 0.0], [10.0, 10.0]],
            [[0.5, 0.5], [10.5, 10.5]],
        ]
    )
    return Codebook(
        dimension=4, n_positions=2, n_clusters=2, training_seed=0, centroids=centroids
    )


class TestSubvectorClusteringEncoder:
    def test_hand_codebook_assignment(self):
        encoder = SubvectorClusteringEncoder.from_codebook(_hand_codebook())
        assert encoder.encode([9.0, 9.0, 1.0, 1.0]) == {"pos1cluster2", "pos2cluster1"}
        assert encoder.encode([0.0, 0.0, 11.0, 10.0]) == {"pos1cluster1", "pos2cluster2"}

    def test_assignment_tie_goes_to_lower_cluster(self):
        centroids = np.array([[[1.0], [3.0]]])
        codebook = Codebook(
            dimension=1, n_positions=1, n_clusters=2, training_seed=0, centroids=centroids
        )
        encoder = SubvectorClusteringEncoder.from_codebook(codebook)
        assert encoder.encode([2.0]) == {"pos1cluster1"}

    def test_fit_recovers_per_position_optima(self):
        """Each position is its own tiny clustering problem with a known
        exhaustive optimum."""
        X = np.array(
            [[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]], dtype=np.float64
        )
        encoder = SubvectorClusteringEncoder(
            n_subvectors=2, n_clusters=2, random_state=3, n_init=5
        ).fit(X)
        cb = encoder.codebook_
        assert sorted(cb.centroids[0].ravel().tolist()) == [0.0, 10.0]
        assert sorted(cb.centroids[1].ravel().tolist()) == [0.5, 10.5]
        for position in range(2):
            sse = optimal_partition_sse(X[:, position], 2)
            labels = cb.assign_batch(X)[:, position]
            centers = cb.centroids[position][labels, 0]
            assert ((X[:, position] - centers) ** 2).sum() == pytest.approx(sse, abs=1e-9)

    def test_emits_exactly_one_token_per_position(self):
        corpus = make_gaussian_mixture(150, 12, 3, seed=9)
        encoder = SubvectorClusteringEncoder(
            n_subvectors=4, n_clusters=5, random_state=1
        ).fit(corpus.vectors)
        for tokens in encoder.transform(corpus.vectors[:20]):
            assert len(tokens) == 4
            positions = sorted(int(t[3 : t.index("cluster")]) for t in tokens)
            assert positions == [1, 2, 3, 4]

    def test_cluster_numbers_are_1_based(self):
        X = np.random.default_rng(2).normal(size=(10, 4))
        encoder = SubvectorClusteringEncoder(
            n_subvectors=2, n_clusters=1, random_state=0
        ).fit(X)
        assert encoder.encode(X[0]) == {"pos1cluster1", "pos2cluster1"}

    def test_transform_matches_encode(self):
        corpus = make_gaussian_mixture(60, 8, 2, seed=4)
        encoder = SubvectorClusteringEncoder(
            n_subvectors=2, n_clusters=4, random_state=6
        ).fit(corpus.vectors)
        assert encoder.transform(corpus.vectors[:10]) == [
            encoder.encode(row) for row in corpus.vectors[:10]
        ]

    def test_indivisible_dimension_is_an_error(self):
        X = np.zeros((10, 5))
        with pytest.raises(ValueError, match="not divisible"):
            SubvectorClusteringEncoder(n_subvectors=2, n_clusters=2).fit(X)

    def test_wrong_dimension_at_encode_time(self):
        encoder = SubvectorClusteringEncoder.from_codebook(_hand_codebook())
        assert encoder.expected_dimension == 4
        with pytest.raises(DimensionMismatchError, match="expected 4"):
            encoder.encode([1.0, 2.0])

    def test_unfitted_transform_raises(self):
        with pytest.raises(NotFittedError):
            SubvectorClusteringEncoder().transform(np.zeros((2, 4)))

    def test_fit_determinism(self):
        corpus = make_gaussian_mixture(120, 8, 3, seed=11)
        a = SubvectorClusteringEncoder(n_subvectors=4, n_clusters=6, random_state=7).fit(
            corpus.vectors
        )
        b = SubvectorClusteringEncoder(n_subvectors=4, n_clusters=6, random_state=7).fit(
            corpus.vectors
        )
        np.testing.assert_array_equal(a.codebook_.centroids, b.codebook_.centroids)
        c = SubvectorClusteringEncoder(n_subvectors=4, n_clusters=6, random_state=8).fit(
            corpus.vectors
        )
        assert not np.array_equal(a.codebook_.centroids, c.codebook_.centroids)

    def test_training_sample_cap(self):
        corpus = make_gaussian_mixture(200, 4, 2, seed=12)
        encoder = SubvectorClusteringEncoder(
            n_subvectors=2, n_clusters=3, random_state=1, train_sample_size=50
        ).fit(corpus.vectors)
        assert encoder.codebook_.n_clusters == 3
        again = SubvectorClusteringEncoder(
            n_subvectors=2, n_clusters=3, random_state=1, train_sample_size=50
        ).fit(corpus.vectors)
        np.testing.assert_array_equal(
            encoder.codebook_.centroids, again.codebook_.centroids
        )

    def test_k_larger_than_training_rows_rejected(self):
        X = np.random.default_rng(0).normal(size=(5, 4))
        with pytest.raises(ValueError, match="exceeds"):
            SubvectorClusteringEncoder(n_subvectors=2, n_clusters=10).fit(X)

    def test_describe_uses_codebook(self):
        encoder = SubvectorClusteringEncoder.from_codebook(_hand_codebook())
        assert encoder.describe() == {
            "scheme": "clustering",
            "m": 2,
            "k": 2,
            "seed": 0,
        }


class TestCodebookFile:
    def test_save_load_round_trip_bit_exact(self, tmp_path):
        corpus = make_gaussian_mixture(80, 8, 2, seed=21)
        encoder = SubvectorClusteringEncoder(
            n_subvectors=4, n_clusters=3, random_state=2
        ).fit(corpus.vectors)
        path = tmp_path / "cb.json"
        save_codebook(encoder.codebook_, path)
        loaded = load_codebook(path)
        assert loaded.dimension == 8
        assert loaded.n_positions == 4
        assert loaded.n_clusters == 3
        assert loaded.training_seed == 2
        np.testing.assert_array_equal(loaded.centroids, encoder.codebook_.centroids)

    def test_file_schema(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        payload = json.loads(path.read_text())
        assert sorted(payload) == ["centroids", "d", "k", "m", "seed", "version"]
        assert payload["version"] == 1
        assert payload["d"] == 4 and payload["m"] == 2 and payload["k"] == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(CodebookFormatError, match="no such file"):
            load_codebook(tmp_path / "absent.json")

    def test_truncated_json(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        path.write_text(path.read_text()[:40])
        with pytest.raises(CodebookFormatError, match="invalid"):
            load_codebook(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        payload = json.loads(path.read_text())
        payload["version"] = 2
        path.write_text(json.dumps(payload))
        with pytest.raises(CodebookFormatError, match="version"):
            load_codebook(path)

    def test_invalid_counts_rejected(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        payload = json.loads(path.read_text())
        payload["k"] = 0
        path.write_text(json.dumps(payload))
        with pytest.raises(CodebookFormatError):
            load_codebook(path)

    def test_shape_mismatch_rejected(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        payload = json.loads(path.read_text())
        payload["m"] = 4
        path.write_text(json.dumps(payload))
        with pytest.raises(CodebookFormatError, match="shape|divisible"):
            load_codebook(path)

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "cb.json"
        save_codebook(_hand_codebook(), path)
        payload = json.loads(path.read_text())
        payload["extra"] = 1
        path.write_text(json.dumps(payload))
        with pytest.raises(CodebookFormatError, match="unknown"):
            load_codebook(path)

    def test_codebook_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            Codebook(
                dimension=5,
                n_positions=2,
                n_clusters=1,
                training_seed=0,
                centroids=np.zeros((2, 1, 2)),
            )
        with pytest.raises(ValueError, match="shape"):
            Codebook(
                dimension=4,
                n_positions=2,
                n_clusters=2,
                training_seed=0,
                centroids=np.zeros((2, 2, 3)),
            )
        with pytest.raises(ValueError, match="finite"):
            Codebook(
                dimension=4,
                n_positions=2,
                n_clusters=1,
                training_seed=0,
                centroids=np.full((2, 1, 2), np.nan),
            )


class TestLocality:
    """Closer vectors should share more tokens; the rank correlation
    between pair distance and overlap must be clearly negative."""

    def _correlation(self, encoder, corpus, pairs=1200):
        rng = np.random.default_rng(99)
        token_sets = encoder.transform(corpus.vectors)
        n = corpus.n
        left = rng.integers(0, n, size=pairs)
        right = rng.integers(0, n, size=pairs)
        keep = left != right
        left, right = left[keep], right[keep]
        distances = np.linalg.norm(
            corpus.vectors[left] - corpus.vectors[right], axis=1
        )
        overlaps = np.array(
            [len(token_sets[i] & token_sets[j]) for i, j in zip(left, right)]
        )
        rho, _ = spearmanr(distances, overlaps)
        return rho

    def test_clustering_overlap_tracks_distance(self, small_mixture):
        encoder = SubvectorClusteringEncoder(
            n_subvectors=4, n_clusters=8, random_state=5
        ).fit(small_mixture.vectors)
        assert self._correlation(encoder, small_mixture) < -0.5

    def test_rounding_overlap_tracks_distance(self, small_mixture):
        encoder = RoundingEncoder(decimals=0, max_tokens=8)
        assert self._correlation(encoder, small_mixture) < -0.3
