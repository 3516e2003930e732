import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rolltune import (FeatureSet, ShapeError, ValidationError, build_network, cmc,
                      distance_matrix, evaluate_retrieval, extract_features, mean_ap)
from rolltune.metrics import features_for

from oracles import cmc_map_bruteforce, distance_loops


class TestDistanceMatrix:
    def test_identical_vectors_zero(self):
        q = np.array([[1.0, 2.0, 3.0]])
        assert distance_matrix(q, q)[0, 0] == 0.0

    def test_pythagorean(self):
        assert distance_matrix(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))[0, 0] == 25.0

    def test_matches_double_loop_oracle(self, rng):
        q = rng.normal(size=(8, 16))
        g = rng.normal(size=(12, 16))
        assert np.abs(distance_matrix(q, g) - distance_loops(q, g)).max() < 1e-5

    def test_symmetry_under_swap(self, rng):
        a = rng.normal(size=(5, 8))
        b = rng.normal(size=(7, 8))
        assert np.abs(distance_matrix(a, b) - distance_matrix(b, a).T).max() < 1e-6

    def test_nonnegative_clamp(self, rng):
        a = rng.normal(size=(20, 4)).astype(np.float32)
        assert distance_matrix(a, a).min() >= 0.0

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            distance_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


class TestCmc:
    def test_single_query_nearest_match(self):
        dist = np.array([[0.1, 0.5, 0.9]])
        values = cmc(dist, [7], [7, 8, 9], ranks=(1,))
        assert values[1] == 1.0

    def test_match_at_rank_three(self):
        dist = np.array([[0.1, 0.2, 0.3, 0.4]])
        values = cmc(dist, [5], [1, 2, 5, 5], ranks=(1, 2, 3, 4))
        assert values[1] == 0.0 and values[2] == 0.0
        assert values[3] == 1.0 and values[4] == 1.0

    def test_monotone_in_k(self, rng):
        dist = rng.random((10, 30))
        ql = rng.integers(0, 5, 10)
        gl = rng.integers(0, 5, 30)
        values = cmc(dist, ql, gl, ranks=tuple(range(1, 31)))
        curve = [values[k] for k in range(1, 31)]
        assert all(a <= b for a, b in zip(curve, curve[1:]))

    def test_all_queries_matchless_rejected(self):
        with pytest.raises(ValidationError):
            cmc(np.ones((2, 3)), [1, 1], [2, 2, 2])


class TestMeanAp:
    def test_hand_case_hits_at_1_and_3(self):
        # hits at ranks 1 and 3 with two relevant items: AP = (1 + 2/3) / 2
        dist = np.array([[0.1, 0.2, 0.3]])
        aps, value = mean_ap(dist, [1], [1, 0, 1])
        assert abs(aps[0] - (1 + 2 / 3) / 2) < 1e-12
        assert abs(value - 5 / 6) < 1e-12

    def test_everything_relevant_gives_one(self, rng):
        dist = rng.random((4, 6))
        aps, value = mean_ap(dist, [3, 3, 3, 3], [3] * 6)
        assert np.allclose(aps, 1.0) and value == 1.0

    def test_matchless_query_excluded_and_flagged(self):
        dist = np.array([[0.1, 0.2], [0.3, 0.1]])
        aps, value = mean_ap(dist, [1, 9], [1, 1])
        assert np.isnan(aps[1]) and aps[0] == 1.0 and value == 1.0

    def test_ap_bounds(self, rng):
        dist = rng.random((10, 30))
        aps, _ = mean_ap(dist, rng.integers(0, 4, 10), rng.integers(0, 4, 30))
        valid = aps[~np.isnan(aps)]
        assert ((valid >= 0) & (valid <= 1)).all()


class TestAgainstBruteForce:
    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            nq = int(rng.integers(2, 21))
            ng = int(rng.integers(5, 51))
            ids = int(rng.integers(2, 8))
            dist = rng.random((nq, ng))
            ql = rng.integers(0, ids, nq)
            gl = rng.integers(0, ids, ng)
            if not any(set(ql) & set(gl)):
                continue
            oracle_cmc, oracle_aps, oracle_map = cmc_map_bruteforce(dist, ql, gl, ng)
            got = cmc(dist, ql, gl, ranks=tuple(range(1, ng + 1)))
            assert np.abs(np.array([got[k] for k in range(1, ng + 1)])
                          - oracle_cmc).max() < 1e-9
            aps, value = mean_ap(dist, ql, gl)
            both = ~np.isnan(aps)
            assert (both == ~np.isnan(oracle_aps)).all()
            assert np.abs(aps[both] - oracle_aps[both]).max() < 1e-9
            assert abs(value - oracle_map) < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(-10.0, 10.0))
    def test_constant_shift_leaves_metrics_unchanged(self, seed, shift):
        rng = np.random.default_rng(seed)
        dist = rng.random((6, 15))
        ql = rng.integers(0, 3, 6)
        gl = rng.integers(0, 3, 15)
        base_cmc = cmc(dist, ql, gl)
        base_aps, base_map = mean_ap(dist, ql, gl)
        shifted_cmc = cmc(dist + shift, ql, gl)
        shifted_aps, shifted_map = mean_ap(dist + shift, ql, gl)
        assert base_cmc == shifted_cmc
        assert np.allclose(base_aps, shifted_aps, equal_nan=True)
        assert base_map == shifted_map

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_gallery_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        dist = rng.random((5, 12))  # real-valued, ties almost surely absent
        ql = rng.integers(0, 3, 5)
        gl = rng.integers(0, 3, 12)
        perm = rng.permutation(12)
        base = mean_ap(dist, ql, gl)[1], cmc(dist, ql, gl)
        permuted = mean_ap(dist[:, perm], ql, gl[perm])[1], cmc(dist[:, perm], ql, gl[perm])
        assert base[0] == pytest.approx(permuted[0], abs=1e-12)
        assert base[1] == permuted[1]

    def test_stable_tie_break_by_gallery_index(self):
        dist = np.array([[0.5, 0.5, 0.5]])
        values = cmc(dist, [1], [0, 1, 0], ranks=(1, 2))
        assert values[1] == 0.0 and values[2] == 1.0


class TestCameraFiltering:
    def test_same_camera_same_id_excluded(self):
        dist = np.array([[0.1, 0.2, 0.3]])
        ql, gl = [1], [1, 1, 0]
        qc, gc = [0], [0, 1, 0]
        plain = cmc(dist, ql, gl, ranks=(1,))
        filtered = cmc(dist, ql, gl, ranks=(1,), query_cams=qc, gallery_cams=gc,
                       cross_camera=True)
        assert plain[1] == 1.0
        assert filtered[1] == 1.0  # nearest same-camera hit removed; rank 2 hit promoted
        aps, _ = mean_ap(dist, ql, gl, query_cams=qc, gallery_cams=gc, cross_camera=True)
        assert aps[0] == 1.0

    def test_missing_cameras_rejected(self):
        with pytest.raises(ValidationError):
            cmc(np.ones((1, 2)), [1], [1, 1], cross_camera=True)


class TestFeatureExtraction:
    def test_row_count_matches_samples(self, small_config, micro_data):
        params = build_network(
            type(small_config)(widths=(2, 3), input_shape=(1, 16, 8),
                               embedding_dim=4, num_classes=4), seed=0)
        fs = extract_features(params, micro_data.query, flip_fusion=False)
        assert fs.features.shape == (len(micro_data.query), 3)
        assert np.isfinite(fs.features).all()

    def test_fused_equals_two_pass_sum(self, micro_data):
        from rolltune import NetworkConfig
        params = build_network(NetworkConfig(widths=(2, 3), input_shape=(1, 16, 8),
                                             embedding_dim=4, num_classes=4), seed=0)
        imgs = micro_data.query.images
        fused = features_for(params, imgs, flip_fusion=True)
        plain = features_for(params, imgs, flip_fusion=False)
        flipped = features_for(params, imgs[:, :, :, ::-1].copy(), flip_fusion=False)
        assert np.abs(fused - (plain + flipped)).max() < 1e-5

    def test_mirror_symmetric_input_fuses_to_double(self):
        from rolltune import NetworkConfig
        params = build_network(NetworkConfig(widths=(2, 3), input_shape=(1, 16, 8),
                                             embedding_dim=4, num_classes=4), seed=1)
        half = np.random.default_rng(0).random((5, 1, 16, 4), dtype=np.float32)
        sym = np.concatenate([half, half[:, :, :, ::-1]], axis=3)
        fused = features_for(params, sym, flip_fusion=True)
        plain = features_for(params, sym, flip_fusion=False)
        assert np.abs(fused - 2 * plain).max() < 1e-5


class TestRetrievalReport:
    def test_summary_csv_columns(self, micro_data):
        from rolltune import NetworkConfig
        params = build_network(NetworkConfig(widths=(2, 3), input_shape=(1, 16, 8),
                                             embedding_dim=4, num_classes=4), seed=0)
        report = evaluate_retrieval(params, micro_data.query, micro_data.gallery)
        header, row = report.summary_csv().strip().split("\n")
        assert header == "map,rank1,rank5,rank10"
        values = [float(v) for v in row.split(",")]
        assert all(0 <= v <= 1 for v in values)
        assert report.num_excluded == 0
        per_query = report.per_query_csv().strip().split("\n")
        assert len(per_query) == len(micro_data.query) + 1
