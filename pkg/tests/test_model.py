import math

import numpy as np
import pytest

from rolltune import (NetworkConfig, ShapeError, ValidationError, build_network,
                      forward_classifier, forward_features, forward_logits, one_hot,
                      parameter_groups, rebuild_classifier, softmax_cross_entropy)
from rolltune.model import block_specs

from oracles import block_forward_loops


def params_equal(a, b):
    for ga, gb in zip(a.groups(), b.groups()):
        for name in ga.tensors:
            if not np.array_equal(ga.tensors[name].data, gb.tensors[name].data):
                return False
    return True


class TestBuildNetwork:
    def test_same_seed_bit_identical(self, small_config):
        assert params_equal(build_network(small_config, 3), build_network(small_config, 3))

    def test_different_seed_differs(self, small_config):
        assert not params_equal(build_network(small_config, 3), build_network(small_config, 4))

    def test_group_structure(self):
        cfg = NetworkConfig(widths=(8, 16, 32, 64, 128), num_classes=10)
        params = build_network(cfg, seed=0)
        groups = parameter_groups(params)
        assert [gid for gid, _ in groups] == ["block1", "block2", "block3", "block4",
                                              "block5", "fc"]

    def test_classifier_output_width(self):
        cfg = NetworkConfig(widths=(4, 8), input_shape=(1, 8, 8), num_classes=7)
        params = build_network(cfg, seed=0)
        assert params.classifier.tensors["fc2.weight"].shape == (cfg.embedding_dim, 7)

    def test_fan_in_scaled_variance(self):
        """Sample variance of big weight tensors tracks gain/fan_in within 20%."""
        cfg = NetworkConfig()
        for layer, fan_in, gain in [("block2/conv1.weight", 8 * 9, 2.0),
                                    ("block5/conv2.weight", 128 * 9, 2.0),
                                    ("fc/fc1.weight", 128, 2.0)]:
            gid, name = layer.split("/")
            ratios = []
            for seed in range(10):
                params = build_network(cfg, seed=seed)
                t = params.group(gid).tensors[name]
                assert t.data.size >= 256
                ratios.append(t.data.var() / (gain / fan_in))
            assert abs(np.mean(ratios) - 1) < 0.2, layer

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            build_network(NetworkConfig(widths=(4,)), seed=0)
        with pytest.raises(ValidationError):
            build_network(NetworkConfig(widths=(4, 8), kernel_size=4), seed=0)
        with pytest.raises(ValidationError):
            build_network(NetworkConfig(widths=(4, 8), input_shape=(1, 8, 8),
                                        num_classes=1), seed=0)


class TestForward:
    def test_feature_shape(self, small_config):
        params = build_network(small_config, seed=0)
        x = np.random.default_rng(0).random((4, 1, 16, 8), dtype=np.float32)
        assert forward_features(x, params, "train").shape == (4, small_config.feature_dim)

    def test_logit_shape(self, small_config):
        params = build_network(small_config, seed=0)
        x = np.random.default_rng(0).random((4, 1, 16, 8), dtype=np.float32)
        assert forward_logits(x, params, "train").shape == (4, 4)

    def test_eval_mode_is_pure(self, small_config, rng):
        params = build_network(small_config, seed=0)
        x = rng.random((3, 1, 16, 8), dtype=np.float32)
        a = forward_features(x, params, "eval").data
        stats_before = {(g.group_id, n): s.copy()
                        for g in params.groups() for n, s in g.stats.items()}
        b = forward_features(x, params, "eval").data
        assert np.array_equal(a, b)
        for g in params.groups():
            for n, s in g.stats.items():
                assert np.array_equal(s, stats_before[(g.group_id, n)])

    def test_logits_compose_classifier_on_features(self, small_config, rng):
        params = build_network(small_config, seed=1)
        x = rng.random((4, 1, 16, 8), dtype=np.float32)
        feats = forward_features(x, params, "eval")
        assert np.array_equal(forward_logits(x, params, "eval").data,
                              forward_classifier(feats, params, "eval").data)

    def test_features_ignore_classifier_params(self, small_config, rng):
        params = build_network(small_config, seed=2)
        x = rng.random((3, 1, 16, 8), dtype=np.float32)
        before = forward_features(x, params, "eval").data
        for t in params.classifier.tensors.values():
            t.data += 5.0
        assert np.array_equal(forward_features(x, params, "eval").data, before)

    def test_random_init_loss_near_log_l(self):
        cfg = NetworkConfig()
        rng = np.random.default_rng(123)
        losses = []
        for seed in range(10):
            params = build_network(cfg, seed=seed)
            x = rng.random((32, 1, 32, 16), dtype=np.float32)
            y = one_hot(rng.integers(0, 10, 32), 10)
            losses.append(float(softmax_cross_entropy(
                forward_logits(x, params, "train"), y).data))
        assert abs(np.mean(losses) - math.log(10)) / math.log(10) < 0.15

    def test_shape_mismatch_rejected(self, small_config):
        params = build_network(small_config, seed=0)
        with pytest.raises(ShapeError):
            forward_features(np.zeros((2, 1, 8, 8), dtype=np.float32), params)

    def test_matches_loop_oracle_on_two_block_config(self, rng):
        """Eval forward against a standalone nested-loop implementation."""
        cfg = NetworkConfig(widths=(3, 5), input_shape=(1, 8, 6), embedding_dim=4,
                            num_classes=3, convs_per_block=2, precision="float64")
        params = build_network(cfg, seed=9)
        for g in params.blocks:  # nonzero biases/betas so the propagation is nontrivial
            for name, t in g.tensors.items():
                if name.endswith(("bias", "beta")):
                    t.data += rng.uniform(0.1, 0.5, t.data.shape)
        x = np.zeros((2, 1, 8, 6))
        t = x
        for group, spec in zip(params.blocks, block_specs(cfg)):
            t = block_forward_loops(t, group, spec.stride, cfg.kernel_size,
                                    cfg.leaky_slope, cfg.bn_epsilon)
        expected = t.mean(axis=(2, 3))
        got = forward_features(x, params, "eval").data
        assert np.allclose(got, expected, atol=1e-10)


class TestParameterGroups:
    def test_group_count(self, small_config):
        assert len(parameter_groups(build_network(small_config, 0))) == 6

    def test_partition_disjoint_by_identity(self, small_config):
        params = build_network(small_config, 0)
        seen = set()
        for _, tensors in parameter_groups(params):
            for t in tensors:
                assert id(t) not in seen
                seen.add(id(t))

    def test_partition_exhaustive(self, small_config):
        params = build_network(small_config, 0)
        total = sum(len(ts) for _, ts in parameter_groups(params))
        assert total == len(params.all_tensors())


class TestRebuildClassifier:
    def test_blocks_preserved_head_reinitialized(self, small_config):
        params = build_network(small_config, seed=0)
        block_arrays = [t.data for g in params.blocks for t in g.tensors.values()]
        old_head = {n: t.data.copy() for n, t in params.classifier.tensors.items()}
        rebuilt = rebuild_classifier(params, num_classes=9, seed=1)
        for orig, g in zip(block_arrays,
                           [t.data for g in rebuilt.blocks for t in g.tensors.values()]):
            assert orig is g  # same storage, bit-identical by construction
        assert rebuilt.config.num_classes == 9
        assert rebuilt.classifier.tensors["fc2.weight"].shape[1] == 9
        assert not np.array_equal(rebuilt.classifier.tensors["fc1.weight"].data,
                                  old_head["fc1.weight"])
