import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdrop.errors import ConfigError, ShapeError
from pdrop.numkernel import RngState
from pdrop.pruner import (
    PyramidDrop,
    RandomDrop,
    SimilarityScores,
    SingleEarlyDrop,
    UniformCompression,
    Vanilla,
    apply_strategy,
    build_schedule,
    decide,
    rank_image_tokens,
    single_drop_schedule,
)


class TestBuildSchedule:
    def test_paper_default_geometry(self):
        s = build_schedule(32, 4, 0.5, 576)
        assert s.boundary_layers == (8, 16, 24)
        assert s.stage_token_counts == (576, 288, 144, 72)
        assert s.stage_layer_counts == (8, 8, 8, 8)

    def test_low_ratio_counts(self):
        s = build_schedule(32, 4, 0.4, 2880)
        assert s.stage_token_counts == (2880, 1152, 460, 184)

    def test_single_stage_is_vanilla(self):
        s = build_schedule(32, 1, 0.5, 576)
        assert s.boundary_layers == ()
        assert s.stage_token_counts == (576,)

    def test_remainder_layers_go_to_last_stage(self):
        s = build_schedule(10, 3, 0.5, 64)
        assert s.stage_layer_counts == (3, 3, 4)
        assert s.boundary_layers == (3, 6)

    def test_bad_params(self):
        with pytest.raises(ConfigError):
            build_schedule(4, 5, 0.5, 10)
        with pytest.raises(ConfigError):
            build_schedule(8, 2, 0.0, 10)
        with pytest.raises(ConfigError):
            build_schedule(8, 2, 1.5, 10)
        with pytest.raises(ConfigError):
            build_schedule(8, 2, 0.5, -1)

    def test_ratio_robust_to_float_noise(self):
        # 0.4 * 345 must not ceil to 139 through binary representation
        s = build_schedule(8, 2, 0.6, 345)
        assert s.stage_token_counts == (345, 207)

    @settings(max_examples=300)
    @given(st.integers(1, 48), st.data())
    def test_ceiling_drop_recurrence(self, num_layers, data):
        stages = data.draw(st.integers(1, num_layers))
        ratio = data.draw(st.floats(0.05, 1.0))
        v0 = data.draw(st.integers(0, 4000))
        s = build_schedule(num_layers, stages, ratio, v0)
        assert sum(s.stage_layer_counts) == num_layers
        assert s.stage_token_counts[0] == v0
        frac = Fraction(ratio).limit_denominator(1_000_000)
        for a, b in zip(s.stage_token_counts, s.stage_token_counts[1:]):
            assert b == a - math.ceil((1 - frac) * a)
            assert b <= a
        assert all(x < y for x, y in zip(s.boundary_layers, s.boundary_layers[1:]))
        assert all(b < num_layers for b in s.boundary_layers)


class TestRanking:
    def test_single_head_unit_dim(self):
        scores = rank_image_tokens(np.array([[1.0]]), np.array([[[2.0], [0.0], [-1.0]]]), 1)
        assert np.allclose(scores.values, [2.0, 0.0, -1.0])

    def test_head_averaging(self):
        q = np.array([[1.0], [1.0]])
        k = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
        assert np.allclose(rank_image_tokens(q, k, 1).values, [0.5, 0.5])

    def test_scale_by_sqrt_head_dim(self):
        q = np.array([[1.0, 1.0, 1.0, 1.0]])
        k = np.array([[[1.0, 1.0, 1.0, 1.0]]])
        assert rank_image_tokens(q, k, 4).values[0] == pytest.approx(2.0)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            rank_image_tokens(np.zeros((1, 4)), np.zeros((2, 3, 4)), 4)
        with pytest.raises(ShapeError):
            rank_image_tokens(np.zeros((1, 4)), np.zeros((1, 3, 2)), 4)


class TestDecide:
    def test_top2_of_four(self):
        s = build_schedule(4, 2, 0.5, 4)
        d = decide(SimilarityScores(np.array([0.9, 0.1, 0.8, 0.2]), 2, np.arange(4)), s, 0)
        assert list(d.kept) == [0, 2]
        assert list(d.dropped) == [1, 3]

    def test_keep_all_ratio(self):
        s = build_schedule(4, 2, 1.0, 4)
        d = decide(SimilarityScores(np.zeros(4), 2, np.arange(4)), s, 0)
        assert list(d.kept) == [0, 1, 2, 3]
        assert d.dropped.size == 0

    def test_all_equal_scores_keep_lowest_positions(self):
        s = build_schedule(32, 4, 0.5, 576)
        d = decide(SimilarityScores(np.zeros(576), 8, np.arange(576)), s, 0)
        assert list(d.kept) == list(range(288))

    def test_stage_out_of_range(self):
        s = build_schedule(8, 2, 0.5, 4)
        with pytest.raises(ConfigError):
            decide(SimilarityScores(np.zeros(4), 4, np.arange(4)), s, 1)

    def test_score_count_mismatch(self):
        s = build_schedule(8, 2, 0.5, 4)
        with pytest.raises(ConfigError):
            decide(SimilarityScores(np.zeros(3), 4, np.arange(3)), s, 0)

    def test_permutation_equivariance_bruteforce(self):
        rng = RngState(17)
        for v0 in range(2, 7):
            schedule = build_schedule(4, 2, 0.5, v0)
            scores = rng.uniforms(v0)  # distinct with prob 1
            base = set(decide(SimilarityScores(scores, 2, np.arange(v0)), schedule, 0).kept.tolist())
            for perm in itertools.permutations(range(v0)):
                perm = np.array(perm)
                permuted = decide(
                    SimilarityScores(scores[perm], 2, np.arange(v0)[perm]), schedule, 0
                )
                assert set(permuted.kept.tolist()) == base
                # relabeling positions by the permutation maps the kept set
                relabeled = decide(
                    SimilarityScores(scores, 2, perm), schedule, 0
                )
                assert set(relabeled.kept.tolist()) == {int(perm[i]) for i in base}

    def test_monotone_ranking_invariance(self):
        rng = RngState(23)
        schedule = build_schedule(4, 2, 0.5, 6)
        scores = rng.normals(6)
        base = decide(SimilarityScores(scores, 2, np.arange(6)), schedule, 0)
        for f in (np.exp, lambda x: 3 * x + 7, np.tanh, lambda x: x**3):
            mapped = decide(SimilarityScores(f(scores), 2, np.arange(6)), schedule, 0)
            assert np.array_equal(mapped.kept, base.kept)


class TestApplyStrategy:
    def test_single_early_drop_counts(self):
        counts = apply_strategy(SingleEarlyDrop(drop_layer=2, keep_ratio=0.5), 32, 576)
        assert list(counts[:2]) == [576, 576]
        assert set(counts[2:]) == {288}
        assert counts.mean() == pytest.approx(306.0)

    def test_pyramid_average_tokens(self):
        counts = apply_strategy(PyramidDrop(stages=4, keep_ratio=0.5), 32, 576)
        assert counts.mean() == pytest.approx(270.0)

    def test_vanilla_constant(self):
        counts = apply_strategy(Vanilla(), 32, 576)
        assert set(counts) == {576} and counts.mean() == 576

    def test_uniform_constant(self):
        assert set(apply_strategy(UniformCompression(288), 32, 576)) == {288}

    def test_random_matches_pyramid_counts(self):
        a = apply_strategy(RandomDrop(stages=4, keep_ratio=0.5, seed=9), 32, 576)
        b = apply_strategy(PyramidDrop(stages=4, keep_ratio=0.5), 32, 576)
        assert np.array_equal(a, b)

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            apply_strategy(SingleEarlyDrop(drop_layer=32, keep_ratio=0.5), 32, 576)
        with pytest.raises(ConfigError):
            apply_strategy(SingleEarlyDrop(drop_layer=2, keep_ratio=1.5), 32, 576)
        with pytest.raises(ConfigError):
            apply_strategy(UniformCompression(-1), 32, 576)


def test_single_drop_schedule_validation():
    s = single_drop_schedule(8, 2, 8, 16)
    assert s.boundary_layers == (2,)
    assert s.stage_token_counts == (16, 8)
    with pytest.raises(ConfigError):
        single_drop_schedule(8, 8, 4, 16)
    with pytest.raises(ConfigError):
        single_drop_schedule(8, 2, 17, 16)


def test_schedule_json_dump():
    s = build_schedule(32, 4, 0.5, 576)
    obj = s.to_json()
    assert obj == {
        "boundaries": [8, 16, 24],
        "stage_layers": [8, 8, 8, 8],
        "stage_tokens": [576, 288, 144, 72],
        "lambda": 0.5,
        "stages": 4,
    }
