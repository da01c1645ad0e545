import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from binkit import classical
from binkit.classical import LocalStats
from oracles import naive_local_stats, otsu_bruteforce


def stats_of(m, s):
    return LocalStats(np.asarray(m, float), np.asarray(s, float), 3)


class TestOtsu:
    def test_bimodal_lowest_tie(self):
        levels = np.array([0] * 10 + [255] * 10, np.uint8).reshape(4, 5)
        assert classical.otsu_threshold(levels) == 0
        np.testing.assert_array_equal(classical.otsu_binarize(levels), levels == 0)

    def test_unit_interval_input(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert classical.otsu_threshold(img) == 0

    def test_constant_image(self):
        levels = np.full((5, 5), 77, np.uint8)
        assert classical.otsu_threshold(levels) == 77
        assert not classical.otsu_binarize(levels).any()

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            levels = rng.integers(0, 256, (12, 12)).astype(np.uint8)
            assert classical.otsu_threshold(levels) == otsu_bruteforce(levels)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.uint8, (6, 6), elements=st.integers(0, 255)))
    def test_matches_bruteforce_property(self, levels):
        if levels.min() == levels.max():
            assert classical.otsu_threshold(levels) == levels.flat[0]
        else:
            assert classical.otsu_threshold(levels) == otsu_bruteforce(levels)

    def test_empty(self):
        with pytest.raises(ValueError):
            classical.otsu_threshold(np.zeros((0, 0), np.uint8))


class TestLocalStats:
    def test_constant(self):
        st_ = classical.local_stats(np.full((9, 11), 42, np.uint8), 5)
        np.testing.assert_array_equal(st_.mean, 42)
        np.testing.assert_array_equal(st_.std, 0)

    def test_checkerboard_interior(self):
        board = (np.indices((7, 7)).sum(axis=0) % 2).astype(np.uint8)
        st_ = classical.local_stats(board, 3)
        # ink pixels see four diagonal ink neighbours (5/9), paper pixels four orthogonal ones (4/9)
        assert st_.mean[3, 3] == pytest.approx(5 / 9 if board[3, 3] else 4 / 9)
        assert st_.mean[3, 4] == pytest.approx(5 / 9 if board[3, 4] else 4 / 9)
        assert {round(v, 12) for v in st_.mean[1:-1, 1:-1].ravel()} == {round(4 / 9, 12), round(5 / 9, 12)}

    @pytest.mark.parametrize("side", [3, 7, 15])
    def test_matches_naive_levels(self, side):
        img = np.random.default_rng(side).integers(0, 256, (30, 41)).astype(np.uint8)
        st_ = classical.local_stats(img, side)
        mean, std = naive_local_stats(img, side)
        assert np.max(np.abs(st_.mean - mean)) < 1e-9
        assert np.max(np.abs(st_.std - std)) < 1e-6

    def test_matches_naive_float(self):
        img = np.random.default_rng(3).random((25, 20))
        st_ = classical.local_stats(img, 9)
        mean, std = naive_local_stats(img, 9)
        assert np.max(np.abs(st_.mean - mean)) < 1e-9
        assert np.max(np.abs(st_.std - std)) < 1e-6

    def test_window_larger_than_image(self):
        img = np.random.default_rng(4).integers(0, 256, (5, 6)).astype(np.uint8)
        st_ = classical.local_stats(img, 15)
        mean, std = naive_local_stats(img, 15)
        assert np.max(np.abs(st_.std - std)) < 1e-6
        assert np.all(st_.std >= 0)

    @pytest.mark.parametrize("side", [0, 1, 2, 4, -3])
    def test_bad_window(self, side):
        with pytest.raises(ValueError):
            classical.local_stats(np.zeros((5, 5), np.uint8), side)


class TestThresholds:
    def test_niblack_formula(self):
        t = classical.threshold_niblack(stats_of([[100.0]], [[50.0]]), -0.2)
        assert t[0, 0] == pytest.approx(90.0)

    def test_niblack_degenerate(self):
        m = np.array([[10.0, 20.0]])
        np.testing.assert_array_equal(classical.threshold_niblack(stats_of(m, [[0, 0]]), -0.2), m)
        np.testing.assert_array_equal(classical.threshold_niblack(stats_of(m, [[5, 9]]), 0.0), m)

    def test_sauvola_formula(self):
        t = classical.threshold_sauvola(stats_of([[100.0]], [[64.0]]), 0.5, 128)
        assert t[0, 0] == pytest.approx(75.0)

    def test_sauvola_collapses(self):
        m = np.array([[100.0, 30.0]])
        np.testing.assert_allclose(classical.threshold_sauvola(stats_of(m, [[128, 128]]), 0.5, 128), m)
        np.testing.assert_allclose(classical.threshold_sauvola(stats_of(m, [[3, 60]]), 0.0, 128), m)

    def test_sauvola_bad_range(self):
        with pytest.raises(ValueError):
            classical.threshold_sauvola(stats_of([[1.0]], [[1.0]]), 0.5, 0)

    def test_wolf_formula(self):
        st_ = stats_of([[120.0, 50.0]], [[30.0, 10.0]])
        img = np.array([[10.0, 200.0]])
        # pixel 0 has s == S (30) and M = 10
        assert classical.threshold_wolf(st_, img, 0.5)[0, 0] == pytest.approx(120.0)

    def test_wolf_collapses(self):
        st_ = stats_of([[10.0, 50.0]], [[30.0, 10.0]])
        img = np.array([[10.0, 60.0]])
        t = classical.threshold_wolf(st_, img, 0.5)
        assert t[0, 0] == pytest.approx(10.0)
        np.testing.assert_allclose(classical.threshold_wolf(st_, img, 0.0), st_.mean)

    def test_wolf_constant_falls_back(self):
        st_ = stats_of([[5.0, 5.0]], [[0.0, 0.0]])
        np.testing.assert_array_equal(classical.threshold_wolf(st_, np.full((1, 2), 5.0), 0.5), st_.mean)

    def test_apply_strict(self):
        img = np.array([[89, 90, 91]])
        t = np.full((1, 3), 90)
        np.testing.assert_array_equal(classical.apply_threshold_map(img, t), [[True, False, False]])
        assert not classical.apply_threshold_map(img, np.zeros((1, 3))).any()

    def test_apply_shape_mismatch(self):
        with pytest.raises(ValueError):
            classical.apply_threshold_map(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 50.0))
    def test_raising_threshold_only_adds_foreground(self, seed, bump):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, (6, 6)).astype(float)
        t = rng.uniform(0, 255, (6, 6))
        p = tuple(rng.integers(0, 6, 2))
        raised = t.copy()
        raised[p] += bump
        before = classical.apply_threshold_map(img, t)
        after = classical.apply_threshold_map(img, raised)
        assert np.all(after >= before)

    def test_k_zero_family_agrees(self):
        img = np.random.default_rng(11).random((40, 40))
        masks = [classical.binarize(img, m, 15, k=0.0) for m in ("niblack", "sauvola", "wolf")]
        np.testing.assert_array_equal(masks[0], masks[1])
        np.testing.assert_array_equal(masks[0], masks[2])

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            classical.binarize(np.zeros((4, 4)), "gatos")

    @pytest.mark.parametrize("method", classical.METHODS)
    def test_dark_strokes_found(self, method):
        img = np.full((40, 40), 0.85)
        img[10:30, 19:22] = 0.1
        mask = classical.binarize(img, method, 15)
        assert mask[20, 20]
        assert not mask[2, 2]
