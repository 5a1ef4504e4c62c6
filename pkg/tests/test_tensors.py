import numpy as np
import pytest

from actcache import (
    DegenerateVectorError,
    InvalidConfigError,
    InvalidShapeError,
    InvalidValueError,
    PerturbConfig,
    as_tensor,
    cosine_similarity,
    flip_h,
    round_half_away,
    seeded_perturb,
)
from actcache.errors import ShapeMismatchError


class TestAsTensor:
    def test_accepts_and_normalizes(self):
        t = as_tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.dtype == np.float32
        assert t.flags["C_CONTIGUOUS"]
        assert t.shape == (2, 2)

    def test_rejects_scalar(self):
        with pytest.raises(InvalidShapeError):
            as_tensor(3.0)

    def test_rejects_empty_dim(self):
        with pytest.raises(InvalidShapeError):
            as_tensor(np.zeros((2, 0, 3), np.float32))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(InvalidValueError):
            as_tensor([1.0, bad, 2.0])


class TestFlipH:
    def test_hand_computed_2x2(self):
        # index-arithmetic oracle: out[..., w] == in[..., W-1-w]
        t = as_tensor([[[1.0, 2.0], [3.0, 4.0]]])
        got = flip_h(t)
        expected = np.empty_like(t)
        for c in range(1):
            for y in range(2):
                for x in range(2):
                    expected[c, y, x] = t[c, y, 2 - 1 - x]
        assert np.array_equal(got, expected)
        assert np.array_equal(got[0], [[2.0, 1.0], [4.0, 3.0]])

    def test_involution(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            t = rng.normal(size=(4, 6, 5)).astype(np.float32)
            assert np.array_equal(flip_h(flip_h(t)), t)

    def test_preserves_sums(self):
        rng = np.random.default_rng(4)
        t = rng.normal(size=(3, 8, 8)).astype(np.float32)
        assert flip_h(t).sum() == t.sum()

    def test_symmetric_tensor_unchanged(self):
        row = np.array([1.0, 2.0, 2.0, 1.0], np.float32)
        t = np.tile(row, (3, 4, 1))
        assert np.array_equal(flip_h(t), t)

    def test_rank1_rejected(self):
        with pytest.raises(InvalidShapeError):
            flip_h(np.ones(4, np.float32))


class TestCosineSimilarity:
    def test_hand_computed(self):
        # dot = 2 + 2 + 4 = 8, norms 3 * 3 = 9
        assert cosine_similarity((1, 2, 2), (2, 1, 2)) == pytest.approx(8 / 9, abs=1e-12)

    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            v = rng.normal(size=7)
            assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_axes(self):
        assert cosine_similarity([1, 0, 0], [0, 1, 0]) == 0.0

    def test_positive_scale_invariant(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=5), rng.normal(size=5)
        base = cosine_similarity(a, b)
        assert cosine_similarity(3.5 * a, b) == pytest.approx(base, abs=1e-12)
        assert cosine_similarity(a, 0.01 * b) == pytest.approx(base, abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateVectorError):
            cosine_similarity([0.0, 0.0], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cosine_similarity([1.0, 2.0], [1.0, 2.0, 3.0])


class TestRoundHalfAway:
    @pytest.mark.parametrize(
        "value,expected",
        [(0.5, 1), (1.5, 2), (2.4, 2), (2.5, 3), (-0.5, -1), (-1.5, -2), (25.6, 26), (0.0, 0)],
    )
    def test_cases(self, value, expected):
        assert round_half_away(value) == expected


class TestSeededPerturb:
    def test_zero_config_is_identity(self):
        rng = np.random.default_rng(7)
        t = rng.normal(size=(3, 8, 8)).astype(np.float32)
        out = seeded_perturb(t, PerturbConfig(), seed=11)
        assert np.array_equal(out, t)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        t = rng.normal(size=(3, 16, 16)).astype(np.float32)
        cfg = PerturbConfig(noise_sigma=0.2, blur_radius=1.0, crop_margin=3)
        a = seeded_perturb(t, cfg, seed=42)
        b = seeded_perturb(t, cfg, seed=42)
        assert np.array_equal(a, b)
        c = seeded_perturb(t, cfg, seed=43)
        assert not np.array_equal(a, c)

    def test_shape_preserved(self):
        t = np.random.default_rng(9).normal(size=(4, 10, 12)).astype(np.float32)
        for cfg in (
            PerturbConfig(crop_margin=4),
            PerturbConfig(blur_radius=1.5),
            PerturbConfig(noise_sigma=0.1, blur_radius=0.5, crop_margin=2),
        ):
            assert seeded_perturb(t, cfg, seed=0).shape == t.shape

    def test_noise_mean_statistics(self):
        # RNG statistics oracle: mean of added noise is within 3*sigma/sqrt(n)
        n = 100_000
        sigma = 0.1
        t = np.zeros((1, 250, 400), np.float32)
        out = seeded_perturb(t, PerturbConfig(noise_sigma=sigma), seed=123)
        assert abs(float((out - t).mean())) < 3 * sigma / np.sqrt(n)

    def test_margin_out_of_range(self):
        t = np.zeros((3, 8, 8), np.float32)
        with pytest.raises(InvalidConfigError):
            seeded_perturb(t, PerturbConfig(crop_margin=8), seed=0)

    def test_negative_sigma_rejected(self):
        t = np.zeros((3, 8, 8), np.float32)
        with pytest.raises(InvalidConfigError):
            seeded_perturb(t, PerturbConfig(noise_sigma=-1.0), seed=0)
