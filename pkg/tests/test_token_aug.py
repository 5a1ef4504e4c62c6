import numpy as np
import pytest

from actcache import (
    AugmentationUnavailableError,
    DegenerateVectorError,
    InvalidConfigError,
    TokenMatch,
    TokenSelection,
    apply_token_augmentation,
    match_tokens,
    plan_token_augmentation,
    select_tokens,
)
from actcache.errors import ShapeMismatchError
from actcache.tensors import round_half_away


def _brute_force_matches(t_ori, t_aug):
    """Exhaustive N^2 oracle using the scalar cosine formula."""
    n = t_ori.shape[0]
    out = []
    for i in range(n):
        best_j, best_s = None, None
        for j in range(n):
            a = t_ori[i].astype(np.float64)
            b = t_aug[j].astype(np.float64)
            s = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
            if best_s is None or s > best_s:
                best_j, best_s = j, s
        out.append((i, best_j, best_s))
    return out


class TestMatchTokens:
    def test_identity_matching(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(6, 5)).astype(np.float32)
        matches = match_tokens(t, t)
        for m in matches:
            assert m.matched == m.original
            assert m.similarity == pytest.approx(1.0, abs=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        t_ori = rng.normal(size=(5, 4)).astype(np.float32)
        t_aug = rng.normal(size=(5, 4)).astype(np.float32)
        base = [(m.original, m.matched) for m in match_tokens(t_ori, t_aug)]
        scaled = t_aug.copy()
        scaled[2] *= 4.0
        scaled[4] *= 0.25
        rescaled = [(m.original, m.matched) for m in match_tokens(t_ori, scaled)]
        assert base == rescaled

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            t_ori = rng.normal(size=(8, 4)).astype(np.float32)
            t_aug = rng.normal(size=(8, 4)).astype(np.float32)
            got = match_tokens(t_ori, t_aug)
            expected = _brute_force_matches(t_ori, t_aug)
            for m, (i, j, s) in zip(got, expected):
                assert (m.original, m.matched) == (i, j)
                assert m.similarity == pytest.approx(s, abs=1e-12)

    def test_every_token_matched(self):
        rng = np.random.default_rng(3)
        t_ori = rng.normal(size=(9, 6)).astype(np.float32)
        t_aug = rng.normal(size=(9, 6)).astype(np.float32)
        matches = match_tokens(t_ori, t_aug)
        assert [m.original for m in matches] == list(range(9))

    def test_zero_norm_token_named(self):
        t = np.ones((4, 3), np.float32)
        bad = t.copy()
        bad[2] = 0.0
        with pytest.raises(DegenerateVectorError, match="2"):
            match_tokens(t, bad)
        with pytest.raises(DegenerateVectorError):
            match_tokens(bad, t)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            match_tokens(np.ones((4, 3), np.float32), np.ones((5, 3), np.float32))


class TestSelectTokens:
    def _matches(self, sims):
        return [TokenMatch(i, i, s) for i, s in enumerate(sims)]

    def test_zero_alpha(self):
        sel = select_tokens(self._matches([0.5, 0.1, 0.9]), 0.0)
        assert sel.matches == ()

    def test_full_alpha(self):
        sel = select_tokens(self._matches([0.5, 0.1, 0.9]), 1.0)
        assert len(sel.matches) == 3
        assert [m.similarity for m in sel.matches] == [0.1, 0.5, 0.9]

    def test_quarter_of_eight(self):
        sims = [0.9, 0.1, 0.8, 0.3, 0.7, 0.2, 0.6, 0.5]
        sel = select_tokens(self._matches(sims), 0.25)
        assert [m.original for m in sel.matches] == [1, 5]

    def test_ascending_with_index_ties(self):
        matches = [TokenMatch(0, 1, 0.5), TokenMatch(1, 2, 0.1), TokenMatch(2, 0, 0.1)]
        sel = select_tokens(matches, 1.0)
        assert [m.original for m in sel.matches] == [1, 2, 0]

    @pytest.mark.parametrize("alpha", [0.0, 0.1, 0.25, 0.33, 0.5, 0.75, 1.0])
    @pytest.mark.parametrize("n", [1, 4, 8, 16, 33])
    def test_cardinality_grid(self, alpha, n):
        matches = self._matches(list(np.linspace(0, 1, n)))
        sel = select_tokens(matches, alpha)
        assert len(sel.matches) == round_half_away(alpha * n)

    def test_alpha_out_of_range(self):
        with pytest.raises(InvalidConfigError):
            select_tokens(self._matches([0.5]), -0.1)


class TestApplyTokenAugmentation:
    def test_empty_selection_noop(self):
        rng = np.random.default_rng(4)
        t = rng.normal(size=(5, 3)).astype(np.float32)
        sel = TokenSelection(alpha=0.0, token_count=5, matches=())
        assert np.array_equal(apply_token_augmentation(t, sel), t)

    def test_full_alpha_identity_augmentation_is_fixed_point(self):
        rng = np.random.default_rng(5)
        t = rng.normal(size=(6, 4)).astype(np.float32)
        sel = plan_token_augmentation(t, t, alpha=1.0)
        assert np.array_equal(apply_token_augmentation(t, sel), t)

    def test_exactly_selected_rows_change(self):
        rng = np.random.default_rng(6)
        t_ori = rng.normal(size=(8, 4)).astype(np.float32)
        t_aug = rng.normal(size=(8, 4)).astype(np.float32)
        sel = plan_token_augmentation(t_ori, t_aug, alpha=0.25)
        out = apply_token_augmentation(t_ori, sel)
        selected = {m.original for m in sel.matches}
        for i in range(8):
            if i in selected:
                match = next(m for m in sel.matches if m.original == i)
                assert np.array_equal(out[i], t_aug[match.matched])
            else:
                assert np.array_equal(out[i], t_ori[i])

    def test_missing_payload_raises(self):
        t = np.ones((4, 3), np.float32)
        sel = TokenSelection(alpha=0.5, token_count=4, matches=(TokenMatch(0, 1, 0.2),))
        with pytest.raises(AugmentationUnavailableError):
            apply_token_augmentation(t, sel)


class TestPlanTokenAugmentation:
    def test_selection_matches_pipeline(self):
        rng = np.random.default_rng(7)
        t_ori = rng.normal(size=(8, 4)).astype(np.float32)
        t_aug = rng.normal(size=(8, 4)).astype(np.float32)
        sel = plan_token_augmentation(t_ori, t_aug, alpha=0.5)
        reference = select_tokens(match_tokens(t_ori, t_aug), 0.5)
        assert sel.matches == reference.matches
        assert sel.stored.shape == (4, 4)
        for row, m in enumerate(sel.matches):
            assert np.array_equal(sel.stored[row], t_aug[m.matched])
