"""Token replacement augmentation for cached transformer activations.

Spatial transforms scramble token order through positional embeddings, so
tokens from an augmented input are matched back to the original sequence
by cosine similarity. The worst-matched (most divergent) tokens carry the
real augmentation signal; they are stored and substituted into the
original sequence at training time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AugmentationUnavailableError,
    DegenerateVectorError,
    InvalidConfigError,
    InvalidShapeError,
    ShapeMismatchError,
)
from .tensors import as_tensor, round_half_away


@dataclass(frozen=True)
class TokenMatch:
    """Original token i paired with its most similar augmented token j."""

    original: int
    matched: int
    similarity: float


@dataclass(frozen=True)
class TokenSelection:
    """The lowest-similarity matches of one sample plus their stored tokens.

    ``matches`` is sorted by similarity ascending (ties toward the lower
    original index); ``stored`` rows align with it.
    """

    alpha: float
    token_count: int
    matches: tuple[TokenMatch, ...]
    stored: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TokenAugData:
    """Dataset-level token payload handed to the cache builder.

    Match arrays are (n, m); stored is (n, m, D). Row r of each aligns
    with sample r's selection, similarity ascending.
    """

    alpha: float
    token_count: int
    match_original: np.ndarray
    match_augmented: np.ndarray
    match_similarity: np.ndarray
    stored: np.ndarray


def _checked_token_matrix(t, name: str) -> np.ndarray:
    m = as_tensor(t)
    if m.ndim != 2:
        raise InvalidShapeError(f"{name} must be (N, D), got {m.shape}")
    return m


def match_tokens(t_ori, t_aug) -> list[TokenMatch]:
    """For every original token, the augmented token with highest cosine.

    Ties go to the lowest augmented index. The map need not be injective.
    """
    ori = _checked_token_matrix(t_ori, "original tokens")
    aug = _checked_token_matrix(t_aug, "augmented tokens")
    if ori.shape != aug.shape:
        raise ShapeMismatchError(f"token matrices differ: {ori.shape} vs {aug.shape}")
    o64 = ori.astype(np.float64)
    a64 = aug.astype(np.float64)
    norm_o = np.linalg.norm(o64, axis=1)
    norm_a = np.linalg.norm(a64, axis=1)
    for name, norms in (("original", norm_o), ("augmented", norm_a)):
        bad = np.flatnonzero(norms == 0.0)
        if bad.size:
            raise DegenerateVectorError(f"{name} token {bad[0]} has zero norm")
    sims = (o64 @ a64.T) / np.outer(norm_o, norm_a)
    best = np.argmax(sims, axis=1)  # first maximum = lowest j on ties
    return [
        TokenMatch(original=i, matched=int(best[i]),
                   similarity=min(1.0, max(-1.0, float(sims[i, best[i]]))))
        for i in range(ori.shape[0])
    ]


def select_tokens(matches: Sequence[TokenMatch], alpha: float) -> TokenSelection:
    """Keep the round(alpha * N) matches with lowest similarity, ascending."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must be in [0, 1], got {alpha}")
    n = len(matches)
    m = round_half_away(alpha * n)
    ordered = sorted(matches, key=lambda t: (t.similarity, t.original))
    return TokenSelection(alpha=float(alpha), token_count=n, matches=tuple(ordered[:m]))


def plan_token_augmentation(t_ori, t_aug, alpha: float) -> TokenSelection:
    """Match, select, and gather stored tokens for one sample."""
    aug = _checked_token_matrix(t_aug, "augmented tokens")
    selection = select_tokens(match_tokens(t_ori, t_aug), alpha)
    rows = [m.matched for m in selection.matches]
    stored = np.ascontiguousarray(aug[rows]) if rows else None
    return TokenSelection(
        alpha=selection.alpha, token_count=selection.token_count,
        matches=selection.matches, stored=stored,
    )


def plan_token_augmentation_batch(t_ori_batch, t_aug_batch, alpha: float) -> TokenAugData:
    """Per-sample matching and selection over (n, N, D) batches."""
    ori = np.asarray(t_ori_batch, dtype=np.float32)
    aug = np.asarray(t_aug_batch, dtype=np.float32)
    if ori.shape != aug.shape:
        raise ShapeMismatchError(f"batch shapes differ: {ori.shape} vs {aug.shape}")
    if ori.ndim != 3:
        raise InvalidShapeError(f"expected (n, N, D) batches, got {ori.shape}")
    n, n_token, dim = ori.shape
    m = round_half_away(alpha * n_token)
    mi = np.zeros((n, m), dtype=np.uint32)
    mj = np.zeros((n, m), dtype=np.uint32)
    ms = np.zeros((n, m), dtype=np.float64)
    stored = np.zeros((n, m, dim), dtype=np.float32)
    for r in range(n):
        sel = plan_token_augmentation(ori[r], aug[r], alpha)
        for c, match in enumerate(sel.matches):
            mi[r, c] = match.original
            mj[r, c] = match.matched
            ms[r, c] = match.similarity
        if m:
            stored[r] = sel.stored
    return TokenAugData(
        alpha=float(alpha), token_count=n_token,
        match_original=mi, match_augmented=mj, match_similarity=ms, stored=stored,
    )


def apply_token_augmentation(t_ori, selection: TokenSelection) -> np.ndarray:
    """Replace each selected original row with its stored augmented token."""
    ori = _checked_token_matrix(t_ori, "original tokens")
    if not selection.matches:
        return ori.copy()
    if selection.stored is None:
        raise AugmentationUnavailableError("sample has no stored token payload")
    stored = as_tensor(selection.stored)
    if stored.shape != (len(selection.matches), ori.shape[1]):
        raise ShapeMismatchError(
            f"stored tokens {stored.shape} do not match {len(selection.matches)} "
            f"selected rows of width {ori.shape[1]}"
        )
    out = ori.copy()
    for row, match in enumerate(selection.matches):
        if not 0 <= match.original < ori.shape[0]:
            raise InvalidShapeError(f"match index {match.original} out of range")
        out[match.original] = stored[row]
    return out
