"""Token corruption for masked-language-model training.

Each eligible position (a real, non-special token) is independently
selected with probability ``mask_prob`` (0.15 by default).  Selected
positions are replaced by the mask token 80% of the time, by a random
ordinary token 10% of the time, and kept unchanged 10% of the time.
Targets carry the original id at selected positions and ``IGNORE_INDEX``
everywhere else, so the loss only ever sees selected positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import MASK_ID, NUM_SPECIALS

IGNORE_INDEX = -100


class MaskingError(ValueError):
    """Invalid masking policy."""


@dataclass(frozen=True)
class MaskingPolicy:
    mask_prob: float = 0.15
    mask_token_frac: float = 0.8
    random_token_frac: float = 0.1
    keep_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_prob < 1.0:
            raise MaskingError(f"mask_prob must be in (0, 1), got {self.mask_prob}")
        total = self.mask_token_frac + self.random_token_frac + self.keep_frac
        if abs(total - 1.0) > 1e-9:
            raise MaskingError(f"replacement split sums to {total!r}, expected 1")
        if min(self.mask_token_frac, self.random_token_frac, self.keep_frac) < 0:
            raise MaskingError("replacement fractions must be non-negative")


def apply_masking(
    token_ids: np.ndarray,
    attention_mask: np.ndarray,
    policy: MaskingPolicy,
    vocab_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt a batch and build its MLM targets.

    Returns (corrupted_ids, targets); special tokens and padding are never
    selected.  Random replacements are drawn from the ordinary-token range
    [NUM_SPECIALS, vocab_size).
    """
    if vocab_size <= NUM_SPECIALS:
        raise MaskingError(f"vocab_size {vocab_size} leaves no ordinary tokens")
    token_ids = np.asarray(token_ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=bool)

    eligible = attention_mask & (token_ids >= NUM_SPECIALS)
    selected = eligible & (rng.random(token_ids.shape) < policy.mask_prob)

    action = rng.random(token_ids.shape)
    corrupted = token_ids.copy()
    use_mask = selected & (action < policy.mask_token_frac)
    use_random = (
        selected
        & ~use_mask
        & (action < policy.mask_token_frac + policy.random_token_frac)
    )
    corrupted[use_mask] = MASK_ID
    n_random = int(use_random.sum())
    if n_random:
        corrupted[use_random] = rng.integers(NUM_SPECIALS, vocab_size, size=n_random)

    targets = np.full(token_ids.shape, IGNORE_INDEX, dtype=np.int64)
    targets[selected] = token_ids[selected]
    return corrupted, targets
