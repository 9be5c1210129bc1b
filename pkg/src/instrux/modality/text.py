"""Text preprocessing: lossless byte tokenization plus mask/noise corruption."""

from __future__ import annotations

import numpy as np

from ..vocab import MASK, NUM_SPECIALS, ByteVocab


def text_tokenize(text: str, vocab: ByteVocab, max_length: int | None = None) -> list[int]:
    ids = vocab.tokenize(text)
    if max_length is not None:
        ids = ids[:max_length]
    return ids


def text_detokenize(ids, vocab: ByteVocab) -> str:
    return vocab.detokenize(list(ids))


def apply_text_mask(tokens: list[int], mask_ratio: float, rng: np.random.Generator) -> list[int]:
    """Replace a without-replacement sample of positions with the MASK id."""
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError(f"mask_ratio {mask_ratio} outside [0, 1]")
    n = len(tokens)
    if n == 0 or mask_ratio == 0.0:
        return list(tokens)
    k = int(rng.binomial(n, mask_ratio)) if mask_ratio < 1.0 else n
    out = list(tokens)
    for pos in rng.choice(n, size=k, replace=False):
        out[pos] = MASK
    return out


def apply_text_noise(tokens: list[int], noise_ratio: float, rng: np.random.Generator,
                     vocab: ByteVocab) -> list[int]:
    """Replace tokens uniformly over the non-special vocabulary."""
    if not 0.0 <= noise_ratio <= 1.0:
        raise ValueError(f"noise_ratio {noise_ratio} outside [0, 1]")
    n = len(tokens)
    if n == 0 or noise_ratio == 0.0:
        return list(tokens)
    k = int(rng.binomial(n, noise_ratio)) if noise_ratio < 1.0 else n
    out = list(tokens)
    for pos in rng.choice(n, size=k, replace=False):
        out[pos] = int(rng.integers(NUM_SPECIALS, vocab.size))
    return out
