"""EmbeddingSequence: the universal model's only input/output currency."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

PAD_TAG = -1


@dataclass
class EmbeddingSequence:
    """Batched [B, L, D] values with padding mask and per-position modality tags.

    ``mask`` is True exactly on real positions; padded positions hold zeros
    and carry tag ``PAD_TAG``.
    """

    values: torch.Tensor      # (B, L, D) float
    mask: torch.Tensor        # (B, L) bool
    tags: torch.Tensor        # (B, L) long

    def __post_init__(self):
        b, l, _ = self.values.shape
        if self.mask.shape != (b, l) or self.tags.shape != (b, l):
            raise ValueError(
                f"mask/tags {tuple(self.mask.shape)}/{tuple(self.tags.shape)} "
                f"do not match values {tuple(self.values.shape)}")

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def lengths(self) -> torch.Tensor:
        return self.mask.long().sum(dim=1)

    def with_values(self, values: torch.Tensor) -> "EmbeddingSequence":
        return replace(self, values=values)

    def zero_padding(self) -> "EmbeddingSequence":
        return self.with_values(self.values * self.mask.unsqueeze(-1).to(self.values.dtype))

    @staticmethod
    def cat(parts: list["EmbeddingSequence"]) -> "EmbeddingSequence":
        return EmbeddingSequence(
            torch.cat([p.values for p in parts], dim=1),
            torch.cat([p.mask for p in parts], dim=1),
            torch.cat([p.tags for p in parts], dim=1),
        )


def pack_ragged(rows: list[torch.Tensor], tags: list[torch.Tensor]) -> EmbeddingSequence:
    """Pad per-example (L_i, D) rows into one batch; masks mark real positions."""
    assert rows, "cannot pack an empty batch"
    dim = rows[0].shape[-1]
    dtype = rows[0].dtype
    max_len = max(r.shape[0] for r in rows)
    b = len(rows)
    values = torch.zeros(b, max_len, dim, dtype=dtype)
    mask = torch.zeros(b, max_len, dtype=torch.bool)
    tag_mat = torch.full((b, max_len), PAD_TAG, dtype=torch.long)
    for i, (row, tag) in enumerate(zip(rows, tags)):
        n = row.shape[0]
        values[i, :n] = row
        mask[i, :n] = True
        tag_mat[i, :n] = tag
    return EmbeddingSequence(values, mask, tag_mat)
