"""Trainable modality-specific IO adapters.

Adapters map processed items into embedding sequences and model outputs back
into modality targets.  Parameters are shared per adapter id (one text table
serves every TEXT/STRUCT slot in every task, tied across encoder input,
decoder input, and decoder output), and ids never referenced by a compiled
plan own no parameters at all.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional

import torch
from torch import nn

from .criteria import Ddpm
from .errors import DimMismatch, IdOutOfRange, MissingAdapter, StepOutOfRange
from .model import ModelConfig
from .plan import TaskPlan
from .sequence import EmbeddingSequence
from .vocab import NUM_SPECIALS

FBANK_DIM = 80
TEXT_VOCAB_SIZE = NUM_SPECIALS + 256
IMAGE_CODE_VOCAB_SIZE = NUM_SPECIALS + 256


class TokenEmbedding(nn.Module):
    """Embedding table tied with the output projection."""

    def __init__(self, vocab_size: int, d_model: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.weight = nn.Parameter(torch.empty(vocab_size, d_model))
        nn.init.normal_(self.weight, std=0.02)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.max()) >= self.vocab_size or int(ids.min()) < 0):
            raise IdOutOfRange(
                f"token id outside embedding table of size {self.vocab_size}")
        return nn.functional.embedding(ids, self.weight)

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        if hidden.shape[-1] != self.weight.shape[1]:
            raise DimMismatch(
                f"hidden dim {hidden.shape[-1]} != table dim {self.weight.shape[1]}")
        return hidden @ self.weight.t()


class FeatureProjection(nn.Module):
    """Per-frame affine map into the model dimension (MOTION-style input)."""

    def __init__(self, d_in: int, d_model: int, d_out: int | None = None):
        super().__init__()
        self.d_in = d_in
        self.in_proj = nn.Linear(d_in, d_model)
        self.out_proj = nn.Linear(d_model, d_out) if d_out is not None else None

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[-1] != self.d_in:
            raise DimMismatch(f"feature dim {feats.shape[-1]} != expected {self.d_in}")
        return self.in_proj(feats)

    def output(self, hidden: torch.Tensor) -> torch.Tensor:
        assert self.out_proj is not None
        return self.out_proj(hidden)


class ImagePatchAdapter(FeatureProjection):
    """Patch projection plus learned 2D grid embeddings.

    Patches arrive in row-major order; each position gets row and column
    embeddings so spatial layout survives the flattening.  Sequences longer
    than one grid (video frames) reuse the grid per frame and add a frame
    embedding.
    """

    def __init__(self, d_in: int, d_model: int, grid_h: int, grid_w: int,
                 max_frames: int = 8):
        super().__init__(d_in, d_model)
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.row_embed = nn.Parameter(torch.empty(grid_h, d_model))
        self.col_embed = nn.Parameter(torch.empty(grid_w, d_model))
        self.frame_embed = nn.Parameter(torch.empty(max_frames, d_model))
        for p in (self.row_embed, self.col_embed, self.frame_embed):
            nn.init.normal_(p, std=0.02)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        out = super().forward(feats)
        n = out.shape[1]
        per_frame = self.grid_h * self.grid_w
        pos = torch.arange(n)
        frame = torch.clamp(pos // per_frame, max=self.frame_embed.shape[0] - 1)
        within = pos % per_frame
        rows = within // self.grid_w
        cols = within % self.grid_w
        grid = self.row_embed[rows] + self.col_embed[cols] + self.frame_embed[frame]
        return out + grid.unsqueeze(0).to(out.dtype)


class AudioEncoderAdapter(nn.Module):
    """Two stride-2 convolutions over time, then projection: L -> ceil(L/4)."""

    def __init__(self, n_mels: int, d_model: int):
        super().__init__()
        self.n_mels = n_mels
        self.conv1 = nn.Conv1d(n_mels, d_model, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv1d(d_model, d_model, kernel_size=3, stride=2, padding=1)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        # feats: (B, L, n_mels) -> (B, ceil(L/4), d_model)
        if feats.shape[-1] != self.n_mels:
            raise DimMismatch(f"fbank dim {feats.shape[-1]} != {self.n_mels}")
        x = feats.transpose(1, 2)
        x = torch.nn.functional.gelu(self.conv1(x))
        x = torch.nn.functional.gelu(self.conv2(x))
        return self.proj(x.transpose(1, 2))

    @staticmethod
    def out_length(length: int) -> int:
        return math.ceil(math.ceil(length / 2) / 2)


class AudioTargetAdapter(nn.Module):
    """Teacher-forced fbank decoder IO: frame in/out projections plus stop head."""

    def __init__(self, n_mels: int, d_model: int):
        super().__init__()
        self.n_mels = n_mels
        self.in_proj = nn.Linear(n_mels, d_model)
        self.out_proj = nn.Linear(d_model, n_mels)
        self.stop_head = nn.Linear(d_model, 1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.shape[-1] != self.n_mels:
            raise DimMismatch(f"fbank dim {frames.shape[-1]} != {self.n_mels}")
        return self.in_proj(frames)

    def output(self, hidden: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.out_proj(hidden), self.stop_head(hidden).squeeze(-1)


class PromptAdapter(nn.Module):
    """Learnable prefix vectors contributing ``length`` positions per example."""

    def __init__(self, length: int, d_model: int):
        super().__init__()
        self.length = length
        self.embeddings = nn.Parameter(torch.empty(length, d_model))
        nn.init.normal_(self.embeddings, std=0.02)

    def forward(self, batch_size: int) -> torch.Tensor:
        return self.embeddings.unsqueeze(0).expand(batch_size, -1, -1)


class PositionEmbedding(nn.Module):
    def __init__(self, max_positions: int, d_model: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(max_positions, d_model))
        nn.init.normal_(self.weight, std=0.02)

    def forward(self, length: int) -> torch.Tensor:
        if length > self.weight.shape[0]:
            raise DimMismatch(
                f"sequence length {length} exceeds max positions {self.weight.shape[0]}")
        return self.weight[:length]


class StepEmbedding(nn.Module):
    """One diffusion-step table shared by every DDPM-criterion task."""

    def __init__(self, steps: int, d_model: int):
        super().__init__()
        self.steps = steps
        self.weight = nn.Parameter(torch.empty(steps, d_model))
        nn.init.normal_(self.weight, std=0.02)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if int(t.max()) >= self.steps or int(t.min()) < 0:
            raise StepOutOfRange(f"diffusion step outside [0, {self.steps})")
        return self.weight[t]


class AdapterRegistry(nn.Module):
    """Adapter blocks keyed by id; only lazily-initialized ids own parameters."""

    def __init__(self, model_cfg: ModelConfig):
        super().__init__()
        self.cfg = model_cfg
        self.blocks = nn.ModuleDict()

    def __contains__(self, adapter_id: str) -> bool:
        return adapter_id in self.blocks

    def get(self, adapter_id: str) -> nn.Module:
        if adapter_id not in self.blocks:
            raise MissingAdapter(
                f"adapter '{adapter_id}' was never initialized (trained); "
                f"available: {sorted(self.blocks)}")
        return self.blocks[adapter_id]

    def initialized_ids(self) -> list[str]:
        return sorted(self.blocks)

    def _build(self, adapter_id: str, plans: list[TaskPlan]) -> nn.Module:
        d = self.cfg.d_model

        def slot_params(aid: str) -> dict:
            for plan in plans:
                for slot in plan.slots():
                    candidates = [slot] + list(slot.interleaved or ())
                    for s in candidates:
                        if s.adapter == aid:
                            return s.params
            return {}

        if adapter_id == "text_embed":
            return TokenEmbedding(TEXT_VOCAB_SIZE, d)
        if adapter_id == "image_code_embed":
            return TokenEmbedding(IMAGE_CODE_VOCAB_SIZE, d)
        if adapter_id == "box_embed":
            params = slot_params(adapter_id)
            num_bins = int(params.get("num_bins", 1000))
            return TokenEmbedding(NUM_SPECIALS + num_bins, d)
        if adapter_id in ("image_patch_proj", "video_proj"):
            params = slot_params(adapter_id)
            patch = int(params.get("patch_size", 8))
            resolution = int(params.get("patch_image_size",
                                        params.get("resolution", 64)))
            grid = max(resolution // patch, 1)
            return ImagePatchAdapter(patch * patch * 3, d, grid, grid)
        if adapter_id == "audio_enc":
            return AudioEncoderAdapter(FBANK_DIM, d)
        if adapter_id == "audio_tgt_fbank":
            return AudioTargetAdapter(FBANK_DIM, d)
        if adapter_id == "motion_proj":
            params = slot_params(adapter_id)
            width = int(params.get("width", 12))
            return FeatureProjection(width, d, d_out=width)
        if adapter_id.startswith("prompt_"):
            params = slot_params(adapter_id)
            return PromptAdapter(int(params.get("len", 1)), d)
        if adapter_id == "pos_embed":
            return PositionEmbedding(self.cfg.max_positions, d)
        if adapter_id == "ddpm_step":
            steps = 1000
            for plan in plans:
                if isinstance(plan.criterion, Ddpm):
                    steps = plan.criterion.schedule.steps
            return StepEmbedding(steps, d)
        raise MissingAdapter(f"no constructor for adapter id '{adapter_id}'")

    def lazy_init(self, plans: Iterable[TaskPlan]) -> "AdapterRegistry":
        """Initialize exactly the adapters the given plans reference."""
        plans = list(plans)
        wanted: set[str] = set()
        for plan in plans:
            wanted |= plan.adapter_ids()
        if plans:
            wanted.add("pos_embed")
        if any(isinstance(p.criterion, Ddpm) for p in plans):
            wanted.add("ddpm_step")
        for adapter_id in sorted(wanted):
            if adapter_id not in self.blocks:
                block = self._build(adapter_id, plans)
                if self.cfg.dtype == "float64":
                    block.double()
                self.blocks[adapter_id] = block
        if self.cfg.freeze_encoder_embedding and self.cfg.freeze_decoder_embedding:
            for aid, block in self.blocks.items():
                if isinstance(block, TokenEmbedding):
                    block.weight.requires_grad_(False)
        return self

    def count_parameters(self) -> dict[str, int]:
        out = {}
        for aid, block in self.blocks.items():
            out[aid] = sum(p.numel() for p in block.parameters())
        return out


# --- spec-level operations ---------------------------------------------------

def embed_tokens(ids: torch.Tensor, mask: torch.Tensor, table: TokenEmbedding,
                 tag: int) -> EmbeddingSequence:
    """Token ids -> embedding rows; padded positions carry zeros."""
    values = table.embed(ids) * mask.unsqueeze(-1).to(table.weight.dtype)
    tags = torch.where(mask, torch.full_like(ids, tag), torch.full_like(ids, -1))
    return EmbeddingSequence(values, mask, tags)


def project_features(feats: torch.Tensor, mask: torch.Tensor, adapter: nn.Module,
                     tag: int) -> EmbeddingSequence:
    """Feature frames -> embeddings; audio adapters also downsample the mask."""
    if isinstance(adapter, AudioEncoderAdapter):
        values = adapter(feats)
        lengths = mask.long().sum(dim=1)
        new_len = values.shape[1]
        new_mask = torch.zeros(feats.shape[0], new_len, dtype=torch.bool,
                               device=feats.device)
        for b in range(feats.shape[0]):
            new_mask[b, :AudioEncoderAdapter.out_length(int(lengths[b]))] = True
        mask = new_mask
    else:
        values = adapter(feats)
    values = values * mask.unsqueeze(-1).to(values.dtype)
    tags = torch.where(mask, torch.full(mask.shape, tag, dtype=torch.long),
                       torch.full(mask.shape, -1, dtype=torch.long))
    return EmbeddingSequence(values, mask, tags)


def output_logits(hidden: torch.Tensor, table: TokenEmbedding) -> torch.Tensor:
    return table.logits(hidden)


def add_ddpm_step_embedding(seq: EmbeddingSequence, t: torch.Tensor,
                            step_table: StepEmbedding) -> EmbeddingSequence:
    """Broadcast the per-example step embedding over all positions."""
    emb = step_table(t)  # (B, D)
    values = seq.values + emb.unsqueeze(1)
    values = values * seq.mask.unsqueeze(-1).to(values.dtype)
    return seq.with_values(values)
