"""The universal computation core: a small encoder-decoder transformer over
embedding sequences, with an optional modality-routed MoE feed-forward in the
encoder.

The model owns no embeddings; adapters feed it ``EmbeddingSequence`` inputs
and read its outputs.  The decoder is strictly causal, padding positions are
inert, and routing (when enabled) is a pure function of each position's
modality tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import DimMismatch, UnroutedModality
from .instruction import AUDIO, BOX, IMAGE, MOTION, STRUCT, TEXT, VIDEO
from .sequence import EmbeddingSequence

ARCH_PRESETS = {
    "tiny": dict(d_model=64, enc_layers=2, dec_layers=2, heads=4, ffn_dim=256),
    "base_toy": dict(d_model=128, enc_layers=4, dec_layers=4, heads=8, ffn_dim=512),
}

BUILTIN_TAGS = {
    "TEXT": TEXT, "IMAGE": IMAGE, "VIDEO": VIDEO, "AUDIO": AUDIO,
    "BOX": BOX, "STRUCT": STRUCT, "MOTION": MOTION,
}


@dataclass
class ModelConfig:
    arch: str = "tiny"
    d_model: int | None = None
    enc_layers: int | None = None
    dec_layers: int | None = None
    heads: int | None = None
    ffn_dim: int | None = None
    dropout: float = 0.0
    encoder_drop_path_rate: float = 0.0
    decoder_drop_path_rate: float = 0.0
    layernorm_position: str = "pre"
    moe_enabled: bool = False
    expert_modalities: tuple[str, ...] = ()
    max_positions: int = 512
    freeze_encoder_embedding: bool = False
    freeze_decoder_embedding: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        preset = ARCH_PRESETS.get(self.arch)
        if preset is None and None in (self.d_model, self.enc_layers,
                                       self.dec_layers, self.heads, self.ffn_dim):
            raise ValueError(f"unknown arch preset '{self.arch}' and no explicit sizes")
        for key, value in (preset or {}).items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.layernorm_position not in ("pre", "post"):
            raise ValueError("layernorm_position must be 'pre' or 'post'")
        if self.moe_enabled and not self.expert_modalities:
            raise ValueError("moe_enabled requires expert_modalities")
        self.expert_modalities = tuple(self.expert_modalities)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return {
            "arch": self.arch, "d_model": self.d_model,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "heads": self.heads, "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
            "encoder_drop_path_rate": self.encoder_drop_path_rate,
            "decoder_drop_path_rate": self.decoder_drop_path_rate,
            "layernorm_position": self.layernorm_position,
            "moe_enabled": self.moe_enabled,
            "expert_modalities": list(self.expert_modalities),
            "max_positions": self.max_positions,
            "freeze_encoder_embedding": self.freeze_encoder_embedding,
            "freeze_decoder_embedding": self.freeze_decoder_embedding,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass(frozen=True)
class ExpertRouter:
    """Deterministic tag -> expert-index map; no learned gating."""

    table: dict[int, int]
    default_expert: int | None = 0

    def route(self, tag: int) -> int:
        idx = self.table.get(tag)
        if idx is None:
            if self.default_expert is None:
                raise UnroutedModality(f"no expert routes modality tag {tag}")
            return self.default_expert
        return idx

    @classmethod
    def from_modalities(cls, modalities: tuple[str, ...],
                        tag_map: dict[str, int] | None = None) -> "ExpertRouter":
        tags = tag_map or BUILTIN_TAGS
        table = {}
        for i, name in enumerate(modalities):
            if name not in tags:
                raise UnroutedModality(f"unknown modality '{name}' in expert list")
            table[tags[name]] = i
        return cls(table, default_expert=0)


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Softmax with True-keep mask; fully masked rows yield exact zeros."""
    filled = scores.masked_fill(~mask, float("-inf"))
    attn = torch.softmax(filled, dim=-1)
    dead = ~mask.any(dim=-1, keepdim=True)
    return torch.where(dead, torch.zeros_like(attn), attn)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, keyval: torch.Tensor,
                mask: torch.Tensor) -> torch.Tensor:
        # mask: (B, Lq, Lk) bool, True = may attend
        b, lq, d = query.shape
        lk = keyval.shape[1]
        q = self.q_proj(query).view(b, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(keyval).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(keyval).view(b, lk, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        attn = masked_softmax(scores, mask.unsqueeze(1))
        attn = self.dropout(attn)
        out = (attn @ v).transpose(1, 2).reshape(b, lq, d)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(torch.nn.functional.gelu(self.fc1(x))))


class MoEFeedForward(nn.Module):
    """Hard-routed per-position experts selected by modality tag."""

    def __init__(self, d_model: int, ffn_dim: int, dropout: float,
                 router: ExpertRouter, n_experts: int):
        super().__init__()
        self.router = router
        self.experts = nn.ModuleList(
            FeedForward(d_model, ffn_dim, dropout) for _ in range(n_experts))

    def forward(self, x: torch.Tensor, tags: torch.Tensor) -> torch.Tensor:
        flat_x = x.reshape(-1, x.shape[-1])
        flat_tags = tags.reshape(-1)
        assignment = torch.empty_like(flat_tags)
        for tag in torch.unique(flat_tags).tolist():
            idx = 0 if tag < 0 else self.router.route(tag)  # pads: any expert, output unused
            assignment[flat_tags == tag] = idx
        out = torch.zeros_like(flat_x)
        for i, expert in enumerate(self.experts):
            sel = assignment == i
            if sel.any():
                out[sel] = expert(flat_x[sel])
        return out.view_as(x)


class DropPath(nn.Module):
    """Stochastic depth on the residual branch; identity in eval mode."""

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.rate <= 0.0:
            return x
        keep = 1.0 - self.rate
        shape = (x.shape[0],) + (1,) * (x.dim() - 1)
        gate = torch.bernoulli(torch.full(shape, keep, dtype=x.dtype, device=x.device))
        return x * gate / keep


class _Block(nn.Module):
    """Shared residual plumbing for encoder and decoder layers."""

    def __init__(self, cfg: ModelConfig, decoder: bool):
        super().__init__()
        d = cfg.d_model
        self.pre_ln = cfg.layernorm_position == "pre"
        self.self_attn = MultiHeadAttention(d, cfg.heads, cfg.dropout)
        self.self_ln = nn.LayerNorm(d)
        self.decoder = decoder
        if decoder:
            self.cross_attn = MultiHeadAttention(d, cfg.heads, cfg.dropout)
            self.cross_ln = nn.LayerNorm(d)
        rate = cfg.decoder_drop_path_rate if decoder else cfg.encoder_drop_path_rate
        self.drop_path = DropPath(rate)
        self.ffn_ln = nn.LayerNorm(d)
        if cfg.moe_enabled and not decoder:
            router = ExpertRouter.from_modalities(cfg.expert_modalities)
            self.ffn = MoEFeedForward(d, cfg.ffn_dim, cfg.dropout, router,
                                      len(cfg.expert_modalities))
        else:
            self.ffn = FeedForward(d, cfg.ffn_dim, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def _residual(self, x, ln, fn):
        if self.pre_ln:
            return x + self.drop_path(self.dropout(fn(ln(x))))
        return ln(x + self.drop_path(self.dropout(fn(x))))

    def forward(self, x, tags, self_mask, memory=None, cross_mask=None):
        x = self._residual(x, self.self_ln, lambda h: self.self_attn(h, h, self_mask))
        if self.decoder:
            x = self._residual(x, self.cross_ln,
                               lambda h: self.cross_attn(h, memory, cross_mask))
        if isinstance(self.ffn, MoEFeedForward):
            x = self._residual(x, self.ffn_ln, lambda h: self.ffn(h, tags))
        else:
            x = self._residual(x, self.ffn_ln, self.ffn)
        return x


class UniversalModel(nn.Module):
    """Encoder-decoder over embedding sequences; see module docstring."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder_layers = nn.ModuleList(
            _Block(cfg, decoder=False) for _ in range(cfg.enc_layers))
        self.decoder_layers = nn.ModuleList(
            _Block(cfg, decoder=True) for _ in range(cfg.dec_layers))
        self.encoder_norm = nn.LayerNorm(cfg.d_model) if (
            cfg.layernorm_position == "pre" and cfg.enc_layers > 0) else None
        self.decoder_norm = nn.LayerNorm(cfg.d_model) if (
            cfg.layernorm_position == "pre" and cfg.dec_layers > 0) else None
        if cfg.dtype == "float64":
            self.double()

    def _check_dim(self, seq: EmbeddingSequence) -> None:
        if seq.dim != self.cfg.d_model:
            raise DimMismatch(f"sequence dim {seq.dim} != model dim {self.cfg.d_model}")

    def encode(self, seq: EmbeddingSequence) -> EmbeddingSequence:
        self._check_dim(seq)
        x = seq.values * seq.mask.unsqueeze(-1).to(seq.values.dtype)
        self_mask = seq.mask[:, None, :].expand(-1, seq.length, -1)
        for layer in self.encoder_layers:
            x = layer(x, seq.tags, self_mask)
            x = x * seq.mask.unsqueeze(-1).to(x.dtype)
        if self.encoder_norm is not None:
            x = self.encoder_norm(x)
            x = x * seq.mask.unsqueeze(-1).to(x.dtype)
        return seq.with_values(x)

    def decode(self, tgt: EmbeddingSequence, memory: EmbeddingSequence) -> EmbeddingSequence:
        self._check_dim(tgt)
        self._check_dim(memory)
        x = tgt.values * tgt.mask.unsqueeze(-1).to(tgt.values.dtype)
        l = tgt.length
        causal = torch.tril(torch.ones(l, l, dtype=torch.bool, device=x.device))
        self_mask = causal[None, :, :] & tgt.mask[:, None, :]
        cross_mask = memory.mask[:, None, :].expand(-1, l, -1)
        for layer in self.decoder_layers:
            x = layer(x, tgt.tags, self_mask, memory=memory.values,
                      cross_mask=cross_mask)
            x = x * tgt.mask.unsqueeze(-1).to(x.dtype)
        if self.decoder_norm is not None:
            x = self.decoder_norm(x)
            x = x * tgt.mask.unsqueeze(-1).to(x.dtype)
        return tgt.with_values(x)

    def count_parameters(self) -> dict:
        """Split core parameter counts into universal vs expert-extra.

        Expert 0 plays the dense FFN's role and counts as universal; the
        remaining experts are modality-specific capacity.
        """
        universal = 0
        experts_extra = 0
        for name, p in self.named_parameters():
            if ".ffn.experts." in name:
                idx = int(name.split(".ffn.experts.")[1].split(".")[0])
                if idx > 0:
                    experts_extra += p.numel()
                    continue
            universal += p.numel()
        return {"universal": universal, "moe_extra_experts": experts_extra}
