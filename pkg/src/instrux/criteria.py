"""Training criteria: label-smoothed cross entropy, MSE + stop, and DDPM.

Criteria return ``(loss_sum, n_units)`` so the scheduler can normalize the
accumulated gradient by a constant across an optimization step; ``n_units``
counts supervised positions (tokens or frames).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import torch

from .errors import AllMasked, ShapeMismatch, StepOutOfRange


@dataclass(frozen=True)
class DdpmSchedule:
    """Linear-beta forward noising schedule."""

    steps: int
    beta_start: float = 1e-4
    beta_end: float = 0.02

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.steps, dtype=np.float64)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("schedule needs at least one step")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ValueError("betas must satisfy 0 < start <= end < 1")


@dataclass(frozen=True)
class LabelSmoothedCE:
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class MseWithStop:
    stop_weight: float = 1.0


@dataclass(frozen=True)
class Ddpm:
    schedule: DdpmSchedule = field(default_factory=lambda: DdpmSchedule(1000))
    sample_steps: int | None = None  # ancestral sampling may use fewer steps


CriterionSpec = Union[LabelSmoothedCE, MseWithStop, Ddpm]


def ce_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    loss_mask: torch.Tensor,
    epsilon: float = 0.0,
) -> tuple[torch.Tensor, int, torch.Tensor]:
    """Cross entropy against a smoothed target distribution.

    Per position: ``(1-eps) * nll + eps * mean_j(-log p_j)``; masked positions
    contribute exactly zero.  Returns (sum, count, per-position losses).
    """
    if logits.shape[:-1] != targets.shape or targets.shape != loss_mask.shape:
        raise ShapeMismatch(
            f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)} "
            f"vs mask {tuple(loss_mask.shape)}")
    count = int(loss_mask.sum().item())
    if count == 0:
        raise AllMasked("no supervised positions in this batch")
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    smooth = -logp.mean(dim=-1)
    per_pos = ((1.0 - epsilon) * nll + epsilon * smooth) * loss_mask.to(logp.dtype)
    return per_pos.sum(), count, per_pos


def mse_stop_loss(
    pred_frames: torch.Tensor,
    pred_stop_logits: torch.Tensor,
    target_frames: torch.Tensor,
    frame_mask: torch.Tensor,
    stop_weight: float = 1.0,
) -> tuple[torch.Tensor, int]:
    """Frame MSE plus binary stop cross-entropy (stop target 1 at last frame)."""
    if pred_frames.shape != target_frames.shape:
        raise ShapeMismatch(
            f"pred {tuple(pred_frames.shape)} vs target {tuple(target_frames.shape)}")
    maskf = frame_mask.to(pred_frames.dtype)
    count = int(frame_mask.sum().item())
    if count == 0:
        raise AllMasked("no real frames")
    mse = (((pred_frames - target_frames) ** 2).mean(dim=-1) * maskf).sum()
    # stop target: 1 exactly at each sequence's final real frame
    lengths = frame_mask.long().sum(dim=1)
    stop_target = torch.zeros_like(maskf)
    for b in range(maskf.shape[0]):
        if lengths[b] > 0:
            stop_target[b, lengths[b] - 1] = 1.0
    stop_ce = torch.nn.functional.binary_cross_entropy_with_logits(
        pred_stop_logits, stop_target, reduction="none") * maskf
    return mse + stop_weight * stop_ce.sum(), count


def ddpm_corrupt(
    x0: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    schedule: DdpmSchedule,
) -> torch.Tensor:
    """Forward process sample x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if x0.shape != noise.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} vs noise {tuple(noise.shape)}")
    if int(t.max()) >= schedule.steps or int(t.min()) < 0:
        raise StepOutOfRange(f"t outside [0, {schedule.steps})")
    abar = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)[t]
    while abar.dim() < x0.dim():
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * noise


def ddpm_loss(
    eps_pred: torch.Tensor,
    noise: torch.Tensor,
    frame_mask: torch.Tensor,
) -> tuple[torch.Tensor, int]:
    """MSE between predicted and true noise over real frames."""
    if eps_pred.shape != noise.shape:
        raise ShapeMismatch(f"pred {tuple(eps_pred.shape)} vs noise {tuple(noise.shape)}")
    maskf = frame_mask.to(eps_pred.dtype)
    count = int(frame_mask.sum().item())
    if count == 0:
        raise AllMasked("no real frames")
    per_frame = ((eps_pred - noise) ** 2).mean(dim=-1)
    return (per_frame * maskf).sum(), count


def smoothed_floor(epsilon: float, vocab_size: int) -> float:
    """Entropy of the smoothed target: the infimum of the per-position loss."""
    q_true = (1.0 - epsilon) + epsilon / vocab_size
    q_other = epsilon / vocab_size
    h = -q_true * math.log(q_true)
    if vocab_size > 1 and q_other > 0:
        h += -(vocab_size - 1) * q_other * math.log(q_other)
    return h
