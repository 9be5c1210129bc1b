"""Multi-task scheduling: task weighting, gradient accumulation, AdamW, and
the warmup/linear-decay learning-rate schedule.

One optimization step runs every task's micro-batches sequentially (task-id
order), accumulating weighted gradients of unnormalized loss sums; the
accumulated gradient is then scaled by one constant (total supervised tokens
by default, matching ``sentence_avg: false``), clipped, and applied.  Because
the normalizer is constant across the step, splitting a batch into
micro-batches leaves the update unchanged up to float accumulation order.
"""

from __future__ import annotations

import gc
import math
import warnings
import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

import torch

from .errors import EmptyTask, NonFiniteGradient


@dataclass(frozen=True)
class LrSchedule:
    peak: float
    warmup_ratio: float
    max_update: int

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_ratio * self.max_update))


def lr_at(step: int, sched: LrSchedule) -> float:
    """Linear 0 -> peak over warmup, then linear peak -> 0 at max_update."""
    w = sched.warmup_steps
    if step <= w:
        return sched.peak * (step / w) if w > 0 else sched.peak
    span = max(sched.max_update - w, 1)
    return sched.peak * max(sched.max_update - step, 0) / span


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, torch.nn.Parameter],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}

    @torch.no_grad()
    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in '{name}'")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None or not p.requires_grad:
                continue
            g = p.grad
            m = self.m[name].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v = self.v[name].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (v / bc2).sqrt_().add_(self.eps)
            update = (m / bc1) / denom
            if self.weight_decay:
                update = update + self.weight_decay * p
            p.add_(update, alpha=-lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: v.clone() for k, v in self.m.items()},
            "v": {k: v.clone() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k].copy_(state["m"][k])
            self.v[k].copy_(state["v"][k])


@torch.no_grad()
def clip_grad_norm(params: Iterable[torch.nn.Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g.mul_(scale)
    return total


# --- logical schedule ----------------------------------------------------------

@dataclass
class LogicalSchedule:
    """Per-task weights and micro-batching knobs."""

    weights: dict[str, float]
    micro_batch_sizes: dict[str, int] = field(default_factory=dict)
    update_freqs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("task weights must be >= 0")
        if self.weights and not any(w > 0 for w in self.weights.values()):
            raise ValueError("at least one task weight must be positive")


def round_robin_batches(tasks: list, step_index: int = 0) -> Iterator[tuple[str, object]]:
    """One optimization step's micro-batches: task-id order, update_freq each.

    Each task must expose ``name``, ``update_freq``, and ``next_batch()``.
    Exhausted tasks are skipped with a warning (their iterator contract is an
    infinite stream, so this only fires for genuinely empty datasets).
    """
    for task in sorted(tasks, key=lambda t: t.name):
        for _ in range(task.update_freq):
            try:
                batch = task.next_batch()
            except (StopIteration, EmptyTask):
                warnings.warn(f"task '{task.name}' has no more data at step "
                              f"{step_index}; skipped", stacklevel=2)
                break
            yield task.name, batch


@dataclass
class StepResult:
    per_task_loss: dict[str, float]
    micro_losses: list[tuple[str, float]]
    grad_norm: float
    lr: float
    units: int


def optimization_step(
    tasks: list,
    optimizer: AdamW,
    lr: float,
    clip_norm: float = 0.0,
    sentence_avg: bool = False,
    meter: Optional["ActivationMeter"] = None,
) -> StepResult:
    """Forward/backward every task's micro-batches, then one AdamW update.

    Tasks expose ``name``, ``weight``, ``update_freq``, ``next_batch()`` and
    ``forward_loss(batch) -> (loss_sum, units, n_examples)``.
    """
    if not tasks:
        raise EmptyTask("no tasks scheduled")
    active = [t for t in tasks if t.weight > 0.0]
    if not active:
        raise EmptyTask("every task has weight 0")
    total_units = 0
    total_examples = 0
    micro_losses: list[tuple[str, float]] = []
    task_sums: dict[str, list[float]] = {}
    for name, batch in round_robin_batches(active):
        task = next(t for t in active if t.name == name)
        if meter is not None:
            meter.begin_micro()
        loss_sum, units, n_examples = task.forward_loss(batch)
        (task.weight * loss_sum).backward()
        loss_value = float(loss_sum.detach()) / max(units, 1)
        micro_losses.append((name, loss_value))
        task_sums.setdefault(name, []).append(loss_value)
        total_units += units
        total_examples += n_examples
        del loss_sum
        if meter is not None:
            meter.end_micro()
    denom = total_examples if sentence_avg else total_units
    denom = max(denom, 1)
    with torch.no_grad():
        for p in optimizer.params.values():
            if p.grad is not None:
                p.grad.div_(denom)
    grad_norm = clip_grad_norm(optimizer.params.values(), clip_norm)
    optimizer.step(lr)
    optimizer.zero_grad()
    per_task = {name: sum(vals) / len(vals) for name, vals in task_sums.items()}
    return StepResult(per_task, micro_losses, grad_norm, lr, total_units)


# --- activation accounting -------------------------------------------------------

class _Token:
    __slots__ = ("__weakref__",)


class ActivationMeter:
    """Counts live saved-for-backward activation elements.

    Enter the context to install ``saved_tensors_hooks``; every tensor the
    autograd graph saves increments the counter and decrements it when that
    graph slot is released.  ``step_peak`` is the high-water mark since the
    last ``reset``; ``micro_peaks`` records each micro-batch's own peak.
    """

    def __init__(self):
        self.current = 0
        self.step_peak = 0
        self.micro_peaks: list[int] = []
        self._micro_start_peak = 0
        self._ctx = None

    def _dec(self, size: int) -> None:
        self.current -= size

    def _pack(self, tensor: torch.Tensor):
        size = tensor.numel()
        self.current += size
        self.step_peak = max(self.step_peak, self.current)
        self._micro_peak = max(getattr(self, "_micro_peak", 0), self.current)
        token = _Token()
        weakref.finalize(token, self._dec, size)
        return (tensor, token)

    @staticmethod
    def _unpack(packed):
        return packed[0]

    def __enter__(self) -> "ActivationMeter":
        self._ctx = torch.autograd.graph.saved_tensors_hooks(self._pack, self._unpack)
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc) -> None:
        self._ctx.__exit__(*exc)
        self._ctx = None

    def begin_micro(self) -> None:
        gc.collect()
        self._micro_peak = self.current

    def end_micro(self) -> None:
        gc.collect()
        self.micro_peaks.append(self._micro_peak)

    def reset(self) -> None:
        gc.collect()
        self.step_peak = self.current
        self.micro_peaks = []
