"""Toy multi-task benchmark: joint training with threshold-based early stop.

Used by the experiment scripts and the acceptance suite to show one model
learning heterogeneous tasks (the system's end-to-end claim) and to compare
dense vs modality-routed MoE cores under identical protocols.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import torch

from .config import TaskConfig, TrainerConfig
from .instruction import SlotTypeRegistry, default_registry
from .executor import Executor
from .model import ModelConfig
from .scheduler import AdamW, LrSchedule, lr_at, optimization_step
from .system import MultiModalModel
from .train import TaskRuntime, evaluate


@dataclass
class MixtureResult:
    steps_used: int
    met_thresholds: bool
    history: list[tuple[int, dict]]
    final_scores: dict
    wall_seconds: float
    model: MultiModalModel = field(repr=False, default=None)


def train_toy_mixture(
    task_cfgs: list[TaskConfig],
    model_cfg: ModelConfig,
    trainer_cfg: TrainerConfig,
    thresholds: dict[str, tuple[str, float]],
    eval_every: int = 250,
    eval_examples: int = 50,
    seed: int = 1,
    registry: Optional[SlotTypeRegistry] = None,
    verbose: bool = False,
) -> MixtureResult:
    """Train jointly until every task clears its threshold or max_update.

    ``thresholds`` maps task name -> (metric name, minimum value).  The LR
    schedule always spans max_update, so early stopping never changes the
    step-for-step trajectory.
    """
    registry = registry or default_registry()
    start = time.time()
    tasks = [TaskRuntime(cfg, registry, seed=1000 + i)
             for i, cfg in enumerate(task_cfgs)]
    torch.manual_seed(seed)
    model = MultiModalModel(model_cfg)
    model.build_for([p for t in tasks for p in t.plans])
    executor = Executor(model.core, model.adapters)
    for task in tasks:
        task.executor = executor

    params = {k: p for k, p in model.named_parameters() if p.requires_grad}
    optimizer = AdamW(params, betas=trainer_cfg.adam_betas, eps=trainer_cfg.adam_eps,
                      weight_decay=trainer_cfg.weight_decay)
    sched = LrSchedule(trainer_cfg.lr, trainer_cfg.warmup_ratio,
                       trainer_cfg.max_update)

    history: list[tuple[int, dict]] = []
    steps_used = trainer_cfg.max_update
    met = False
    scores: dict[str, float] = {}
    for step in range(1, trainer_cfg.max_update + 1):
        optimization_step(tasks, optimizer, lr_at(step, sched),
                          clip_norm=trainer_cfg.clip_norm,
                          sentence_avg=trainer_cfg.sentence_avg)
        if step % eval_every == 0 or step == trainer_cfg.max_update:
            scores = {}
            for task in tasks:
                metric, _minimum = thresholds[task.name]
                result = evaluate(model, task, registry, max_examples=eval_examples)
                scores[task.name] = result.get(metric, 0.0)
            history.append((step, dict(scores)))
            if verbose:
                line = " ".join(f"{k}={v:.3f}" for k, v in scores.items())
                print(f"  step {step}: {line}", flush=True)
            if all(scores.get(name, 0.0) >= minimum
                   for name, (_m, minimum) in thresholds.items()):
                steps_used = step
                met = True
                break

    return MixtureResult(steps_used, met, history, scores,
                         time.time() - start, model)
