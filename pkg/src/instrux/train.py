"""The training loop: task runtimes, multi-task fit, checkpointing, resume,
and generator-based evaluation.

Every stochastic choice an example sees (instruction sampling, masking,
noising, diffusion steps) flows from a generator seeded by (task seed,
example uid), so a resumed run replays the identical stream.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import TaskConfig, TrainerConfig
from .data import TsvDataset, shuffled_stream, skip_stream
from .errors import CheckpointError, EmptyTaskList, InstruxError, UnknownMetric
from .executor import Executor
from .generate import generate_tokens
from .gen_specs import ArToken
from .instruction import SlotTypeRegistry, default_registry
from .metrics import get_metric
from .model import ModelConfig
from .modality.dispatch import dispatch
from .plan import TaskPlan, bind, bind_for_inference, compile as compile_plan
from .scheduler import AdamW, LrSchedule, lr_at, optimization_step
from .system import MultiModalModel


class TaskRuntime:
    """One task bound to its dataset, plans, and deterministic rng streams."""

    def __init__(self, cfg: TaskConfig, registry: Optional[SlotTypeRegistry] = None,
                 seed: int = 0, executor: Optional[Executor] = None,
                 load_data: bool = True):
        self.cfg = cfg
        self.name = cfg.name
        self.registry = registry or default_registry()
        self.seed = seed
        self.executor = executor
        self.asts = cfg.parsed(self.registry)
        self.dataset: Optional[TsvDataset] = None
        self.base_dir: Optional[str] = None
        if load_data and cfg.train_data:
            self.dataset = TsvDataset(cfg.train_data)
            self.base_dir = self.dataset.base_dir
            self._resolve_label_candidates()
        self.plans: list[TaskPlan] = [
            compile_plan(ast, cfg, self.registry) for ast in self.asts
        ]
        if self.dataset is not None:
            self.dataset.check_columns(self.required_columns())
        self.consumed = 0
        self._stream = None

    # --- config plumbing -----------------------------------------------------

    def _resolve_label_candidates(self) -> None:
        """is_label slots take their closed set from the dataset's values."""
        for ast in self.asts:
            for slot in ast.slots():
                if slot.has_flag("is_label") and slot.name and \
                        slot.name not in self.cfg.closed_set:
                    self.cfg.closed_set[slot.name] = self.dataset.distinct(slot.name)

    def required_columns(self) -> set[str]:
        cols: set[str] = set()
        for plan in self.plans:
            for slot in plan.slots():
                if slot.interleaved is not None:
                    cols.add(slot.column or "objects")
                elif slot.column:
                    cols.add(slot.column)
        return cols

    # --- scheduler interface ---------------------------------------------------

    @property
    def weight(self) -> float:
        return self.cfg.weight

    @property
    def update_freq(self) -> int:
        return self.cfg.update_freq

    def _ensure_stream(self):
        if self._stream is None:
            if self.dataset is None:
                raise EmptyTaskList(f"task '{self.name}' has no train_data")
            self._stream = shuffled_stream(self.dataset, self.seed,
                                           self.cfg.shuffle_buffer)
            skip_stream(self._stream, self.consumed)
        return self._stream

    def next_batch(self) -> list[tuple[int, dict]]:
        stream = self._ensure_stream()
        batch = []
        for _ in range(self.cfg.micro_batch_size):
            batch.append(next(stream))
            self.consumed += 1
        return batch

    def example_rng(self, uid: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, uid]))

    def forward_loss(self, batch: list[tuple[int, dict]]):
        bounds, rngs = [], []
        for uid, row in batch:
            rng = self.example_rng(uid)
            choice = int(rng.integers(len(self.plans))) if len(self.plans) > 1 else 0
            bounds.append(bind(self.plans[choice], row))
            rngs.append(rng)
        loss_sum, units = self.executor.forward_loss(bounds, rngs, self.base_dir)
        return loss_sum, units, len(batch)


@dataclass
class TrainResult:
    steps: int
    micro_losses: list[tuple[int, str, float]]
    validations: list[tuple[int, dict]]
    best_checkpoint: Optional[str]
    last_checkpoint: Optional[str]
    wall_seconds: float


def collect_blocks(model: MultiModalModel, optimizer: Optional[AdamW] = None) -> dict:
    blocks: dict[str, object] = {}
    for name, p in model.named_parameters():
        blocks[f"param.{name}"] = p.detach()
    if optimizer is not None:
        state = optimizer.state_dict()
        blocks["optim.step_count"] = np.array(state["step_count"], dtype=np.int64)
        for key, value in state["m"].items():
            blocks[f"optim.m.{key}"] = value
        for key, value in state["v"].items():
            blocks[f"optim.v.{key}"] = value
    return blocks


def save_training_checkpoint(path: str, model: MultiModalModel,
                             optimizer: Optional[AdamW], step: int,
                             tasks: list[TaskRuntime], trainer_cfg: TrainerConfig,
                             seed: int, registry: SlotTypeRegistry) -> None:
    blocks = collect_blocks(model, optimizer)
    blocks["rng.torch"] = torch.get_rng_state().numpy()
    config = {
        "format": "instrux-checkpoint",
        "step": step,
        "seed": seed,
        "model_config": model.cfg.to_dict(),
        "trainer_config": trainer_cfg.to_dict(),
        "tasks": [t.cfg.to_dict() for t in tasks],
        "task_seeds": {t.name: t.seed for t in tasks},
        "consumed": {t.name: t.consumed for t in tasks},
        "custom_slot_types": registry.to_config(),
    }
    save_checkpoint(path, blocks, config)


def load_model_from_checkpoint(path: str) -> tuple[MultiModalModel, dict, SlotTypeRegistry]:
    """Rebuild the model (adapters included) and restore every parameter bit."""
    blocks, config = load_checkpoint(path)
    if config.get("format") != "instrux-checkpoint":
        raise CheckpointError(f"{path}: not an instrux checkpoint")
    registry = SlotTypeRegistry.from_config(config.get("custom_slot_types", []))
    model_cfg = ModelConfig.from_dict(config["model_config"])
    model = MultiModalModel(model_cfg)
    plans = []
    for task_raw in config.get("tasks", []):
        cfg = TaskConfig.from_dict(task_raw)
        for ast in cfg.parsed(registry):
            plans.append(compile_plan(ast, cfg, registry))
    model.build_for(plans)
    param_blocks = {k[len("param."):]: v for k, v in blocks.items()
                    if k.startswith("param.")}
    model_params = dict(model.named_parameters())
    missing = set(model_params) - set(param_blocks)
    if missing:
        raise CheckpointError(f"{path}: missing parameter blocks {sorted(missing)[:4]}")
    with torch.no_grad():
        for name, p in model_params.items():
            arr = param_blocks[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}")
            p.copy_(torch.as_tensor(arr.copy(), dtype=p.dtype))
    return model, {"blocks": blocks, "config": config}, registry


def restore_optimizer(optimizer: AdamW, blocks: dict) -> None:
    state = {
        "step_count": int(blocks["optim.step_count"]),
        "m": {}, "v": {},
    }
    for key, value in blocks.items():
        if key.startswith("optim.m."):
            state["m"][key[len("optim.m."):]] = torch.as_tensor(value.copy())
        elif key.startswith("optim.v."):
            state["v"][key[len("optim.v."):]] = torch.as_tensor(value.copy())
    optimizer.load_state_dict(state)


def fit(model: MultiModalModel, tasks: list[TaskRuntime], trainer_cfg: TrainerConfig,
        out_dir: Optional[str] = None, seed: Optional[int] = None,
        resume_from: Optional[str] = None,
        registry: Optional[SlotTypeRegistry] = None,
        eval_max_examples: int = 100,
        stop_after: Optional[int] = None) -> TrainResult:
    """Run scheduler steps to max_update with periodic validation.

    Checkpoints: ``last.ckpt`` at every validation point and at the end;
    ``best.ckpt`` whenever the averaged validation metric improves.
    ``stop_after`` interrupts training after that step (checkpoint written),
    leaving the LR schedule pinned to max_update for a later resume.
    """
    if not tasks:
        raise EmptyTaskList("fit() needs at least one task")
    registry = registry or default_registry()
    seed = trainer_cfg.seed if seed is None else seed
    start = time.time()

    executor = Executor(model.core, model.adapters)
    for task in tasks:
        task.executor = executor

    params = {name: p for name, p in model.named_parameters() if p.requires_grad}
    optimizer = AdamW(params, betas=trainer_cfg.adam_betas, eps=trainer_cfg.adam_eps,
                      weight_decay=trainer_cfg.weight_decay)
    sched = LrSchedule(trainer_cfg.lr, trainer_cfg.warmup_ratio, trainer_cfg.max_update)

    start_step = 0
    if resume_from:
        blocks, config = load_checkpoint(resume_from)
        param_blocks = {k[len("param."):]: v for k, v in blocks.items()
                        if k.startswith("param.")}
        with torch.no_grad():
            for name, p in model.named_parameters():
                if name not in param_blocks:
                    raise CheckpointError(f"resume: missing block for {name}")
                p.copy_(torch.as_tensor(param_blocks[name].copy(), dtype=p.dtype))
        restore_optimizer(optimizer, blocks)
        torch.set_rng_state(torch.as_tensor(blocks["rng.torch"].copy(),
                                            dtype=torch.uint8))
        start_step = int(config["step"])
        for task in tasks:
            task.consumed = int(config["consumed"].get(task.name, 0))
            task.seed = int(config.get("task_seeds", {}).get(task.name, task.seed))
            task._stream = None
    else:
        torch.manual_seed(seed)

    micro_losses: list[tuple[int, str, float]] = []
    validations: list[tuple[int, dict]] = []
    best_score = float("-inf")
    best_path = None
    last_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    val_interval = trainer_cfg.effective_validate_interval()
    final_step = min(stop_after or trainer_cfg.max_update, trainer_cfg.max_update)
    for step in range(start_step + 1, final_step + 1):
        lr = lr_at(step, sched)
        result = optimization_step(tasks, optimizer, lr,
                                   clip_norm=trainer_cfg.clip_norm,
                                   sentence_avg=trainer_cfg.sentence_avg)
        for name, value in result.micro_losses:
            micro_losses.append((step, name, value))

        at_end = step == final_step
        if step % val_interval == 0 or at_end:
            scores: dict[str, float] = {}
            for task in tasks:
                if task.cfg.valid_data and task.cfg.metrics:
                    try:
                        scores.update({f"{task.name}/{k}": v for k, v in
                                       evaluate(model, task, registry,
                                                max_examples=eval_max_examples).items()})
                    except UnknownMetric:
                        pass
            if scores:
                validations.append((step, scores))
            if out_dir:
                last_path = os.path.join(out_dir, "last.ckpt")
                save_training_checkpoint(last_path, model, optimizer, step, tasks,
                                         trainer_cfg, seed, registry)
                if scores:
                    avg = sum(scores.values()) / len(scores)
                    if avg > best_score:
                        best_score = avg
                        best_path = os.path.join(out_dir, "best.ckpt")
                        save_training_checkpoint(best_path, model, optimizer, step,
                                                 tasks, trainer_cfg, seed, registry)

    return TrainResult(final_step, micro_losses, validations,
                       best_path, last_path, time.time() - start)


def evaluate(model: MultiModalModel, task: TaskRuntime,
             registry: Optional[SlotTypeRegistry] = None,
             max_examples: int = 100, split: str = "valid") -> dict[str, float]:
    """Generate on the validation set and score the configured metrics."""
    if not task.cfg.metrics:
        return {}
    source = task.cfg.valid_data if split == "valid" else task.cfg.train_data
    if not source:
        return {}
    dataset = TsvDataset(source)
    executor = Executor(model.core, model.adapters)
    plan = task.plans[0]
    if not isinstance(plan.generator, ArToken):
        raise UnknownMetric("generator-based evaluation supports token plans only")

    metric_fns = [(name, get_metric(name), params.get("target_field"))
                  for name, params in task.cfg.metrics]
    totals = {name: 0.0 for name, _, _ in metric_fns}
    count = 0
    model.eval()
    with torch.no_grad():
        rows = []
        for row in dataset:
            rows.append(row)
            if len(rows) >= max_examples:
                break
        for row in rows:
            bound = bind_for_inference(plan, row)
            batch = dispatch([bound], [task.example_rng(10 ** 9 + count)],
                             dataset.base_dir)
            memory = executor.encode([bound], batch)
            (gen,) = generate_tokens(executor, [bound], plan.generator, batch, memory)
            prediction = gen.value()
            for name, fn, target_field in metric_fns:
                target = row.get(target_field or "")
                if target is None:
                    continue
                totals[name] += fn(prediction, target)
            count += 1
    model.train()
    if count == 0:
        return {}
    return {name: totals[name] / count for name in totals}
