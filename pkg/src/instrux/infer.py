"""Task-agnostic inference from a checkpoint: parse, compile, bind, generate.

Instructions need not match training ones; any instruction runs as long as
the checkpoint holds adapters for every modality it mentions.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .config import TaskConfig
from .criteria import Ddpm, LabelSmoothedCE, MseWithStop
from .errors import MissingAdapter, PlanError
from .executor import Executor
from .gen_specs import ArFeature, ArToken, Diffusion
from .instruction import SlotTypeRegistry, parse
from .modality import motion as motion_mod
from .modality.box import BoundingBox
from .modality.dispatch import dispatch, resolve_image
from .modality.image import draw_box, write_ppm
from .plan import TaskPlan, bind_for_inference, compile as compile_plan
from .generate import generate_diffusion, generate_features, generate_tokens
from .system import MultiModalModel
from .train import TaskRuntime, load_model_from_checkpoint


@dataclass
class InferenceOutput:
    """Per-decoder-slot results with typed accessors and savers."""

    results: list[tuple[object, object]]  # (PlanSlot, value)
    plan: TaskPlan
    example: dict
    base_dir: Optional[str] = None
    full_text: Optional[str] = None
    score: Optional[float] = None

    def _first(self, predicate):
        for slot, value in self.results:
            if predicate(slot, value):
                return value
        return None

    @property
    def text(self) -> Optional[str]:
        return self._first(lambda s, v: isinstance(v, str))

    @property
    def box(self) -> Optional[BoundingBox]:
        return self._first(lambda s, v: isinstance(v, BoundingBox))

    @property
    def feature(self) -> Optional[np.ndarray]:
        return self._first(lambda s, v: isinstance(v, np.ndarray) and v.ndim == 2)

    @property
    def image(self) -> Optional[np.ndarray]:
        return self._first(lambda s, v: isinstance(v, np.ndarray) and v.ndim == 3)

    @property
    def motion(self) -> Optional[np.ndarray]:
        return self._first(
            lambda s, v: s.slot_type == "MOTION" and isinstance(v, np.ndarray))

    def save_box(self, path: str) -> None:
        """Input image with the predicted box drawn as a 2-px rectangle (PPM)."""
        box = self.box
        if box is None:
            raise PlanError("no BOX output to save")
        source = None
        for slot in self.plan.slots(decoder=False):
            if slot.slot_type == "IMAGE" and slot.column in self.example:
                source = self.example[slot.column]
                break
        if source is None:
            for key in ("img", "image"):
                if key in self.example:
                    source = self.example[key]
                    break
        if source is None:
            raise PlanError("no input image column ('img'/'image') to overlay")
        img = resolve_image(source, self.base_dir)
        write_ppm(path, draw_box(img, box))

    def save_motion(self, path: str) -> None:
        """Clip as .npy plus a BVH rendering over a default chain skeleton."""
        clip_arr = self.motion
        if clip_arr is None:
            raise PlanError("no MOTION output to save")
        stem = os.path.splitext(path)[0]
        np.save(stem + ".npy", clip_arr)
        m = (clip_arr.shape[1] - 6) // 6
        skeleton = _chain_skeleton(m)
        clip = motion_mod.MotionClip(clip_arr.astype(np.float64), 1.0 / 30.0, skeleton)
        with open(stem + ".bvh", "w") as fh:
            fh.write(motion_mod.motion_6d_to_bvh(clip, skeleton))


def _chain_skeleton(m: int) -> motion_mod.Skeleton:
    root = motion_mod.BvhJoint("Hips", np.zeros(3), list(motion_mod.ROOT_CHANNELS))
    parent = root
    for i in range(m - 1):
        joint = motion_mod.BvhJoint(f"Joint{i + 1}", np.array([0.0, 1.0, 0.0]),
                                    list(motion_mod.JOINT_CHANNELS))
        parent.children.append(joint)
        parent = joint
    return motion_mod.Skeleton(root, 1.0 / 30.0)


def _merged_preprocess(task_configs: list[dict]) -> dict:
    merged: dict = {}
    for raw in task_configs:
        for modality, params in (raw.get("preprocess") or {}).items():
            merged.setdefault(modality, dict(params or {}))
    return merged


def inference(model_or_checkpoint, instruction: str, data: dict,
              registry: Optional[SlotTypeRegistry] = None,
              generator_args: Optional[dict] = None,
              closed_set: Optional[dict] = None,
              seed: int = 0) -> InferenceOutput:
    """Run one instruction against a trained model.

    ``model_or_checkpoint`` is a checkpoint path or a built MultiModalModel;
    data maps column names to raw values (text, file paths, inline JSON).
    """
    preprocess: dict = {}
    if isinstance(model_or_checkpoint, (str, os.PathLike)):
        model, extra, ckpt_registry = load_model_from_checkpoint(str(model_or_checkpoint))
        registry = registry or ckpt_registry
        preprocess = _merged_preprocess(extra["config"].get("tasks", []))
    else:
        model = model_or_checkpoint
    assert isinstance(model, MultiModalModel)

    cfg = TaskConfig(instructions=[instruction], preprocess=preprocess,
                     closed_set=dict(closed_set or {}),
                     generator_args=dict(generator_args or {}))
    ast = parse(instruction, registry)
    plan = compile_plan(ast, cfg, registry)

    missing = [aid for aid in plan.adapter_ids() if aid not in model.adapters]
    if missing:
        raise MissingAdapter(
            f"checkpoint lacks adapters {missing}; the corresponding modalities "
            f"were never trained")

    bound = bind_for_inference(plan, data)
    executor = Executor(model.core, model.adapters)
    rng = np.random.default_rng(seed)
    model.eval()
    with torch.no_grad():
        batch = dispatch([bound], [np.random.default_rng(seed)], None)
        memory = executor.encode([bound], batch)
        results: list[tuple[object, object]] = []
        full_text = None
        score = None
        if isinstance(plan.generator, ArToken):
            (gen,) = generate_tokens(executor, [bound], plan.generator, batch, memory)
            slot = gen.slot
            results.append((slot, gen.value()))
            full_text = gen.full_text()
            score = gen.score
        elif isinstance(plan.generator, ArFeature):
            (frames,) = generate_features(executor, [bound], plan.generator,
                                          batch, memory)
            slot = [s for s in plan.decoder_segments if s.is_slot][0]
            results.append((slot, frames))
        elif isinstance(plan.generator, Diffusion):
            (sample,) = generate_diffusion(executor, [bound], plan.generator,
                                           batch, memory, rng)
            slot = [s for s in plan.decoder_segments if s.is_slot][0]
            results.append((slot, sample))
        else:
            raise PlanError(f"no generator implementation for {plan.generator}")
    return InferenceOutput(results, plan, data, base_dir=None,
                           full_text=full_text, score=score)
