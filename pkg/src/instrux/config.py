"""Task / model / trainer configuration: dataclasses plus strict YAML loading.

Unknown keys are rejected with the offending YAML path; defaults are
materialized so a loaded config re-serializes to a semantically identical
one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import yaml

from .errors import IncompatibleInstructions, SchemaError
from .model import ModelConfig

KNOWN_METRICS = {"exact_match", "accuracy", "rouge_l", "iou_at_0_5",
                 "cider", "bleu", "clipsim"}

_PREPROCESS_KEYS = {
    "text": {"max_src_length", "max_tgt_length"},
    "image": {"patch_image_size", "patch_size", "resolution"},
    "audio": {"sample_rate", "cmvn"},
    "box": {"num_bins", "image_w", "image_h", "resolution"},
    "video": {"num_frames", "patch_size", "patch_image_size", "resolution"},
    "motion": {"width"},
    "struct": {"max_length"},
}

_CRITERION_NAMES = {"label_smoothed_cross_entropy", "mse_with_stop", "ddpm"}


def _require_keys(mapping: dict, allowed: set[str], path: str) -> None:
    if not isinstance(mapping, dict):
        raise SchemaError(path, f"expected a mapping, got {type(mapping).__name__}")
    for key in mapping:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}", "unknown key")


@dataclass
class TaskConfig:
    instructions: list[str]
    name: str = "task"
    train_data: Optional[str] = None
    valid_data: Optional[str] = None
    micro_batch_size: int = 8
    update_freq: int = 1
    shuffle_buffer: int = 256
    weight: float = 1.0
    preprocess: dict = field(default_factory=dict)
    criterion: Optional[tuple[str, dict]] = None
    closed_set: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    generator_args: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.instructions:
            raise SchemaError("instruction", "at least one instruction is required")
        if self.weight < 0:
            raise SchemaError("weight", "task weight must be >= 0")

    def parsed(self, registry=None):
        from .instruction import parse
        from .plan import check_collation_compatible
        asts = [parse(text, registry) for text in self.instructions]
        ok, diags = check_collation_compatible(asts)
        if not ok:
            raise IncompatibleInstructions("; ".join(diags))
        return asts

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instruction": list(self.instructions),
            "dataset": {
                "train_data": self.train_data,
                "valid_data": self.valid_data,
                "micro_batch_size": self.micro_batch_size,
                "update_freq": self.update_freq,
                "shuffle_buffer": self.shuffle_buffer,
            },
            "weight": self.weight,
            "preprocess": self.preprocess,
            "criterion": {self.criterion[0]: self.criterion[1]} if self.criterion else {},
            "closed_set": self.closed_set,
            "evaluation": {
                "metrics": {name: params for name, params in self.metrics},
                "generator_args": json.dumps(self.generator_args) if self.generator_args else "",
            },
        }

    @classmethod
    def from_dict(cls, raw: dict, name: str = "task") -> "TaskConfig":
        _require_keys(raw, {"name", "instruction", "dataset", "preprocess",
                            "criterion", "evaluation", "closed_set", "weight"},
                      path="task")
        if "instruction" not in raw:
            raise SchemaError("instruction", "missing required section")
        instructions = raw["instruction"]
        if isinstance(instructions, str):
            instructions = [instructions]
        if not isinstance(instructions, list) or not all(isinstance(i, str) for i in instructions):
            raise SchemaError("instruction", "expected a string or list of strings")

        dataset = raw.get("dataset") or {}
        _require_keys(dataset, {"train_data", "valid_data", "micro_batch_size",
                                "update_freq", "shuffle_buffer"}, path="dataset")

        preprocess = raw.get("preprocess") or {}
        _require_keys(preprocess, set(_PREPROCESS_KEYS), path="preprocess")
        for modality, params in preprocess.items():
            _require_keys(params or {}, _PREPROCESS_KEYS[modality],
                          path=f"preprocess.{modality}")

        criterion = None
        crit_raw = raw.get("criterion") or {}
        if crit_raw:
            if len(crit_raw) != 1:
                raise SchemaError("criterion", "expected exactly one criterion entry")
            crit_name, crit_params = next(iter(crit_raw.items()))
            if crit_name not in _CRITERION_NAMES:
                raise SchemaError(f"criterion.{crit_name}", "unknown criterion")
            criterion = (crit_name, dict(crit_params or {}))

        evaluation = raw.get("evaluation") or {}
        _require_keys(evaluation, {"metrics", "generator_args"}, path="evaluation")
        metrics = []
        for metric_name, params in (evaluation.get("metrics") or {}).items():
            metrics.append((metric_name, dict(params or {})))
        generator_args = evaluation.get("generator_args") or {}
        if isinstance(generator_args, str):
            try:
                generator_args = json.loads(generator_args) if generator_args.strip() else {}
            except json.JSONDecodeError as exc:
                raise SchemaError("evaluation.generator_args", f"bad JSON: {exc}") from None

        closed_set = raw.get("closed_set") or {}
        if not isinstance(closed_set, dict):
            raise SchemaError("closed_set", "expected mapping column -> candidate list")
        closed_set = {col: [str(c) for c in cands] for col, cands in closed_set.items()}

        return cls(
            instructions=list(instructions),
            name=str(raw.get("name", name)),
            train_data=dataset.get("train_data"),
            valid_data=dataset.get("valid_data"),
            micro_batch_size=int(dataset.get("micro_batch_size", 8)),
            update_freq=int(dataset.get("update_freq", 1)),
            shuffle_buffer=int(dataset.get("shuffle_buffer", 256)),
            weight=float(raw.get("weight", 1.0)),
            preprocess={m: dict(p or {}) for m, p in preprocess.items()},
            criterion=criterion,
            closed_set=closed_set,
            metrics=metrics,
            generator_args=dict(generator_args),
        )


def load_task_yaml(path: str, registry=None) -> TaskConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise SchemaError("task", f"{path}: expected a YAML mapping")
    import os
    name = os.path.splitext(os.path.basename(path))[0]
    cfg = TaskConfig.from_dict(raw, name=name)
    cfg.parsed(registry)  # validates instructions + collation compatibility
    return cfg


# --- model -------------------------------------------------------------------

def model_config_from_dict(raw: dict) -> ModelConfig:
    section = raw.get("model", raw)
    allowed = {"arch", "d_model", "enc_layers", "dec_layers", "heads", "ffn_dim",
               "dropout", "encoder_drop_path_rate", "decoder_drop_path_rate",
               "layernorm_position", "moe_enabled", "expert_modalities",
               "max_positions", "freeze_encoder_embedding",
               "freeze_decoder_embedding", "dtype", "use_fused"}
    _require_keys(section, allowed, path="model")
    params = dict(section)
    params.pop("use_fused", None)  # CUDA kernel switch: meaningless on this backend
    ln = params.get("layernorm_position")
    if isinstance(ln, bool):
        params["layernorm_position"] = "pre" if ln else "post"
    if "expert_modalities" in params:
        params["expert_modalities"] = tuple(params["expert_modalities"])
    try:
        return ModelConfig(**params)
    except (TypeError, ValueError) as exc:
        raise SchemaError("model", str(exc)) from None


def load_model_yaml(path: str) -> ModelConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return model_config_from_dict(raw)


# --- trainer -----------------------------------------------------------------

@dataclass
class TrainerConfig:
    max_update: int = 1000
    clip_norm: float = 0.0
    lr: float = 3e-4
    sentence_avg: bool = False
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_ratio: float = 0.01
    log_interval: int = 10
    validate_interval: Optional[int] = None
    seed: int = 1

    def __post_init__(self):
        if self.max_update < 1:
            raise SchemaError("optimization.max_update", "must be >= 1")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise SchemaError("lr_scheduler.warmup_ratio", "must lie in [0, 1]")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_ratio * self.max_update))

    def effective_validate_interval(self) -> int:
        if self.validate_interval:
            return self.validate_interval
        return max(1, round(0.1 * self.max_update))

    def to_dict(self) -> dict:
        return {
            "common": {"log_interval": self.log_interval, "seed": self.seed},
            "optimization": {
                "max_update": self.max_update, "clip_norm": self.clip_norm,
                "lr": [self.lr], "sentence_avg": self.sentence_avg,
                "validate_interval": self.validate_interval,
            },
            "optimizer": {
                "adam_betas": list(self.adam_betas), "adam_eps": self.adam_eps,
                "weight_decay": self.weight_decay,
            },
            "lr_scheduler": {"warmup_ratio": self.warmup_ratio},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainerConfig":
        _require_keys(raw, {"common", "distributed_training", "optimization",
                            "optimizer", "lr_scheduler"}, path="trainer")
        common = raw.get("common") or {}
        _require_keys(common, {"fp16", "fp16_scale_window", "log_interval", "seed"},
                      path="common")
        if common.get("fp16"):
            import warnings
            warnings.warn("fp16 is out of scope on this backend; ignoring "
                          "fp16/fp16_scale_window", stacklevel=2)
        optimization = raw.get("optimization") or {}
        _require_keys(optimization, {"max_update", "clip_norm", "lr",
                                     "sentence_avg", "validate_interval"},
                      path="optimization")
        optimizer = raw.get("optimizer") or {}
        _require_keys(optimizer, {"adam_betas", "adam_eps", "weight_decay"},
                      path="optimizer")
        lr_sched = raw.get("lr_scheduler") or {}
        _require_keys(lr_sched, {"warmup_ratio"}, path="lr_scheduler")
        lr = optimization.get("lr", 3e-4)
        if isinstance(lr, list):
            lr = lr[0]
        betas = optimizer.get("adam_betas", (0.9, 0.999))
        if isinstance(betas, str):
            betas = json.loads(betas)
        return cls(
            max_update=int(optimization.get("max_update", 1000)),
            clip_norm=float(optimization.get("clip_norm", 0.0)),
            lr=float(lr),
            sentence_avg=bool(optimization.get("sentence_avg", False)),
            adam_betas=(float(betas[0]), float(betas[1])),
            adam_eps=float(optimizer.get("adam_eps", 1e-8)),
            weight_decay=float(optimizer.get("weight_decay", 0.01)),
            warmup_ratio=float(lr_sched.get("warmup_ratio", 0.01)),
            log_interval=int(common.get("log_interval", 10)),
            validate_interval=optimization.get("validate_interval"),
            seed=int(common.get("seed", 1)),
        )


def load_trainer_yaml(path: str) -> TrainerConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise SchemaError("trainer", f"{path}: expected a YAML mapping")
    return TrainerConfig.from_dict(raw)
