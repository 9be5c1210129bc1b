"""Trainer: fit loop counting, resume determinism, evaluation, lazy checkpoints."""

import os

import numpy as np
import pytest
import torch

from instrux import errors
from instrux.checkpoint import load_checkpoint
from instrux.config import TaskConfig, TrainerConfig
from instrux.instruction import default_registry
from instrux.model import ModelConfig
from instrux.system import MultiModalModel
from instrux.train import (
    TaskRuntime,
    evaluate,
    fit,
    load_model_from_checkpoint,
)


def write_copy_tsv(path, n=60, words=("cat", "dog", "sun"), seed=0):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        fh.write("src\ttgt\n")
        for _ in range(n):
            w = words[int(rng.integers(len(words)))]
            fh.write(f"{w}\t{w}\n")
    return str(path)


def copy_task(tmp_path, name="copy", micro=4, update_freq=1, weight=1.0):
    train = write_copy_tsv(tmp_path / f"{name}.tsv")
    return TaskConfig(
        instructions=["copy [TEXT:src] -> [TEXT:tgt]"], name=name,
        train_data=train, valid_data=train, micro_batch_size=micro,
        update_freq=update_freq, weight=weight,
        metrics=[("exact_match", {"target_field": "tgt"})],
    )


def build(tmp_path, cfgs, seed=11):
    registry = default_registry()
    tasks = [TaskRuntime(cfg, registry, seed=100 + i) for i, cfg in enumerate(cfgs)]
    torch.manual_seed(seed)
    model = MultiModalModel(ModelConfig(arch="tiny", max_positions=64))
    model.build_for([p for t in tasks for p in t.plans])
    return model, tasks, registry


class TestFit:
    def test_micro_entry_counting(self, tmp_path):
        cfg_a = copy_task(tmp_path, "a", update_freq=2)
        cfg_b = copy_task(tmp_path, "b", update_freq=1)
        model, tasks, registry = build(tmp_path, [cfg_a, cfg_b])
        trainer_cfg = TrainerConfig(max_update=50, lr=1e-3, validate_interval=1000)
        result = fit(model, tasks, trainer_cfg, registry=registry)
        assert result.steps == 50
        assert len(result.micro_losses) == 50 * (2 + 1)

    def test_empty_task_list(self):
        with pytest.raises(errors.EmptyTaskList):
            fit(MultiModalModel(ModelConfig(arch="tiny")), [], TrainerConfig())

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        def run(out, stop_after=None, resume_from=None):
            cfg = copy_task(tmp_path, "copy")
            model, tasks, registry = build(tmp_path, [cfg], seed=21)
            trainer_cfg = TrainerConfig(max_update=50, lr=1e-3, warmup_ratio=0.1,
                                        validate_interval=25)
            fit(model, tasks, trainer_cfg, out_dir=str(tmp_path / out),
                seed=21, registry=registry, stop_after=stop_after,
                resume_from=resume_from)
            return model

        full = run("full")
        run("half", stop_after=25)
        resumed = run("resumed", resume_from=str(tmp_path / "half" / "last.ckpt"))
        for (n1, p1), (n2, p2) in zip(full.named_parameters(),
                                      resumed.named_parameters()):
            assert n1 == n2
            assert torch.equal(p1, p2), n1

    def test_checkpoint_contains_only_used_adapters(self, tmp_path):
        cfg = copy_task(tmp_path, "copy")
        model, tasks, registry = build(tmp_path, [cfg])
        trainer_cfg = TrainerConfig(max_update=2, lr=1e-3, validate_interval=2)
        result = fit(model, tasks, trainer_cfg, out_dir=str(tmp_path / "out"),
                     registry=registry)
        blocks, config = load_checkpoint(result.last_checkpoint)
        names = [n for n in blocks if n.startswith("param.adapters.")]
        assert not any("audio" in n or "motion" in n or "image" in n for n in names)
        assert any("text_embed" in n for n in names)
        assert config["step"] == 2

    def test_checkpoint_reload_runs_inference(self, tmp_path):
        from instrux.infer import inference
        cfg = copy_task(tmp_path, "copy")
        model, tasks, registry = build(tmp_path, [cfg])
        trainer_cfg = TrainerConfig(max_update=2, lr=1e-3, validate_interval=2)
        result = fit(model, tasks, trainer_cfg, out_dir=str(tmp_path / "out"),
                     registry=registry)
        output = inference(result.last_checkpoint,
                           "copy [TEXT:src] -> [TEXT:tgt]", {"src": "cat"})
        assert isinstance(output.text, str)

    def test_missing_adapter_at_inference(self, tmp_path):
        from instrux.infer import inference
        cfg = copy_task(tmp_path, "copy")
        model, tasks, registry = build(tmp_path, [cfg])
        trainer_cfg = TrainerConfig(max_update=1, lr=1e-3, validate_interval=1)
        result = fit(model, tasks, trainer_cfg, out_dir=str(tmp_path / "out"),
                     registry=registry)
        with pytest.raises(errors.MissingAdapter):
            inference(result.last_checkpoint,
                      "[AUDIO:wav] transcribe -> [TEXT:txt]",
                      {"wav": "[0.0, 0.1]"})


class TestEvaluate:
    def test_perfect_model_scores_one(self, tmp_path):
        # train long enough on 2 words to reach exact match 1.0 on train data
        cfg = copy_task(tmp_path, "copy", micro=8)
        model, tasks, registry = build(tmp_path, [cfg], seed=2)
        trainer_cfg = TrainerConfig(max_update=150, lr=3e-3, warmup_ratio=0.1,
                                    clip_norm=1.0, validate_interval=1000)
        fit(model, tasks, trainer_cfg, registry=registry)
        scores = evaluate(model, tasks[0], registry, max_examples=20)
        assert scores["exact_match"] >= 0.95

    def test_unknown_metric(self, tmp_path):
        cfg = copy_task(tmp_path, "copy")
        cfg.metrics = [("cider", {"target_field": "tgt"})]
        model, tasks, registry = build(tmp_path, [cfg])
        with pytest.raises(errors.UnknownMetric):
            evaluate(model, tasks[0], registry, max_examples=2)
