"""Command-line surface: parse / plan / train / infer / eval.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .errors import InstruxError, NumericError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="instrux",
                     description="Declarative multi-modal instructions: parse, "
                                 "plan, train, infer, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_parse = sub.add_parser("parse", help="parse an instruction string")
    p_parse.add_argument("instruction")
    p_parse.add_argument("--json", action="store_true", help="machine-readable tree")
    p_parse.add_argument("--register-prompt", action="store_true",
                         help="register the custom PROMPT slot type first")

    p_plan = sub.add_parser("plan", help="compile a task YAML into plans")
    p_plan.add_argument("task_yaml")
    p_plan.add_argument("--json", action="store_true")

    p_train = sub.add_parser("train", help="multi-task training")
    p_train.add_argument("--task", action="append", required=True, dest="tasks")
    p_train.add_argument("--model", required=True)
    p_train.add_argument("--trainer", required=True)
    p_train.add_argument("--seed", type=int, default=1)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--resume", default=None)

    p_infer = sub.add_parser("infer", help="run one instruction on a checkpoint")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--instruction", required=True)
    p_infer.add_argument("--data", required=True, help="JSON object of column values")
    p_infer.add_argument("--generator-args", default=None, help="JSON object")
    p_infer.add_argument("--closed-set", default=None,
                         help="JSON object: column -> candidate list")
    p_infer.add_argument("--save-box", default=None, metavar="PATH")
    p_infer.add_argument("--save-motion", default=None, metavar="PATH")
    p_infer.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a task's "
                                         "validation data")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--task", required=True)
    p_eval.add_argument("--max-examples", type=int, default=100)

    return parser


def cmd_parse(args) -> int:
    from .instruction import (ast_to_dict, default_registry, format_ast, lint,
                              parse, register_prompt_slot)
    registry = default_registry()
    if args.register_prompt:
        register_prompt_slot(registry)
    ast = parse(args.instruction, registry)
    if args.json:
        print(json.dumps(ast_to_dict(ast), indent=2))
    else:
        print(format_ast(ast))
        for item in lint(ast):
            print(f"lint {item.level}: {item.message}", file=sys.stderr)
    return 0


def _plan_to_dict(plan) -> dict:
    def seg_dict(seg):
        if not seg.is_slot:
            return {"kind": "text", "text": seg.text, "tokens": len(seg.token_ids)}
        out = {
            "kind": "slot", "type": seg.slot_type, "column": seg.column,
            "preprocessor": seg.preprocessor, "adapter": seg.adapter,
            "postprocessor": seg.postprocessor, "item_kind": seg.kind,
            "vocab": seg.vocab, "loss_masked": seg.loss_masked,
        }
        if seg.closed_set is not None:
            out["closed_set"] = list(seg.closed_set.entries)
        if seg.interleaved is not None:
            out["interleaved"] = [inner.slot_type for inner in seg.interleaved]
        return out

    return {
        "instruction": plan.instruction,
        "criterion": dataclasses.asdict(plan.criterion),
        "criterion_kind": type(plan.criterion).__name__,
        "generator": dataclasses.asdict(plan.generator),
        "generator_kind": type(plan.generator).__name__,
        "encoder": [seg_dict(s) for s in plan.encoder_segments],
        "decoder": [seg_dict(s) for s in plan.decoder_segments],
        "adapters": sorted(plan.adapter_ids()),
    }


def cmd_plan(args) -> int:
    from .config import load_task_yaml
    from .instruction import parse
    from .plan import compile as compile_plan
    cfg = load_task_yaml(args.task_yaml)
    plans = [compile_plan(ast, cfg) for ast in cfg.parsed()]
    if args.json:
        print(json.dumps([_plan_to_dict(p) for p in plans], indent=2))
    else:
        for i, plan in enumerate(plans):
            print(f"plan {i}: {plan.instruction}")
            print(f"  criterion: {plan.criterion}")
            print(f"  generator: {plan.generator}")
            for side in ("encoder", "decoder"):
                for seg in getattr(plan, f"{side}_segments"):
                    if seg.is_slot:
                        print(f"  {side}: [{seg.slot_type}:{seg.column}] "
                              f"pre={seg.preprocessor} adapter={seg.adapter}"
                              + (" no_loss" if seg.loss_masked else ""))
                    else:
                        print(f"  {side}: text {seg.text!r}")
    return 0


def cmd_train(args) -> int:
    from .config import load_model_yaml, load_task_yaml, load_trainer_yaml
    from .instruction import default_registry
    from .system import MultiModalModel
    from .train import TaskRuntime, fit
    import torch
    registry = default_registry()
    trainer_cfg = load_trainer_yaml(args.trainer)
    model_cfg = load_model_yaml(args.model)
    tasks = []
    for i, path in enumerate(args.tasks):
        cfg = load_task_yaml(path, registry)
        tasks.append(TaskRuntime(cfg, registry, seed=args.seed * 7919 + i))
    torch.manual_seed(args.seed)  # parameter init must precede fit deterministically
    model = MultiModalModel(model_cfg)
    model.build_for([p for t in tasks for p in t.plans])
    result = fit(model, tasks, trainer_cfg, out_dir=args.out, seed=args.seed,
                 resume_from=args.resume, registry=registry)
    print(f"trained {result.steps} steps in {result.wall_seconds:.1f}s")
    if result.validations:
        step, scores = result.validations[-1]
        for key, value in scores.items():
            print(f"  {key}: {value:.4f}")
    print(f"last checkpoint: {result.last_checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint}")
    return 0


def cmd_infer(args) -> int:
    from .infer import inference
    data = json.loads(args.data)
    generator_args = json.loads(args.generator_args) if args.generator_args else None
    closed_set = json.loads(args.closed_set) if args.closed_set else None
    output = inference(args.checkpoint, args.instruction, data,
                       generator_args=generator_args, closed_set=closed_set,
                       seed=args.seed)
    if output.text is not None:
        print(output.text)
    if output.box is not None:
        print(f"box: {output.box.to_text()}")
        if args.save_box:
            output.save_box(args.save_box)
            print(f"saved overlay to {args.save_box}")
    if output.feature is not None and output.box is None:
        print(f"feature array: shape {output.feature.shape}")
    if args.save_motion and output.motion is not None:
        output.save_motion(args.save_motion)
        print(f"saved motion to {args.save_motion} (.npy/.bvh)")
    return 0


def cmd_eval(args) -> int:
    from .config import load_task_yaml
    from .train import TaskRuntime, evaluate, load_model_from_checkpoint
    model, _extra, registry = load_model_from_checkpoint(args.checkpoint)
    cfg = load_task_yaml(args.task, registry)
    task = TaskRuntime(cfg, registry, load_data=False)
    if cfg.train_data:
        from .data import TsvDataset
        task.dataset = TsvDataset(cfg.train_data)
        task.base_dir = task.dataset.base_dir
    scores = evaluate(model, task, registry, max_examples=args.max_examples)
    for name, value in scores.items():
        print(f"{name}: {value:.4f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"parse": cmd_parse, "plan": cmd_plan, "train": cmd_train,
                "infer": cmd_infer, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except InstruxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: bad JSON argument: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
