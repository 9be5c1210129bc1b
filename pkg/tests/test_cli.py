"""CLI surface: subcommands, outputs, and the exit-code contract."""

import json
import os
import textwrap

import numpy as np
import pytest

from instrux.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParseCommand:
    def test_parse_text_tree(self, capsys):
        code, out, _ = run(capsys, "parse",
                           "[IMAGE:img] what does the image describe? -> [TEXT:cap]")
        assert code == 0
        assert "slot [IMAGE:img]" in out
        assert "decoder:" in out

    def test_parse_json(self, capsys):
        code, out, _ = run(capsys, "parse", "[TEXT:a] -> [TEXT:b]", "--json")
        assert code == 0
        tree = json.loads(out)
        assert tree["encoder"][0]["type"] == "TEXT"

    def test_parse_error_exit_2(self, capsys):
        code, _, err = run(capsys, "parse", "no arrow at all")
        assert code == 2
        assert "error" in err

    def test_prompt_registration_flag(self, capsys):
        instr = "[IMAGE:img] [PROMPT:pt,len=4] -> [TEXT:cap]"
        code, _, _ = run(capsys, "parse", instr, "--register-prompt")
        assert code == 0
        code2, _, _ = run(capsys, "parse", instr)
        assert code2 == 2

    def test_usage_error_exit_1(self, capsys):
        assert run(capsys, "parse")[0] == 1
        assert run(capsys, "bogus-subcommand")[0] == 1


class TestPlanCommand:
    def test_plan_output(self, capsys, tmp_path):
        path = tmp_path / "task.yaml"
        path.write_text(textwrap.dedent("""\
            instruction: '[IMAGE:img] what does the image describe? -> [TEXT:cap]'
            """))
        code, out, _ = run(capsys, "plan", str(path))
        assert code == 0
        assert "criterion: LabelSmoothedCE" in out

    def test_plan_json(self, capsys, tmp_path):
        path = tmp_path / "task.yaml"
        path.write_text("instruction: '[TEXT:a] -> [TEXT:b]'\n")
        code, out, _ = run(capsys, "plan", str(path), "--json")
        assert code == 0
        plans = json.loads(out)
        assert plans[0]["criterion_kind"] == "LabelSmoothedCE"

    def test_schema_error_exit_2(self, capsys, tmp_path):
        path = tmp_path / "task.yaml"
        path.write_text("bogus: 1\n")
        assert run(capsys, "plan", str(path))[0] == 2


class TestTrainInferEval:
    @pytest.fixture()
    def setup(self, tmp_path):
        rng = np.random.default_rng(0)
        data = tmp_path / "copy.tsv"
        with open(data, "w") as fh:
            fh.write("src\ttgt\n")
            for _ in range(40):
                w = ["on", "off"][int(rng.integers(2))]
                fh.write(f"{w}\t{w}\n")
        task = tmp_path / "task.yaml"
        task.write_text(textwrap.dedent(f"""\
            instruction: 'copy [TEXT:src] -> [TEXT:tgt]'
            dataset:
              train_data: {data}
              valid_data: {data}
              micro_batch_size: 4
            evaluation:
              metrics:
                exact_match:
                  target_field: tgt
              generator_args: '{{"beam":1,"max_len_b":6}}'
            """))
        model = tmp_path / "model.yaml"
        model.write_text("model:\n  arch: tiny\n  max_positions: 64\n")
        trainer = tmp_path / "trainer.yaml"
        trainer.write_text(textwrap.dedent("""\
            optimization:
              max_update: 4
              clip_norm: 1.0
              lr: [1e-3]
              validate_interval: 4
            lr_scheduler:
              warmup_ratio: 0.0
            """))
        return tmp_path, task, model, trainer

    def test_train_infer_eval_pipeline(self, capsys, setup):
        tmp_path, task, model, trainer = setup
        out_dir = tmp_path / "run"
        code, out, err = run(capsys, "train", "--task", str(task), "--model",
                             str(model), "--trainer", str(trainer), "--seed", "3",
                             "--out", str(out_dir))
        assert code == 0, err
        assert "trained 4 steps" in out
        ckpt = os.path.join(str(out_dir), "last.ckpt")
        assert os.path.exists(ckpt)

        code, out, err = run(capsys, "infer", "--checkpoint", ckpt,
                             "--instruction", "copy [TEXT:src] -> [TEXT:tgt]",
                             "--data", '{"src": "on"}')
        assert code == 0, err

        code, out, err = run(capsys, "eval", "--checkpoint", ckpt,
                             "--task", str(task), "--max-examples", "5")
        assert code == 0, err
        assert "exact_match" in out

    def test_infer_missing_adapter_exit_2(self, capsys, setup):
        tmp_path, task, model, trainer = setup
        out_dir = tmp_path / "run2"
        run(capsys, "train", "--task", str(task), "--model", str(model),
            "--trainer", str(trainer), "--seed", "3", "--out", str(out_dir))
        code, _, err = run(capsys, "infer", "--checkpoint",
                           os.path.join(str(out_dir), "last.ckpt"),
                           "--instruction", "[AUDIO:wav] transcribe -> [TEXT:t]",
                           "--data", '{"wav": "[0.0]"}')
        assert code == 2
        assert "adapter" in err
