"""Binary checkpoint format: bitwise round-trips and header validation."""

import numpy as np
import pytest
import torch

from instrux import errors
from instrux.checkpoint import load_checkpoint, save_checkpoint


class TestRoundTrip:
    def test_blocks_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        blocks = {
            "w.f32": rng.normal(size=(7, 3)).astype(np.float32),
            "w.f64": rng.normal(size=(4,)).astype(np.float64),
            "w.i64": rng.integers(0, 100, size=(2, 2)),
            "w.u8": rng.integers(0, 255, size=(16,)).astype(np.uint8),
            "w.scalar": np.array(42, dtype=np.int64),
        }
        config = {"step": 7, "nested": {"x": [1, 2, 3]}}
        path = str(tmp_path / "c.ckpt")
        save_checkpoint(path, blocks, config)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert set(loaded) == set(blocks)
        for name, arr in blocks.items():
            assert loaded[name].dtype == np.dtype(arr.dtype.str).newbyteorder("<") \
                or loaded[name].dtype == arr.dtype
            assert np.array_equal(loaded[name], arr)
            assert loaded[name].tobytes() == np.ascontiguousarray(
                arr.astype(loaded[name].dtype)).tobytes()

    def test_torch_tensors_accepted(self, tmp_path):
        path = str(tmp_path / "c.ckpt")
        t = torch.randn(3, 3)
        save_checkpoint(path, {"p": t}, {})
        loaded, _ = load_checkpoint(path)
        assert np.array_equal(loaded["p"], t.numpy())

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.ckpt")
        with open(path, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 32)
        with pytest.raises(errors.CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = str(tmp_path / "c.ckpt")
        save_checkpoint(path, {"p": np.zeros(2, dtype=np.float32)}, {})
        with open(path, "ab") as fh:
            fh.write(b"junk")
        with pytest.raises(errors.CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_forward_outputs_identical_after_reload(self, tmp_path):
        from instrux.config import TaskConfig
        from instrux.instruction import parse
        from instrux.model import ModelConfig
        from instrux.plan import compile
        from instrux.system import MultiModalModel
        from instrux.train import load_model_from_checkpoint, save_training_checkpoint
        from instrux.config import TrainerConfig
        from instrux.instruction import default_registry
        from instrux.train import TaskRuntime

        torch.manual_seed(0)
        cfg = TaskConfig(instructions=["copy [TEXT:src] -> [TEXT:tgt]"], name="t")
        registry = default_registry()
        task = TaskRuntime(cfg, registry, load_data=False)
        model = MultiModalModel(ModelConfig(arch="tiny")).build_for(task.plans)
        path = str(tmp_path / "m.ckpt")
        save_training_checkpoint(path, model, None, step=0, tasks=[task],
                                 trainer_cfg=TrainerConfig(), seed=1,
                                 registry=registry)
        reloaded, _, _ = load_model_from_checkpoint(path)
        src = torch.randn(1, 4, model.cfg.d_model)
        mask = torch.ones(1, 4, dtype=torch.bool)
        tags = torch.zeros(1, 4, dtype=torch.long)
        from instrux.sequence import EmbeddingSequence
        seq = EmbeddingSequence(src, mask, tags)
        with torch.no_grad():
            out1 = model.core.encode(seq).values
            out2 = reloaded.core.encode(seq).values
        assert torch.equal(out1, out2)
