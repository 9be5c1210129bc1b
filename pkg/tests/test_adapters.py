"""Adapter IO, weight tying, lazy initialization, parameter accounting."""

import numpy as np
import pytest
import torch

from instrux import errors
from instrux.adapters import (
    AdapterRegistry,
    AudioEncoderAdapter,
    FeatureProjection,
    StepEmbedding,
    TokenEmbedding,
    add_ddpm_step_embedding,
    embed_tokens,
    output_logits,
    project_features,
)
from instrux.config import TaskConfig
from instrux.instruction import AUDIO, TEXT, parse
from instrux.model import ModelConfig
from instrux.plan import compile
from instrux.sequence import EmbeddingSequence
from instrux.corpus import DEFAULT_INSTRUCTIONS

D = 16


def plan_for(text, **cfg_kw):
    cfg = TaskConfig(instructions=["x -> y"], **cfg_kw)
    return compile(parse(text), cfg)


class TestTokenEmbedding:
    def test_identity_row_lookup(self):
        table = TokenEmbedding(8, D)
        with torch.no_grad():
            table.weight.zero_()
            table.weight[0, 1] = 1.0  # row 0 = e_2
        ids = torch.tensor([[0]])
        mask = torch.ones(1, 1, dtype=torch.bool)
        seq = embed_tokens(ids, mask, table, TEXT)
        expected = torch.zeros(D)
        expected[1] = 1.0
        assert torch.equal(seq.values[0, 0], expected)

    def test_padding_rows_zero(self):
        table = TokenEmbedding(8, D)
        ids = torch.tensor([[1, 2, 0]])
        mask = torch.tensor([[True, True, False]])
        seq = embed_tokens(ids, mask, table, TEXT)
        assert torch.equal(seq.values[0, 2], torch.zeros(D))
        assert seq.tags[0, 2].item() == -1

    def test_id_out_of_range(self):
        table = TokenEmbedding(8, D)
        with pytest.raises(errors.IdOutOfRange):
            table.embed(torch.tensor([9]))

    def test_logits_argmax_matches_row(self):
        table = TokenEmbedding(4, D)
        with torch.no_grad():
            torch.nn.init.orthogonal_(table.weight)
        hidden = table.weight[2].clone()
        logits = output_logits(hidden.unsqueeze(0), table)
        assert logits.argmax().item() == 2

    def test_zero_hidden_uniform_logits(self):
        table = TokenEmbedding(4, D)
        logits = output_logits(torch.zeros(1, D), table)
        assert torch.equal(logits, torch.zeros(1, 4))

    def test_tied_gradient_combines_embed_and_output(self):
        torch.manual_seed(0)
        table = TokenEmbedding(6, D).double()
        ids = torch.tensor([[1, 2]])
        mask = torch.ones(1, 2, dtype=torch.bool)

        def loss_fn():
            seq = embed_tokens(ids, mask, table, TEXT)
            logits = output_logits(seq.values, table)
            return torch.log_softmax(logits, -1)[0, :, 3].sum()

        loss = loss_fn()
        loss.backward()
        eps = 1e-6
        idx = (1, 3)
        with torch.no_grad():
            orig = table.weight[idx].item()
            table.weight[idx] = orig + eps
            up = loss_fn().item()
            table.weight[idx] = orig - eps
            down = loss_fn().item()
            table.weight[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = table.weight.grad[idx].item()
        assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic)) + 1e-7


class TestFeatureProjection:
    def test_identity_projection(self):
        proj = FeatureProjection(D, D)
        with torch.no_grad():
            proj.in_proj.weight.copy_(torch.eye(D))
            proj.in_proj.bias.zero_()
        feats = torch.randn(1, 5, D)
        mask = torch.ones(1, 5, dtype=torch.bool)
        seq = project_features(feats, mask, proj, TEXT)
        assert torch.allclose(seq.values, feats)

    def test_zero_projection(self):
        proj = FeatureProjection(4, D)
        with torch.no_grad():
            proj.in_proj.weight.zero_()
            proj.in_proj.bias.zero_()
        seq = project_features(torch.randn(1, 3, 4),
                               torch.ones(1, 3, dtype=torch.bool), proj, TEXT)
        assert torch.equal(seq.values, torch.zeros(1, 3, D))

    def test_dim_mismatch(self):
        proj = FeatureProjection(4, D)
        with pytest.raises(errors.DimMismatch):
            project_features(torch.randn(1, 3, 5),
                             torch.ones(1, 3, dtype=torch.bool), proj, TEXT)

    def test_audio_downsampling_length(self):
        adapter = AudioEncoderAdapter(80, D)
        feats = torch.randn(1, 98, 80)
        mask = torch.ones(1, 98, dtype=torch.bool)
        seq = project_features(feats, mask, adapter, AUDIO)
        assert seq.values.shape[1] == 25
        assert int(seq.mask.sum()) == 25


class TestStepEmbedding:
    def test_zero_table_identity(self):
        step = StepEmbedding(10, D)
        with torch.no_grad():
            step.weight.zero_()
        seq = EmbeddingSequence(torch.randn(2, 3, D),
                                torch.ones(2, 3, dtype=torch.bool),
                                torch.zeros(2, 3, dtype=torch.long))
        out = add_ddpm_step_embedding(seq, torch.tensor([1, 2]), step)
        assert torch.equal(out.values, seq.values)

    def test_step_difference_exact(self):
        step = StepEmbedding(10, D)
        seq = EmbeddingSequence(torch.randn(1, 4, D),
                                torch.ones(1, 4, dtype=torch.bool),
                                torch.zeros(1, 4, dtype=torch.long))
        out1 = add_ddpm_step_embedding(seq, torch.tensor([3]), step)
        out2 = add_ddpm_step_embedding(seq, torch.tensor([7]), step)
        diff = out1.values - out2.values
        expected = (step.weight[3] - step.weight[7]).expand(1, 4, D)
        assert torch.allclose(diff, expected, atol=1e-6)

    def test_out_of_range(self):
        step = StepEmbedding(10, D)
        seq = EmbeddingSequence(torch.zeros(1, 1, D),
                                torch.ones(1, 1, dtype=torch.bool),
                                torch.zeros(1, 1, dtype=torch.long))
        with pytest.raises(errors.StepOutOfRange):
            add_ddpm_step_embedding(seq, torch.tensor([10]), step)


class TestLazyInit:
    def cfg(self):
        return ModelConfig(arch="tiny")

    def test_caption_only_has_no_audio(self):
        reg = AdapterRegistry(self.cfg())
        reg.lazy_init([plan_for(DEFAULT_INSTRUCTIONS["caption"])])
        ids = reg.initialized_ids()
        assert "audio_enc" not in ids and "motion_proj" not in ids
        assert set(ids) == {"image_patch_proj", "text_embed", "pos_embed"}

    def test_empty_plan_list(self):
        reg = AdapterRegistry(self.cfg()).lazy_init([])
        assert sum(p.numel() for p in reg.parameters()) == 0

    def test_shared_text_table_across_tasks(self):
        reg = AdapterRegistry(self.cfg())
        reg.lazy_init([plan_for(DEFAULT_INSTRUCTIONS["caption"]),
                       plan_for(DEFAULT_INSTRUCTIONS["asr"])])
        counts = reg.count_parameters()
        # one text table plus image, audio, positions: no duplicates
        assert set(counts) == {"text_embed", "image_patch_proj", "audio_enc", "pos_embed"}

    def test_missing_adapter_error(self):
        reg = AdapterRegistry(self.cfg()).lazy_init([])
        with pytest.raises(errors.MissingAdapter):
            reg.get("audio_enc")

    def test_sharing_is_by_object(self):
        reg = AdapterRegistry(self.cfg())
        reg.lazy_init([plan_for(DEFAULT_INSTRUCTIONS["caption"]),
                       plan_for(DEFAULT_INSTRUCTIONS["summarization_plain"])])
        table = reg.get("text_embed")
        with torch.no_grad():
            table.weight[5, 0] = 123.0
        assert reg.get("text_embed").weight[5, 0].item() == 123.0

    def test_text_only_parameter_arithmetic(self):
        cfg = self.cfg()
        reg = AdapterRegistry(cfg)
        reg.lazy_init([plan_for(DEFAULT_INSTRUCTIONS["summarization_plain"])])
        counts = reg.count_parameters()
        assert counts["text_embed"] == 260 * cfg.d_model
        assert counts["pos_embed"] == cfg.max_positions * cfg.d_model
        assert set(counts) == {"text_embed", "pos_embed"}
