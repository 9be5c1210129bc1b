import numpy as np
import pytest

from instrux import errors
from instrux.config import TaskConfig
from instrux.corpus import DEFAULT_INSTRUCTIONS
from instrux.criteria import Ddpm, LabelSmoothedCE, MseWithStop
from instrux.gen_specs import ArFeature, ArToken, Diffusion
from instrux.instruction import parse
from instrux.plan import (
    bind,
    check_collation_compatible,
    compile,
    expand_interleaved,
    sample_instruction,
)

CAPTION_PAIR = [
    DEFAULT_INSTRUCTIONS["caption_short_line"],
    DEFAULT_INSTRUCTIONS["caption"],
]


def cfg(**kw):
    kw.setdefault("instructions", ["[TEXT:a] -> [TEXT:b]"])
    return TaskConfig(**kw)


class TestCompile:
    def test_caption_plan(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]))
        enc_slots = [s for s in plan.encoder_segments if s.is_slot]
        enc_runs = [s for s in plan.encoder_segments if not s.is_slot]
        assert len(enc_slots) == 1 and enc_slots[0].slot_type == "IMAGE"
        assert len(enc_runs) == 1
        dec_slots = [s for s in plan.decoder_segments if s.is_slot]
        assert len(dec_slots) == 1 and dec_slots[0].slot_type == "TEXT"
        assert isinstance(plan.criterion, LabelSmoothedCE)
        assert isinstance(plan.generator, ArToken)

    def test_tts_plan(self):
        text = '[TEXT:text] what is the voice corresponding to the text? -> [AUDIO:fbank,adapter=audio_tgt_fbank]'
        plan = compile(parse(text))
        assert isinstance(plan.criterion, MseWithStop)
        assert isinstance(plan.generator, ArFeature)
        (dec,) = plan.decoder_segments
        assert dec.adapter == "audio_tgt_fbank"

    def test_motion_plan(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["text_to_motion"]))
        assert isinstance(plan.criterion, Ddpm)
        assert isinstance(plan.generator, Diffusion)

    def test_video_decoder_unsupported(self):
        with pytest.raises(errors.UnsupportedDirection):
            compile(parse("[VIDEO:v] what happens next? -> [VIDEO:v]"))

    def test_closed_set_requires_candidates(self):
        with pytest.raises(errors.ClosedSetMissing):
            compile(parse(DEFAULT_INSTRUCTIONS["mnli"]))

    def test_closed_set_with_candidates(self):
        task = cfg(closed_set={"label": ["entailment", "neutral", "contradiction"]})
        plan = compile(parse(DEFAULT_INSTRUCTIONS["mnli"]), task)
        label = [s for s in plan.decoder_segments if s.is_slot][-1]
        assert label.closed_set is not None
        assert label.closed_set.entries == ("entailment", "neutral", "contradiction")

    def test_no_loss_sets_mask(self):
        task = cfg(closed_set={"label": ["yes", "no"]})
        plan = compile(parse(DEFAULT_INSTRUCTIONS["mnli"]), task)
        dec_slots = [s for s in plan.decoder_segments if s.is_slot]
        assert [s.loss_masked for s in dec_slots] == [True, True, False]

    def test_label_smoothing_from_config(self):
        task = cfg(criterion=("label_smoothed_cross_entropy", {"label_smoothing": 0.2}))
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]), task)
        assert plan.criterion == LabelSmoothedCE(0.2)

    def test_generator_args(self):
        task = cfg(generator_args={"beam": 5, "max_len_b": 16, "no_repeat_ngram_size": 3})
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]), task)
        assert plan.generator == ArToken(beam=5, max_len=16, no_repeat_ngram=3)

    def test_recompilation_is_identical(self):
        task = cfg(closed_set={"label": ["a", "b"]})
        ast = parse(DEFAULT_INSTRUCTIONS["mnli"])
        assert compile(ast, task) == compile(ast, task)

    def test_contrastive_refused(self):
        with pytest.raises(errors.ContrastiveUnsupported):
            compile(parse("x -> [[TEXT:a]|[TEXT:b]]"))

    def test_nameless_encoder_slot_refused(self):
        with pytest.raises(errors.UnboundColumn):
            compile(parse("[TEXT] -> [TEXT:x]"))

    def test_preprocessor_alias(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["image_infilling"]))
        dec = [s for s in plan.decoder_segments if s.is_slot][0]
        assert dec.preprocessor == "image_code"
        assert dec.adapter == "image_code_embed"

    def test_full_corpus_compiles(self):
        from instrux.instruction import register_prompt_slot, default_registry
        from instrux.corpus import NEEDS_PROMPT_TYPE
        registry = register_prompt_slot(default_registry())
        candidates = {"label": ["a", "b"], "label_name": ["c", "d"], "answer": ["e", "f"]}
        task = cfg(closed_set=candidates)
        for name, text in DEFAULT_INSTRUCTIONS.items():
            compile(parse(text, registry), task, registry)


class TestCollation:
    def test_caption_pair_compatible(self):
        ok, diags = check_collation_compatible([parse(t) for t in CAPTION_PAIR])
        assert ok and diags == []

    def test_caption_vs_vqa(self):
        ok, diags = check_collation_compatible(
            [parse(DEFAULT_INSTRUCTIONS["caption"]), parse(DEFAULT_INSTRUCTIONS["vqa"])])
        assert not ok
        assert "position 2" in diags[0]

    def test_single_instruction(self):
        ok, _ = check_collation_compatible([parse(DEFAULT_INSTRUCTIONS["caption"])])
        assert ok


class TestSampling:
    def test_uniform(self):
        asts = [parse(t) for t in CAPTION_PAIR]
        rng = np.random.default_rng(0)
        counts = {0: 0, 1: 0}
        for _ in range(10000):
            chosen = sample_instruction(asts, rng)
            counts[asts.index(chosen)] += 1
        assert abs(counts[0] - 5000) <= 150

    def test_single(self):
        asts = [parse(DEFAULT_INSTRUCTIONS["caption"])]
        rng = np.random.default_rng(0)
        assert sample_instruction(asts, rng) is asts[0]

    def test_incompatible(self):
        asts = [parse(DEFAULT_INSTRUCTIONS["caption"]), parse(DEFAULT_INSTRUCTIONS["vqa"])]
        with pytest.raises(errors.IncompatibleInstructions):
            sample_instruction(asts, np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        asts = [parse(t) for t in CAPTION_PAIR]
        picks1 = [sample_instruction(asts, np.random.default_rng(7)).source_text
                  for _ in range(5)]
        picks2 = [sample_instruction(asts, np.random.default_rng(7)).source_text
                  for _ in range(5)]
        assert picks1 == picks2


class TestInterleaved:
    def plan(self):
        return compile(parse(DEFAULT_INSTRUCTIONS["detection_variable_length"]))

    def test_three_objects(self):
        example = {"img": "x.ppm", "objects": "1,cat;2,dog;3,cow"}
        concrete = expand_interleaved(self.plan(), example)
        dec = [s for s in concrete.decoder_segments if s.is_slot]
        assert [s.slot_type for s in dec] == ["BOX", "TEXT"] * 3

    def test_zero_objects(self):
        concrete = expand_interleaved(self.plan(), {"img": "x.ppm", "objects": ""})
        assert [s for s in concrete.decoder_segments if s.is_slot] == []

    def test_arity_mismatch(self):
        with pytest.raises(errors.ArityMismatch):
            expand_interleaved(self.plan(), {"img": "x", "objects": "1,2,cat"})

    def test_bind_resolves_tuple_values(self):
        example = {"img": "x.ppm", "objects": "1 2 3 4,cat;5 6 7 8,dog"}
        bound = bind(self.plan(), example)
        values = [seg.value for seg in bound.decoder if seg.segment.is_slot]
        assert values == ["1 2 3 4", "cat", "5 6 7 8", "dog"]


class TestBind:
    def test_caption_binding(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]))
        bound = bind(plan, {"img": "image_1.ppm", "cap": "a dog"})
        enc_slot = [s for s in bound.encoder if s.segment.is_slot][0]
        assert enc_slot.value == "image_1.ppm"

    def test_missing_column(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]))
        with pytest.raises(errors.UnboundColumn) as exc:
            bind(plan, {"img": "image_1.ppm"})
        assert exc.value.column == "cap"

    def test_extra_columns_ignored(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["caption"]))
        bound = bind(plan, {"img": "x.ppm", "cap": "hi", "unused": "whatever"})
        assert bound.example["unused"] == "whatever"

    def test_nameless_decoder_falls_back_to_encoder_column(self):
        plan = compile(parse(DEFAULT_INSTRUCTIONS["image_infilling"]))
        bound = bind(plan, {"img": "x.ppm"})
        dec = [s for s in bound.decoder if s.segment.is_slot][0]
        assert dec.value == "x.ppm"
