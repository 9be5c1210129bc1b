"""Compile instruction ASTs into executable task plans.

A plan is the ordered list of encoder and decoder segments (constant token
runs and slots with resolved handler ids), the deduced training criterion,
and the matching inference generator.  Compilation is pure: the same AST and
configuration always produce an identical plan.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence, Union

import numpy as np

from .criteria import CriterionSpec, Ddpm, DdpmSchedule, LabelSmoothedCE, MseWithStop
from .errors import (
    ArityMismatch,
    ClosedSetMissing,
    ContrastiveUnsupported,
    IncompatibleInstructions,
    PlanError,
    UnboundColumn,
    UnknownHandler,
    UnsupportedDirection,
)
from .gen_specs import ArFeature, ArToken, Diffusion, GeneratorSpec
from .instruction import (
    Contrastive,
    Interleaved,
    InstructionAST,
    PlainText,
    Single,
    Slot,
    SlotTypeRegistry,
    default_registry,
    render,
)
from .vocab import ByteVocab, TokenTrie, build_candidate_trie

if TYPE_CHECKING:
    from .config import TaskConfig

TEXT_VOCAB = ByteVocab()

# handler names accepted in instructions, normalized to implemented ids
PREPROCESSOR_ALIASES = {
    "image_vqgan": "image_code",
    "imagenet": "image_patch",
    # phonemization needs a lexicon; plain tokenization stands in
    "text_to_phone": "text",
    "text_phone": "text",
    "table_to_text": "table_to_text",
    "database_to_text": "database_to_text",
    "sudoku_to_text": "sudoku_to_text",
}

ADAPTER_ALIASES = {
    "image_vqgan": "image_code_embed",
}

KNOWN_PREPROCESSORS = {
    "text", "prompt", "image_patch", "image_code", "video_frames",
    "wave_fbank", "box_quantize", "struct_text", "table_to_text",
    "database_to_text", "sudoku_to_text", "motion_6d",
}

KNOWN_ADAPTERS = {
    "text_embed", "box_embed", "image_code_embed", "image_patch_proj",
    "video_proj", "audio_enc", "audio_tgt_fbank", "motion_proj", "prompt",
}

# preprocessor id -> (item kind, vocab id or None)
PREPROCESSOR_KINDS = {
    "text": ("token", "text"),
    "struct_text": ("token", "text"),
    "table_to_text": ("token", "text"),
    "database_to_text": ("token", "text"),
    "sudoku_to_text": ("token", "text"),
    "box_quantize": ("token", "box"),
    "image_code": ("token", "image_code"),
    "image_patch": ("feature", None),
    "video_frames": ("feature", None),
    "wave_fbank": ("feature", None),
    "motion_6d": ("feature", None),
    "prompt": ("virtual", None),
}

# adapters whose owning preprocessor changed by override: keep them paired
_PREPROCESSOR_DEFAULT_ADAPTER = {
    ("IMAGE", "image_code", False): "image_code_embed",
    ("IMAGE", "image_code", True): "image_code_embed",
    ("IMAGE", "image_patch", False): "image_patch_proj",
}

KNOWN_ATTRIBUTE_KEYS = {
    "no_loss", "closed_set", "mask_ratio", "noise_ratio", "max_length",
    "preprocess", "preprocessor", "adapter", "is_label", "len",
}


@dataclass(frozen=True)
class CandidateSet:
    entries: tuple[str, ...]
    trie: TokenTrie = field(compare=False, hash=False, repr=False, default=None)

    @classmethod
    def build(cls, entries: Sequence[str]) -> "CandidateSet":
        if not entries:
            raise ClosedSetMissing("closed set has no candidates")
        return cls(tuple(entries), build_candidate_trie(TEXT_VOCAB, list(entries)))


@dataclass(frozen=True)
class PlainRun:
    """A constant stretch of instruction text, tokenized once at compile time."""

    text: str
    token_ids: tuple[int, ...]
    is_decoder: bool

    @property
    def is_slot(self) -> bool:
        return False


@dataclass(frozen=True)
class PlanSlot:
    slot_type: str
    tag: int
    column: Optional[str]
    is_decoder: bool
    preprocessor: str
    adapter: str
    postprocessor: Optional[str]
    kind: str  # "token" | "feature" | "virtual"
    vocab: Optional[str]
    loss_masked: bool = False
    closed_set: Optional[CandidateSet] = None
    params: dict = field(default_factory=dict, hash=False, compare=False)
    extra_attributes: tuple = ()
    fallback_columns: tuple[str, ...] = ()
    interleaved: Optional[tuple["PlanSlot", ...]] = None
    # set on slots produced by expand_interleaved: (column, tuple index, field index)
    tuple_index: Optional[tuple[str, int, int]] = None
    # slot position within its sentence; stable across interleaved expansion
    group_index: int = 0

    @property
    def is_slot(self) -> bool:
        return True


PlanSegment = Union[PlainRun, PlanSlot]


@dataclass(frozen=True)
class TaskPlan:
    encoder_segments: tuple[PlanSegment, ...]
    decoder_segments: tuple[PlanSegment, ...]
    criterion: CriterionSpec
    generator: GeneratorSpec
    instruction: str

    def slots(self, decoder: Optional[bool] = None):
        segs = []
        if decoder in (None, False):
            segs += [s for s in self.encoder_segments if s.is_slot]
        if decoder in (None, True):
            segs += [s for s in self.decoder_segments if s.is_slot]
        return segs

    @property
    def has_interleaved(self) -> bool:
        return any(s.is_slot and s.interleaved is not None
                   for s in self.encoder_segments + self.decoder_segments)

    def adapter_ids(self) -> set[str]:
        out = set()
        for slot in self.slots():
            out.add(slot.adapter)
            if slot.interleaved:
                out.update(inner.adapter for inner in slot.interleaved)
        # constant text runs embed through the shared text table
        if any(not s.is_slot for s in self.encoder_segments + self.decoder_segments):
            out.add("text_embed")
        return out


@dataclass
class BoundSegment:
    segment: PlanSegment
    value: Optional[str] = None  # raw dataset cell for slots


@dataclass
class BoundPlan:
    plan: TaskPlan
    encoder: list[BoundSegment]
    decoder: list[BoundSegment]
    example: dict


class _EmptyConfig:
    """Stand-in used when compiling without a task configuration."""

    preprocess: dict = {}
    closed_set: dict = {}
    criterion = None
    generator_args: dict = {}


def _resolve_params(slot: Slot, cfg, direction_decoder: bool) -> dict:
    modality_key = slot.slot_type.lower()
    params = dict((cfg.preprocess or {}).get(modality_key, {}))
    text_cfg = (cfg.preprocess or {}).get("text", {})
    if slot.slot_type in ("TEXT", "STRUCT"):
        key = "max_tgt_length" if direction_decoder else "max_src_length"
        if key in text_cfg:
            params.setdefault("max_length", int(text_cfg[key]))
    for attr_key in ("mask_ratio", "noise_ratio"):
        v = slot.get(attr_key)
        if v is not None:
            params[attr_key] = float(v)
    v = slot.get("max_length")
    if v is not None:
        params["max_length"] = int(v)
    v = slot.get("len")
    if v is not None:
        params["len"] = int(v)
    return params


def _compile_slot(slot: Slot, cfg, registry: SlotTypeRegistry,
                  encoder_columns: dict[str, str]) -> PlanSlot:
    spec = registry.get(slot.slot_type)
    decoder = slot.is_decoder
    if decoder and not spec.decoder:
        raise UnsupportedDirection(f"slot type {slot.slot_type} cannot be a decoder slot")
    if not decoder and not spec.encoder:
        raise UnsupportedDirection(f"slot type {slot.slot_type} cannot be an encoder slot")

    pre = slot.get("preprocess", "preprocessor")
    if pre:
        pre = PREPROCESSOR_ALIASES.get(pre, pre)
        if pre not in KNOWN_PREPROCESSORS:
            raise UnknownHandler(f"unknown preprocessor '{pre}' on slot [{slot.slot_type}]")
    else:
        pre = spec.dec_preprocessor if decoder else spec.enc_preprocessor
    if pre is None:
        raise UnsupportedDirection(
            f"slot type {slot.slot_type} has no {'decoder' if decoder else 'encoder'} preprocessor")

    adapter = slot.get("adapter")
    if adapter:
        adapter = ADAPTER_ALIASES.get(adapter, adapter)
        if adapter not in KNOWN_ADAPTERS and not adapter.startswith("prompt"):
            raise UnknownHandler(f"unknown adapter '{adapter}' on slot [{slot.slot_type}]")
    else:
        adapter = _PREPROCESSOR_DEFAULT_ADAPTER.get(
            (slot.slot_type, pre, decoder),
            spec.dec_adapter if decoder else spec.enc_adapter,
        )
    if adapter is None:
        raise UnsupportedDirection(
            f"slot type {slot.slot_type} has no {'decoder' if decoder else 'encoder'} adapter")
    if adapter == "prompt":
        adapter = f"prompt_{slot.name or 'default'}"

    kind, vocab = PREPROCESSOR_KINDS[pre]
    loss_masked = slot.has_flag("no_loss")
    if loss_masked and not decoder:
        loss_masked = False  # only meaningful on decoder slots

    closed = None
    wants_closed = slot.has_flag("closed_set") or slot.has_flag("is_label")
    if wants_closed and decoder:
        candidates = (cfg.closed_set or {}).get(slot.name or "", None)
        if not candidates:
            raise ClosedSetMissing(
                f"slot [{slot.slot_type}:{slot.name}] declares closed_set but the task "
                f"configuration lists no candidates for column '{slot.name}'")
        closed = CandidateSet.build(candidates)

    column = slot.name
    fallback: tuple[str, ...] = ()
    if column is None and kind != "virtual":
        if not decoder:
            raise UnboundColumn(
                f"nameless encoder slot [{slot.slot_type}] cannot bind to a column")
        fb = [slot.slot_type.lower()]
        if slot.slot_type in encoder_columns:
            fb.append(encoder_columns[slot.slot_type])
        fallback = tuple(fb)

    extra = tuple(a for a in slot.attributes if a.key not in KNOWN_ATTRIBUTE_KEYS)
    params = _resolve_params(slot, cfg, decoder)
    return PlanSlot(
        slot_type=slot.slot_type,
        tag=spec.tag,
        column=column,
        is_decoder=decoder,
        preprocessor=pre,
        adapter=adapter,
        postprocessor=spec.postprocessor,
        kind=kind,
        vocab=vocab,
        loss_masked=loss_masked,
        closed_set=closed,
        params=params,
        extra_attributes=extra,
        fallback_columns=fallback,
    )


def _compile_sentence(sentence, cfg, registry, encoder_columns) -> tuple[PlanSegment, ...]:
    out: list[PlanSegment] = []
    slot_pos = 0
    for seg in sentence.segments:
        if isinstance(seg, PlainText):
            text = seg.normalized
            out.append(PlainRun(text, tuple(TEXT_VOCAB.tokenize(text)),
                                is_decoder=False))
        elif isinstance(seg, Single):
            out.append(replace(_compile_slot(seg.slot, cfg, registry, encoder_columns),
                               group_index=slot_pos))
            slot_pos += 1
        elif isinstance(seg, Interleaved):
            inner = tuple(_compile_slot(s, cfg, registry, encoder_columns)
                          for s in seg.slots)
            named = [s.column for s in inner if s.column]
            column = named[0] if named else "objects"
            group = replace(inner[0], column=column, interleaved=inner,
                            fallback_columns=(), group_index=slot_pos)
            slot_pos += 1
            out.append(group)
        elif isinstance(seg, Contrastive):
            raise ContrastiveUnsupported(
                "contrastive patterns parse but cannot be compiled yet")
    return tuple(out)


def _mark_decoder(segments: tuple[PlanSegment, ...]) -> tuple[PlanSegment, ...]:
    return tuple(
        replace(s, is_decoder=True) if isinstance(s, PlainRun) else s
        for s in segments
    )


def _deduce_criterion(decoder_slots: list[PlanSlot], cfg) -> CriterionSpec:
    explicit = getattr(cfg, "criterion", None)
    kinds = {s.kind for s in decoder_slots}
    feature_types = [s.slot_type for s in decoder_slots if s.kind == "feature"]
    if kinds <= {"token", "virtual"}:
        eps = 0.1
        if explicit and explicit[0] == "label_smoothed_cross_entropy":
            eps = float(explicit[1].get("label_smoothing", eps))
        return LabelSmoothedCE(eps)
    if kinds == {"feature"} and len(decoder_slots) == 1:
        slot = decoder_slots[0]
        if slot.slot_type == "MOTION":
            steps, sample_steps = 1000, None
            if explicit and explicit[0] == "ddpm":
                steps = int(explicit[1].get("steps", steps))
                sample_steps = explicit[1].get("sample_steps", None)
                sample_steps = int(sample_steps) if sample_steps else None
            return Ddpm(DdpmSchedule(steps), sample_steps)
        if slot.slot_type == "AUDIO":
            weight = 1.0
            if explicit and explicit[0] == "mse_with_stop":
                weight = float(explicit[1].get("stop_weight", weight))
            return MseWithStop(weight)
        raise PlanError(f"no continuous criterion for decoder slot {slot.slot_type}")
    raise PlanError(
        f"unsupported decoder layout: feature slots {feature_types} cannot mix "
        f"with other decoder segments")


def _deduce_generator(criterion: CriterionSpec, decoder_slots: list[PlanSlot],
                      cfg) -> GeneratorSpec:
    args = dict(getattr(cfg, "generator_args", None) or {})
    if isinstance(criterion, LabelSmoothedCE):
        fixed = None
        if len(decoder_slots) == 1 and decoder_slots[0].preprocessor == "image_code":
            fixed = 256
        return ArToken(
            beam=int(args.get("beam", 1)),
            max_len=int(args.get("max_len_b", args.get("max_len", 64))),
            no_repeat_ngram=int(args.get("no_repeat_ngram_size", 0)),
            fixed_len=fixed,
        )
    if isinstance(criterion, MseWithStop):
        return ArFeature(
            max_frames=int(args.get("max_frames", 200)),
            stop_threshold=float(args.get("stop_threshold", 0.5)),
        )
    return Diffusion(criterion.schedule, criterion.sample_steps,
                     output_frames=args.get("output_frames"))


def compile(ast: InstructionAST, task_cfg: Optional["TaskConfig"] = None,
            registry: Optional[SlotTypeRegistry] = None) -> TaskPlan:
    """Compile an AST plus task configuration into an executable plan."""
    cfg = task_cfg if task_cfg is not None else _EmptyConfig()
    registry = registry or default_registry()
    encoder_columns = {}
    for slot in ast.encoder.slots():
        if slot.name and slot.slot_type not in encoder_columns:
            encoder_columns[slot.slot_type] = slot.name
    enc = _compile_sentence(ast.encoder, cfg, registry, encoder_columns)
    dec = _mark_decoder(_compile_sentence(ast.decoder, cfg, registry, encoder_columns))
    decoder_slots = [s for s in dec if s.is_slot]
    criterion = _deduce_criterion(decoder_slots, cfg)
    generator = _deduce_generator(criterion, decoder_slots, cfg)
    return TaskPlan(enc, dec, criterion, generator, render(ast))


# --------------------------------------------------------------------------
# Collation compatibility and instruction sampling
# --------------------------------------------------------------------------

def slot_type_sequence(ast: InstructionAST) -> tuple[str, ...]:
    return ast.slot_type_sequence()


def check_collation_compatible(asts: Sequence[InstructionAST]) -> tuple[bool, list[str]]:
    """All instructions must agree on slot count and slot-type sequence."""
    if not asts:
        raise IncompatibleInstructions("need at least one instruction")
    base = slot_type_sequence(asts[0])
    diagnostics: list[str] = []
    for i, ast in enumerate(asts[1:], start=1):
        seq = slot_type_sequence(ast)
        for pos in range(max(len(base), len(seq))):
            a = base[pos] if pos < len(base) else None
            b = seq[pos] if pos < len(seq) else None
            if a != b:
                diagnostics.append(
                    f"instruction 0 vs {i}: slot-type mismatch at position {pos} "
                    f"({a or 'missing'} vs {b or 'missing'})")
                break
        if len(base) != len(seq) and not diagnostics:
            diagnostics.append(
                f"instruction 0 vs {i}: slot count differs ({len(base)} vs {len(seq)})")
    return (not diagnostics), diagnostics


def sample_instruction(asts: Sequence[InstructionAST], rng: np.random.Generator) -> InstructionAST:
    ok, diags = check_collation_compatible(asts)
    if not ok:
        raise IncompatibleInstructions("; ".join(diags))
    return asts[int(rng.integers(len(asts)))]


# --------------------------------------------------------------------------
# Interleaved expansion and data binding
# --------------------------------------------------------------------------

def parse_interleaved_cell(value, arity: int) -> list[tuple[str, ...]]:
    """TSV wire format: ';'-separated tuples of ','-separated fields."""
    if isinstance(value, str):
        tuples = []
        stripped = value.strip()
        if stripped:
            for part in stripped.split(";"):
                fields = tuple(f.strip() for f in part.split(","))
                tuples.append(fields)
    else:
        tuples = [tuple(str(f) for f in item) for item in value]
    if arity >= 0:
        for t in tuples:
            if len(t) != arity:
                raise ArityMismatch(
                    f"interleaved tuple has {len(t)} fields but the pattern has "
                    f"{arity} inner slots")
    return tuples


def expand_interleaved(plan: TaskPlan, example: dict) -> TaskPlan:
    """Replace interleaved groups with data-determined concrete slots."""

    def expand(segments: tuple[PlanSegment, ...]) -> tuple[PlanSegment, ...]:
        out: list[PlanSegment] = []
        for seg in segments:
            if not (seg.is_slot and seg.interleaved is not None):
                out.append(seg)
                continue
            column = seg.column or "objects"
            if column not in example:
                raise UnboundColumn(column)
            tuples = parse_interleaved_cell(example[column], len(seg.interleaved))
            for j in range(len(tuples)):
                for k, inner in enumerate(seg.interleaved):
                    out.append(replace(
                        inner,
                        column=column,
                        interleaved=None,
                        fallback_columns=(),
                        tuple_index=(column, j, k),
                        group_index=seg.group_index,
                    ))
        return tuple(out)

    if not plan.has_interleaved:
        return plan
    return replace(plan, encoder_segments=expand(plan.encoder_segments),
                   decoder_segments=expand(plan.decoder_segments))


def bind_for_inference(plan: TaskPlan, example: dict) -> BoundPlan:
    """Like ``bind`` but free decoder slots (generation targets) are left
    unbound even when their column is present; the generator fills them."""
    return bind(plan, example, strict=False)


def bind(plan: TaskPlan, example: dict, strict: bool = True) -> BoundPlan:
    """Attach raw dataset values to every slot of a concrete plan."""
    if plan.has_interleaved:
        plan = expand_interleaved(plan, example)

    interleaved_cache: dict[str, list[tuple[str, ...]]] = {}

    def value_for(slot: PlanSlot) -> Optional[str]:
        if slot.kind == "virtual":
            return None
        generation_target = slot.is_decoder and not slot.loss_masked
        if not strict and generation_target:
            return None
        if slot.tuple_index is not None:
            column, j, k = slot.tuple_index
            if column not in interleaved_cache:
                if column not in example:
                    raise UnboundColumn(column)
                interleaved_cache[column] = parse_interleaved_cell(example[column], -1)
            return interleaved_cache[column][j][k]
        if slot.column is not None:
            if slot.column not in example:
                if not strict and generation_target:
                    return None
                raise UnboundColumn(slot.column)
            return example[slot.column]
        for fb in slot.fallback_columns:
            if fb in example:
                return example[fb]
        if not strict and generation_target:
            return None
        raise UnboundColumn(slot.fallback_columns[0] if slot.fallback_columns
                            else f"<{slot.slot_type}>")

    def bind_side(segments) -> list[BoundSegment]:
        out = []
        for seg in segments:
            if seg.is_slot:
                out.append(BoundSegment(seg, value_for(seg)))
            else:
                out.append(BoundSegment(seg))
        return out

    return BoundPlan(plan, bind_side(plan.encoder_segments),
                     bind_side(plan.decoder_segments), example)
