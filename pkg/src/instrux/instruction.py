"""Multi-modal instruction language: lexer/parser, renderer, slot-type registry.

An instruction is one line of the form ``encoder sentence -> decoder sentence``
where each sentence freely mixes plain text with bracketed slots such as
``[TEXT:cap]`` or expanded patterns (``[[BOX][TEXT]]*`` interleaved groups and
``[[A]|[B]]`` contrastive pairs).  Parsing and rendering are pure functions;
all validation failures raise a typed ``InstructionError``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

from .errors import (
    BadIdentifier,
    BadPattern,
    DuplicateRegistration,
    EmptySentence,
    MissingArrow,
    MultipleArrows,
    UnbalancedBracket,
    UnknownSlotType,
)

_NAME_RE = re.compile(r"[_A-Za-z0-9]+")
# keys additionally allow "-" (used by flags like prefix-tuning); values allow
# "-" and "." so numeric attributes like mask_ratio=0.3 stay one token.
_KEY_RE = re.compile(r"[-_A-Za-z0-9]+")
_VALUE_RE = re.compile(r"[-._A-Za-z0-9]+")

_WS_RUN = re.compile(r"\s+")


def _normalize_text(text: str) -> str:
    return _WS_RUN.sub(" ", text).strip()


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Attribute:
    key: str
    value: Optional[str] = None

    def render(self) -> str:
        return self.key if self.value is None else f"{self.key}={self.value}"


@dataclass(frozen=True)
class Slot:
    slot_type: str
    name: Optional[str] = None
    attributes: tuple[Attribute, ...] = ()
    is_decoder: bool = False

    def get(self, *keys: str) -> Optional[str]:
        """First value among ``keys``; flags return empty string."""
        for attr in self.attributes:
            if attr.key in keys:
                return attr.value if attr.value is not None else ""
        return None

    def has_flag(self, key: str) -> bool:
        return any(a.key == key for a in self.attributes)

    def render(self) -> str:
        body = self.slot_type
        if self.name:
            body += f":{self.name}"
        for attr in self.attributes:
            body += f",{attr.render()}"
        return f"[{body}]"


@dataclass(frozen=True)
class PlainText:
    text: str

    @property
    def normalized(self) -> str:
        return _normalize_text(self.text)

    def render(self) -> str:
        return self.normalized.replace("[", "\\[").replace("]", "\\]")


@dataclass(frozen=True)
class Single:
    slot: Slot

    def render(self) -> str:
        return self.slot.render()


@dataclass(frozen=True)
class Interleaved:
    slots: tuple[Slot, ...]

    def render(self) -> str:
        return "[" + "".join(s.render() for s in self.slots) + "]*"


@dataclass(frozen=True)
class Contrastive:
    left: Slot
    right: Slot

    def render(self) -> str:
        return f"[{self.left.render()}|{self.right.render()}]"


Segment = Union[PlainText, Single, Interleaved, Contrastive]


@dataclass(frozen=True)
class Sentence:
    segments: tuple[Segment, ...]

    def render(self) -> str:
        return " ".join(seg.render() for seg in self.segments)

    def slots(self) -> Iterator[Slot]:
        for seg in self.segments:
            if isinstance(seg, Single):
                yield seg.slot
            elif isinstance(seg, Interleaved):
                yield from seg.slots
            elif isinstance(seg, Contrastive):
                yield seg.left
                yield seg.right


@dataclass(frozen=True)
class InstructionAST:
    encoder: Sentence
    decoder: Sentence
    source_text: str = ""

    def slots(self) -> Iterator[Slot]:
        yield from self.encoder.slots()
        yield from self.decoder.slots()

    def slot_type_sequence(self) -> tuple[str, ...]:
        """Encoder then decoder slot types, in instruction order."""
        return tuple(s.slot_type for s in self.slots())

    def normalized(self) -> "InstructionAST":
        """Copy with whitespace-collapsed plain text and no source string.

        Two ASTs are structurally equal iff their normalized forms compare
        equal, so whitespace differences in plain text never matter.
        """
        def norm_sentence(sent: Sentence) -> Sentence:
            segs = tuple(
                PlainText(seg.normalized) if isinstance(seg, PlainText) else seg
                for seg in sent.segments
            )
            return Sentence(segs)

        return InstructionAST(norm_sentence(self.encoder), norm_sentence(self.decoder), "")


def structurally_equal(a: InstructionAST, b: InstructionAST) -> bool:
    return a.normalized() == b.normalized()


def render(ast: InstructionAST) -> str:
    """Canonical single-spaced form; ``parse(render(ast))`` equals ``ast``."""
    return f"{ast.encoder.render()} -> {ast.decoder.render()}"


def ast_to_dict(ast: InstructionAST) -> dict:
    """Machine-readable tree (used by the ``parse --json`` CLI path)."""
    def seg_dict(seg: Segment) -> dict:
        if isinstance(seg, PlainText):
            return {"kind": "text", "text": seg.normalized}
        if isinstance(seg, Single):
            return {"kind": "slot", **slot_dict(seg.slot)}
        if isinstance(seg, Interleaved):
            return {"kind": "interleaved", "slots": [slot_dict(s) for s in seg.slots]}
        return {"kind": "contrastive", "slots": [slot_dict(seg.left), slot_dict(seg.right)]}

    def slot_dict(slot: Slot) -> dict:
        return {
            "type": slot.slot_type,
            "name": slot.name,
            "attributes": [
                {"key": a.key, "value": a.value} for a in slot.attributes
            ],
            "is_decoder": slot.is_decoder,
        }

    return {
        "encoder": [seg_dict(s) for s in ast.encoder.segments],
        "decoder": [seg_dict(s) for s in ast.decoder.segments],
    }


def format_ast(ast: InstructionAST) -> str:
    """Indented human-readable tree for the CLI."""
    lines = []
    for side, sent in (("encoder", ast.encoder), ("decoder", ast.decoder)):
        lines.append(f"{side}:")
        for seg in sent.segments:
            if isinstance(seg, PlainText):
                lines.append(f"  text {seg.normalized!r}")
            elif isinstance(seg, Single):
                lines.append(f"  slot {seg.slot.render()}")
            elif isinstance(seg, Interleaved):
                lines.append(f"  interleaved {seg.render()}")
            else:
                lines.append(f"  contrastive {seg.render()}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Slot type registry
# --------------------------------------------------------------------------

# Modality tags double as MoE routing keys; padding positions use tag -1.
TEXT, IMAGE, VIDEO, AUDIO, BOX, STRUCT, MOTION = range(7)


@dataclass(frozen=True)
class SlotTypeSpec:
    """Handler bindings for one slot type (Table-style support row)."""

    name: str
    encoder: bool
    decoder: bool
    tag: int
    # handler ids per direction; plan compilation resolves them
    enc_preprocessor: Optional[str] = None
    dec_preprocessor: Optional[str] = None
    enc_adapter: Optional[str] = None
    dec_adapter: Optional[str] = None
    postprocessor: Optional[str] = None
    builtin: bool = False


_BUILTIN_SPECS = [
    SlotTypeSpec("TEXT", True, True, TEXT, "text", "text", "text_embed",
                 "text_embed", "text", builtin=True),
    SlotTypeSpec("IMAGE", True, True, IMAGE, "image_patch", "image_code",
                 "image_patch_proj", "image_code_embed", "image_code", builtin=True),
    SlotTypeSpec("VIDEO", True, False, VIDEO, "video_frames", None,
                 "video_proj", None, None, builtin=True),
    SlotTypeSpec("AUDIO", True, True, AUDIO, "wave_fbank", "wave_fbank",
                 "audio_enc", "audio_tgt_fbank", "fbank", builtin=True),
    SlotTypeSpec("BOX", True, True, BOX, "box_quantize", "box_quantize",
                 "box_embed", "box_embed", "box_dequantize", builtin=True),
    SlotTypeSpec("STRUCT", True, True, STRUCT, "struct_text", "struct_text",
                 "text_embed", "text_embed", "struct_text", builtin=True),
    SlotTypeSpec("MOTION", True, True, MOTION, "motion_6d", "motion_6d",
                 "motion_proj", "motion_proj", "motion_6d", builtin=True),
]


class SlotTypeRegistry:
    """Registered slot types; parsing fails on types not present here."""

    def __init__(self) -> None:
        self._specs: dict[str, SlotTypeSpec] = {s.name: s for s in _BUILTIN_SPECS}
        self._next_tag = MOTION + 1

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def get(self, name: str) -> SlotTypeSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownSlotType(f"unknown slot type '{name}'") from None

    def names(self) -> list[str]:
        return sorted(self._specs)

    def register(
        self,
        name: str,
        *,
        encoder: bool = True,
        decoder: bool = False,
        enc_preprocessor: Optional[str] = None,
        dec_preprocessor: Optional[str] = None,
        enc_adapter: Optional[str] = None,
        dec_adapter: Optional[str] = None,
        postprocessor: Optional[str] = None,
    ) -> SlotTypeSpec:
        if name in self._specs:
            raise DuplicateRegistration(f"slot type '{name}' already registered")
        if not _NAME_RE.fullmatch(name):
            raise BadIdentifier(f"slot type name '{name}' violates [_A-Za-z0-9]+")
        spec = SlotTypeSpec(
            name, encoder, decoder, self._next_tag,
            enc_preprocessor, dec_preprocessor, enc_adapter, dec_adapter,
            postprocessor,
        )
        self._specs[name] = spec
        self._next_tag += 1
        return spec

    def to_config(self) -> list[dict]:
        """Custom registrations as plain dicts (stored in checkpoints)."""
        out = []
        for spec in self._specs.values():
            if spec.builtin:
                continue
            out.append({
                "name": spec.name,
                "encoder": spec.encoder,
                "decoder": spec.decoder,
                "enc_preprocessor": spec.enc_preprocessor,
                "dec_preprocessor": spec.dec_preprocessor,
                "enc_adapter": spec.enc_adapter,
                "dec_adapter": spec.dec_adapter,
                "postprocessor": spec.postprocessor,
            })
        return out

    @classmethod
    def from_config(cls, customs: list[dict]) -> "SlotTypeRegistry":
        reg = cls()
        for item in customs:
            reg.register(item["name"], **{k: v for k, v in item.items() if k != "name"})
        return reg


def default_registry() -> SlotTypeRegistry:
    return SlotTypeRegistry()


def register_slot_type(registry: SlotTypeRegistry, name: str, **spec) -> SlotTypeRegistry:
    """Register a custom slot type (e.g. PROMPT) on ``registry`` and return it."""
    registry.register(name, **spec)
    return registry


def register_prompt_slot(registry: SlotTypeRegistry) -> SlotTypeRegistry:
    """The PROMPT preset: encoder-only learnable prefix positions."""
    return register_slot_type(
        registry, "PROMPT",
        encoder=True, decoder=False,
        enc_preprocessor="prompt", enc_adapter="prompt",
    )


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def _find_arrow(text: str) -> int:
    """Index of the single top-level whitespace-surrounded '->'."""
    depth = 0
    i = 0
    hits = []
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\":
            i += 2
            continue
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise UnbalancedBracket(f"unmatched ']' at offset {i}")
        elif (
            depth == 0
            and ch == "-"
            and text[i:i + 2] == "->"
            and i > 0
            and text[i - 1].isspace()
            and i + 2 < n
            and text[i + 2].isspace()
        ):
            hits.append(i)
            i += 2
            continue
        i += 1
    if depth != 0:
        raise UnbalancedBracket("unclosed '['")
    if not hits:
        raise MissingArrow("no top-level '->' separates encoder from decoder")
    if len(hits) > 1:
        raise MultipleArrows(f"{len(hits)} top-level '->' separators found")
    return hits[0]


class _SlotScanner:
    """Parses the body of one ``[...]`` slot."""

    def __init__(self, body: str, registry: SlotTypeRegistry, is_decoder: bool):
        self.body = body
        self.pos = 0
        self.registry = registry
        self.is_decoder = is_decoder

    def _skip_ws(self) -> None:
        while self.pos < len(self.body) and self.body[self.pos].isspace():
            self.pos += 1

    def _ident(self, pattern: re.Pattern, what: str) -> str:
        self._skip_ws()
        m = pattern.match(self.body, self.pos)
        if not m:
            rest = self.body[self.pos:self.pos + 20]
            raise BadIdentifier(f"expected {what} at '{rest}' in slot '[{self.body}]'")
        self.pos = m.end()
        return m.group()

    def parse(self) -> Slot:
        slot_type = self._ident(_NAME_RE, "slot type")
        if slot_type not in self.registry:
            raise UnknownSlotType(
                f"unknown slot type '{slot_type}' "
                f"(registered: {', '.join(self.registry.names())})"
            )
        name = None
        attributes: list[Attribute] = []
        self._skip_ws()
        if self.pos < len(self.body) and self.body[self.pos] == ":":
            self.pos += 1
            name = self._ident(_NAME_RE, "slot name")
            self._skip_ws()
        while self.pos < len(self.body):
            if self.body[self.pos] != ",":
                raise BadIdentifier(
                    f"unexpected '{self.body[self.pos]}' in slot '[{self.body}]'"
                )
            self.pos += 1
            key = self._ident(_KEY_RE, "attribute key")
            self._skip_ws()
            value = None
            if self.pos < len(self.body) and self.body[self.pos] == "=":
                self.pos += 1
                value = self._ident(_VALUE_RE, "attribute value")
                self._skip_ws()
            attributes.append(Attribute(key, value))
        return Slot(slot_type, name, tuple(attributes), self.is_decoder)


class _SentenceParser:
    def __init__(self, text: str, registry: SlotTypeRegistry, is_decoder: bool):
        self.text = text
        self.pos = 0
        self.registry = registry
        self.is_decoder = is_decoder

    def parse(self) -> Sentence:
        segments: list[Segment] = []
        buf: list[str] = []

        def flush():
            raw = "".join(buf)
            buf.clear()
            if raw.strip():
                segments.append(PlainText(raw))

        n = len(self.text)
        while self.pos < n:
            ch = self.text[self.pos]
            if ch == "\\" and self.pos + 1 < n and self.text[self.pos + 1] in "[]\\":
                buf.append(self.text[self.pos + 1])
                self.pos += 2
            elif ch == "[":
                flush()
                segments.append(self._meta_slot())
            elif ch == "]":
                raise UnbalancedBracket(f"unmatched ']' in sentence '{self.text}'")
            else:
                buf.append(ch)
                self.pos += 1
        flush()
        if not segments:
            raise EmptySentence(f"sentence has no segments: '{self.text}'")
        return Sentence(tuple(segments))

    def _slot_body(self) -> str:
        # called with self.pos at '['; slot bodies cannot nest brackets
        end = self.text.find("]", self.pos + 1)
        if end < 0:
            raise UnbalancedBracket(f"unclosed '[' in sentence '{self.text}'")
        inner = self.text.find("[", self.pos + 1)
        if 0 <= inner < end:
            raise UnbalancedBracket("nested '[' inside a slot body")
        body = self.text[self.pos + 1:end]
        self.pos = end + 1
        return body

    def _meta_slot(self) -> Segment:
        # lookahead past whitespace to see whether this is an expanded pattern
        probe = self.pos + 1
        while probe < len(self.text) and self.text[probe].isspace():
            probe += 1
        if probe < len(self.text) and self.text[probe] == "[":
            return self._expanded_pattern()
        body = self._slot_body()
        return Single(_SlotScanner(body, self.registry, self.is_decoder).parse())

    def _expanded_pattern(self) -> Segment:
        self.pos += 1  # consume outer '['
        slots: list[Slot] = []
        contrastive = False
        while True:
            while self.pos < len(self.text) and self.text[self.pos].isspace():
                self.pos += 1
            if self.pos >= len(self.text):
                raise UnbalancedBracket("unclosed expanded pattern")
            ch = self.text[self.pos]
            if ch == "[":
                body = self._slot_body()
                slots.append(_SlotScanner(body, self.registry, self.is_decoder).parse())
            elif ch == "|":
                contrastive = True
                self.pos += 1
            elif ch == "]":
                self.pos += 1
                break
            else:
                raise BadPattern(
                    f"unexpected '{ch}' inside expanded pattern in '{self.text}'"
                )
        if contrastive:
            if len(slots) != 2:
                raise BadPattern("contrastive pattern requires exactly 2 slots")
            return Contrastive(slots[0], slots[1])
        if self.pos < len(self.text) and self.text[self.pos] == "*":
            self.pos += 1
            if not slots:
                raise BadPattern("interleaved pattern requires at least one slot")
            return Interleaved(tuple(slots))
        raise BadPattern("expanded pattern must end with '*' or contain '|'")


def parse(text: str, registry: Optional[SlotTypeRegistry] = None) -> InstructionAST:
    """Parse one instruction string into an AST.

    Raises a typed ``InstructionError`` subclass on any malformed input; never
    anything else, regardless of the bytes fed in.
    """
    if registry is None:
        registry = default_registry()
    if not isinstance(text, str) or not text.strip():
        raise EmptySentence("instruction is empty")
    arrow = _find_arrow(text)
    enc_text = text[:arrow]
    dec_text = text[arrow + 2:]
    encoder = _SentenceParser(enc_text, registry, is_decoder=False).parse()
    decoder = _SentenceParser(dec_text, registry, is_decoder=True).parse()
    return InstructionAST(encoder, decoder, source_text=text)


# --------------------------------------------------------------------------
# Lints
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Lint:
    level: str  # "warning" | "error"
    message: str


def lint(ast: InstructionAST) -> list[Lint]:
    """Static diagnostics the grammar itself does not reject."""
    out: list[Lint] = []
    for seg in ast.encoder.segments:
        if isinstance(seg, Interleaved):
            out.append(Lint("warning", "interleaved pattern on the encoder side"))
    for seg in ast.encoder.segments:
        if isinstance(seg, Single) and seg.slot.name is None:
            if seg.slot.slot_type != "PROMPT":
                out.append(Lint(
                    "error",
                    f"nameless encoder slot [{seg.slot.slot_type}] has no inferable binding",
                ))
    for seg in (*ast.encoder.segments, *ast.decoder.segments):
        if isinstance(seg, Contrastive):
            out.append(Lint("warning", "contrastive pattern parses but cannot be compiled"))
    return out
