"""The slot dispatcher: raw dataset values -> processed items -> padded groups.

Every slot's raw value is routed to its preprocessor by handler id, producing
either a token sequence (with its vocabulary) or a feature-frame array.  The
items of the i-th slot across a batch of examples are then collated into one
padded group, in instruction order; plain-text runs ride along per example.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import BadImage, ModalityError, PlanError
from ..plan import BoundPlan, PlanSlot, TEXT_VOCAB
from ..vocab import ByteVocab, RangeVocab
from . import audio as audio_mod
from . import image as image_mod
from . import motion as motion_mod
from . import struct as struct_mod
from . import text as text_mod
from . import video as video_mod
from .box import BoundingBox, BoxQuantizer

DEFAULT_IMAGE_RESOLUTION = 64
DEFAULT_PATCH_SIZE = 8
DEFAULT_NUM_BINS = 1000
DEFAULT_MOTION_WIDTH = 12
DEFAULT_SAMPLE_RATE = 16000

_VOCAB_CACHE: dict[str, object] = {}


def get_vocab(name: str, num_bins: int = DEFAULT_NUM_BINS):
    key = f"{name}:{num_bins}" if name == "box" else name
    if key not in _VOCAB_CACHE:
        if name == "text":
            _VOCAB_CACHE[key] = TEXT_VOCAB
        elif name == "box":
            _VOCAB_CACHE[key] = RangeVocab("box", num_bins)
        elif name == "image_code":
            _VOCAB_CACHE[key] = RangeVocab("image_code", 256)
        else:
            raise PlanError(f"unknown vocabulary '{name}'")
    return _VOCAB_CACHE[key]


@dataclass
class ProcessedItem:
    slot: PlanSlot
    tokens: Optional[list[int]] = None
    features: Optional[np.ndarray] = None
    vocab: Optional[str] = None
    raw: object = None  # resolved raw value, kept for postprocessing/metrics

    @property
    def length(self) -> int:
        if self.tokens is not None:
            return len(self.tokens)
        return 0 if self.features is None else self.features.shape[0]


@dataclass
class SlotGroup:
    """One instruction slot position collated across the batch."""

    slot: PlanSlot
    items: list[list[ProcessedItem]]  # per example; >1 entry after expansion
    padded_tokens: Optional[np.ndarray] = None   # (B, Lmax) int64
    padded_features: Optional[np.ndarray] = None  # (B, Lmax, D) float32
    mask: Optional[np.ndarray] = None            # (B, Lmax) bool
    lengths: Optional[np.ndarray] = None

    def collate(self) -> "SlotGroup":
        flat = [sum((it.tokens or [] for it in ex), start=[]) if
                all(it.tokens is not None for it in ex) else None
                for ex in self.items]
        lengths = []
        if all(f is not None for f in flat):
            lengths = [len(f) for f in flat]
            lmax = max(lengths) if lengths else 0
            toks = np.zeros((len(flat), lmax), dtype=np.int64)
            mask = np.zeros((len(flat), lmax), dtype=bool)
            for i, seq in enumerate(flat):
                toks[i, :len(seq)] = seq
                mask[i, :len(seq)] = True
            self.padded_tokens, self.mask = toks, mask
        else:
            feats = [np.concatenate([it.features for it in ex], axis=0)
                     if ex else np.zeros((0, 1), dtype=np.float32)
                     for ex in self.items]
            lengths = [f.shape[0] for f in feats]
            dim = max((f.shape[1] for f in feats if f.size), default=1)
            lmax = max(lengths) if lengths else 0
            arr = np.zeros((len(feats), lmax, dim), dtype=np.float32)
            mask = np.zeros((len(feats), lmax), dtype=bool)
            for i, f in enumerate(feats):
                arr[i, :f.shape[0], :] = f
                mask[i, :f.shape[0]] = True
            self.padded_features, self.mask = arr, mask
        self.lengths = np.array(lengths, dtype=np.int64)
        return self


@dataclass
class ProcessedBatch:
    encoder_groups: list[SlotGroup]
    decoder_groups: list[SlotGroup]
    plans: list[BoundPlan] = field(default_factory=list)


# --- raw value resolution ----------------------------------------------------

def _resolve_path(value: str, base_dir: Optional[str]) -> Optional[str]:
    if not isinstance(value, str) or len(value) > 4096 or "\n" in value:
        return None
    candidates = [value]
    if base_dir:
        candidates.append(os.path.join(base_dir, value))
    for cand in candidates:
        if os.path.isfile(cand):
            return cand
    return None


def resolve_image(value, base_dir=None) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(np.uint8)
    if isinstance(value, str):
        path = _resolve_path(value, base_dir)
        if path:
            if path.endswith(".npy"):
                return np.load(path).astype(np.uint8)
            return image_mod.read_ppm(path)
        try:
            return np.asarray(json.loads(value), dtype=np.uint8)
        except (json.JSONDecodeError, ValueError):
            raise BadImage(f"cannot resolve image value {value[:60]!r}") from None
    raise BadImage(f"cannot resolve image value of type {type(value).__name__}")


def resolve_array(value, base_dir=None) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value
    if isinstance(value, (list, tuple)):
        return np.asarray(value, dtype=np.float64)
    if isinstance(value, str):
        path = _resolve_path(value, base_dir)
        if path and path.endswith(".npy"):
            return np.load(path)
        try:
            return np.asarray(json.loads(value), dtype=np.float64)
        except (json.JSONDecodeError, ValueError):
            raise ModalityError(f"cannot resolve array value {value[:60]!r}") from None
    raise ModalityError(f"cannot resolve array of type {type(value).__name__}")


def resolve_struct(value):
    if isinstance(value, (list, dict)):
        return value
    return struct_mod.parse_struct_cell(value)


def resolve_motion(value, base_dir=None) -> np.ndarray:
    """Returns the (n, 6+6m) clip array; accepts BVH text/paths or arrays."""
    if isinstance(value, np.ndarray):
        return value.astype(np.float64)
    if isinstance(value, str):
        path = _resolve_path(value, base_dir)
        if path:
            if path.endswith(".npy"):
                return np.load(path).astype(np.float64)
            with open(path) as fh:
                value = fh.read()
        if value.lstrip().startswith("HIERARCHY"):
            return motion_mod.motion_bvh_to_6d(value).frames
        return np.asarray(json.loads(value), dtype=np.float64)
    return np.asarray(value, dtype=np.float64)


# --- per-slot preprocessing ---------------------------------------------------

def preprocess_slot(slot: PlanSlot, value, rng: np.random.Generator,
                    base_dir: Optional[str] = None) -> ProcessedItem:
    """Run the slot's preprocessor; returns tokens or feature frames."""
    pre = slot.preprocessor
    params = slot.params

    if pre == "text":
        tokens = text_mod.text_tokenize(str(value), TEXT_VOCAB,
                                        params.get("max_length"))
        if params.get("mask_ratio"):
            tokens = text_mod.apply_text_mask(tokens, float(params["mask_ratio"]), rng)
        if slot.is_decoder and params.get("noise_ratio"):
            tokens = text_mod.apply_text_noise(tokens, float(params["noise_ratio"]),
                                               rng, TEXT_VOCAB)
        return ProcessedItem(slot, tokens=tokens, vocab="text", raw=str(value))

    if pre in ("struct_text", "table_to_text", "database_to_text", "sudoku_to_text"):
        if pre == "sudoku_to_text":
            grid = resolve_array(value).astype(int)
            text = struct_mod.sudoku_to_text(grid)
        elif pre == "database_to_text":
            text = struct_mod.database_to_text(resolve_struct(value))
        elif pre == "table_to_text":
            text = struct_mod.table_to_text(resolve_struct(value))
        else:
            text = struct_mod.struct_to_text(resolve_struct(value))
        tokens = text_mod.text_tokenize(text, TEXT_VOCAB, params.get("max_length"))
        return ProcessedItem(slot, tokens=tokens, vocab="text", raw=text)

    if pre == "box_quantize":
        num_bins = int(params.get("num_bins", DEFAULT_NUM_BINS))
        w = float(params.get("image_w", params.get("resolution", DEFAULT_IMAGE_RESOLUTION)))
        h = float(params.get("image_h", params.get("resolution", DEFAULT_IMAGE_RESOLUTION)))
        quant = BoxQuantizer(w, h, num_bins)
        box = value if isinstance(value, BoundingBox) else BoundingBox.from_text(str(value))
        vocab = get_vocab("box", num_bins)
        return ProcessedItem(slot, tokens=vocab.encode(list(quant.quantize(box))),
                             vocab="box", raw=box)

    if pre == "image_patch":
        img = resolve_image(value, base_dir)
        resolution = int(params.get("patch_image_size",
                                    params.get("resolution", DEFAULT_IMAGE_RESOLUTION)))
        patch = int(params.get("patch_size", DEFAULT_PATCH_SIZE))
        img = image_mod.resize_bilinear(img, resolution, resolution)
        if params.get("mask_ratio"):
            img = image_mod.apply_center_mask(img, float(params["mask_ratio"]))
        feats = image_mod.image_to_patches(img, patch)
        return ProcessedItem(slot, features=feats, raw=img)

    if pre == "image_code":
        img = resolve_image(value, base_dir)
        codes = image_mod.image_code_encode(img)
        vocab = get_vocab("image_code")
        return ProcessedItem(slot, tokens=vocab.encode(codes), vocab="image_code",
                             raw=img)

    if pre == "video_frames":
        frames = resolve_array(value, base_dir)
        if frames.ndim != 4:
            raise BadImage(f"video value must be TxHxWxC, got {frames.shape}")
        feats = video_mod.video_to_patches(
            frames.astype(np.uint8),
            int(params.get("patch_size", DEFAULT_PATCH_SIZE)),
            int(params.get("patch_image_size",
                           params.get("resolution", DEFAULT_IMAGE_RESOLUTION))),
            int(params.get("num_frames", video_mod.DEFAULT_NUM_FRAMES)),
        )
        return ProcessedItem(slot, features=feats, raw=frames)

    if pre == "wave_fbank":
        arr = resolve_array(value, base_dir)
        rate = int(params.get("sample_rate", DEFAULT_SAMPLE_RATE))
        if arr.ndim == 2 and arr.shape[1] == audio_mod.N_MELS:
            feats = arr.astype(np.float32)  # already fbank frames
        else:
            feats = audio_mod.wave_to_fbank(arr, rate, cmvn=bool(params.get("cmvn", False)))
        return ProcessedItem(slot, features=feats, raw=arr)

    if pre == "motion_6d":
        frames = resolve_motion(value, base_dir)
        if frames.ndim != 2 or frames.shape[1] % 6 != 0:
            raise ModalityError(f"motion clip must be (n, 6+6m), got {frames.shape}")
        return ProcessedItem(slot, features=frames.astype(np.float32), raw=frames)

    if pre == "prompt":
        length = int(params.get("len", 1))
        return ProcessedItem(slot, features=np.zeros((length, 0), dtype=np.float32))

    raise PlanError(f"no preprocessor implementation for '{pre}'")


# --- batch dispatch -------------------------------------------------------------

def dispatch(bound_plans: list[BoundPlan], rngs: Optional[list[np.random.Generator]] = None,
             base_dir: Optional[str] = None) -> ProcessedBatch:
    """Preprocess and collate a batch of bound plans, slot position by slot
    position.  All plans must share one slot-type sequence (collation
    compatibility); errors gain the offending slot index as context.
    """
    if not bound_plans:
        raise PlanError("empty batch")
    if rngs is None:
        rngs = [np.random.default_rng(0) for _ in bound_plans]

    def build_groups(side: str) -> list[SlotGroup]:
        per_example = []
        n_groups = 0
        for bp in bound_plans:
            slot_segs = [s for s in getattr(bp, side) if s.segment.is_slot]
            per_example.append(slot_segs)
            for seg in slot_segs:
                n_groups = max(n_groups, seg.segment.group_index + 1)
        groups: list[SlotGroup] = []
        for g_idx in range(n_groups):
            template = None
            items_per_example: list[list[ProcessedItem]] = []
            for ex_idx, slot_segs in enumerate(per_example):
                segs = [s for s in slot_segs if s.segment.group_index == g_idx]
                if segs and template is None:
                    template = segs[0].segment
                items = []
                for seg in segs:
                    if seg.value is None and seg.segment.is_decoder and \
                            seg.segment.kind != "virtual":
                        continue  # unbound generation target (inference)
                    try:
                        items.append(preprocess_slot(seg.segment, seg.value,
                                                     rngs[ex_idx], base_dir))
                    except Exception as exc:
                        raise type(exc)(
                            f"{side} slot {g_idx} [{seg.segment.slot_type}]: {exc}"
                        ) from exc
                items_per_example.append(items)
            if template is None:
                continue  # every example expanded this group to zero slots
            groups.append(SlotGroup(template, items_per_example).collate())
        return groups

    return ProcessedBatch(build_groups("encoder"), build_groups("decoder"),
                          list(bound_plans))
