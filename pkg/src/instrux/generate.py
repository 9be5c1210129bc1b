"""Inference generators: constrained autoregressive token decoding (beam
search with forced prefixes, closed-set tries, and n-gram blocking),
autoregressive feature decoding with a stop head, and ancestral DDPM
sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .criteria import DdpmSchedule
from .errors import NoValidContinuation, PlanError
from .executor import Executor, example_pieces
from .gen_specs import ArFeature, ArToken, Diffusion
from .instruction import TEXT
from .modality.box import BoxQuantizer
from .modality.dispatch import (
    DEFAULT_IMAGE_RESOLUTION,
    DEFAULT_NUM_BINS,
    ProcessedBatch,
    get_vocab,
)
from .plan import BoundPlan, PlanSlot, TEXT_VOCAB
from .sequence import EmbeddingSequence
from .vocab import BOS, EOS

_Record = tuple[int, str, int]  # (token id, adapter id, modality tag)


@dataclass
class TokenGeneration:
    free_tokens: list[int]
    score: float
    prefix_records: list[_Record]
    slot: PlanSlot
    finished: bool

    def value(self):
        """Postprocess the generated tokens into the slot's raw type."""
        if self.slot.vocab == "text":
            return TEXT_VOCAB.detokenize(self.free_tokens)
        if self.slot.vocab == "box":
            num_bins = int(self.slot.params.get("num_bins", DEFAULT_NUM_BINS))
            w = float(self.slot.params.get(
                "image_w", self.slot.params.get("resolution", DEFAULT_IMAGE_RESOLUTION)))
            h = float(self.slot.params.get(
                "image_h", self.slot.params.get("resolution", DEFAULT_IMAGE_RESOLUTION)))
            vocab = get_vocab("box", num_bins)
            codes = vocab.decode(self.free_tokens)[:4]
            while len(codes) < 4:
                codes.append(0)
            return BoxQuantizer(w, h, num_bins).dequantize(codes)
        if self.slot.vocab == "image_code":
            from .modality.image import image_code_decode
            return image_code_decode(get_vocab("image_code").decode(self.free_tokens))
        return self.free_tokens

    def full_text(self) -> str:
        """Forced prefix plus generated region, detokenized (text streams)."""
        prefix_ids = [tok for tok, adapter, _ in self.prefix_records
                      if adapter == "text_embed" and tok != BOS]
        return TEXT_VOCAB.detokenize(prefix_ids + list(self.free_tokens))


@dataclass
class _Hyp:
    tokens: list[int] = field(default_factory=list)
    logp: float = 0.0
    node: Optional[dict] = None
    done: bool = False

    def score(self) -> float:
        # length-normalized (exponent 1.0) over the generated region incl. EOS
        return self.logp / max(len(self.tokens) + (1 if self.done else 0), 1)


def _prefix_and_free(bound: BoundPlan, batch: ProcessedBatch,
                     example_index: int) -> tuple[list[_Record], PlanSlot]:
    """Forced decoder records preceding the single free generation slot."""
    pieces = example_pieces(bound, batch, "decoder", example_index)
    free_positions = [i for i, p in enumerate(pieces)
                      if p.tokens is None and p.features is None and p.prompt_len == 0]
    if not free_positions:
        # fully bound decoder (e.g. evaluation reuse): treat last slot piece as free
        raise PlanError("no free decoder slot to generate; bind without the "
                        "target column for inference")
    if len(free_positions) > 1 or free_positions[0] != len(pieces) - 1:
        raise PlanError("generation supports exactly one trailing free decoder slot")
    free = pieces[free_positions[0]]
    records: list[_Record] = []
    for piece in pieces[:free_positions[0]]:
        if piece.tokens is None:
            raise PlanError("non-token forced piece in decoder prefix")
        records.extend((tok, piece.adapter, piece.tag) for tok in piece.tokens)
    return records, free.slot


def _banned_ngram_tokens(tokens: list[int], n: int) -> set[int]:
    if n <= 0 or len(tokens) < n - 1:
        return set()
    banned = set()
    tail = tuple(tokens[len(tokens) - (n - 1):]) if n > 1 else ()
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i:i + n])
        if gram[:-1] == tail:
            banned.add(gram[-1])
    return banned


def generate_tokens(executor: Executor, bound_plans: list[BoundPlan],
                    spec: ArToken, batch: ProcessedBatch,
                    memory: EmbeddingSequence) -> list[TokenGeneration]:
    """Beam search (beam=1 is greedy) under forced-prefix / closed-set /
    no-repeat-ngram constraints.  Scores are length-normalized log
    probabilities over the generated region.
    """
    results = []
    for i, bound in enumerate(bound_plans):
        prefix, slot = _prefix_and_free(bound, batch, i)
        results.append(_generate_one(executor, prefix, slot, spec,
                                     _slice_memory(memory, i)))
    return results


def _slice_memory(memory: EmbeddingSequence, i: int) -> EmbeddingSequence:
    return EmbeddingSequence(memory.values[i:i + 1], memory.mask[i:i + 1],
                             memory.tags[i:i + 1])


def _repeat_memory(memory: EmbeddingSequence, n: int) -> EmbeddingSequence:
    return EmbeddingSequence(memory.values.expand(n, -1, -1),
                             memory.mask.expand(n, -1),
                             memory.tags.expand(n, -1))


def _generate_one(executor: Executor, prefix: list[_Record], slot: PlanSlot,
                  spec: ArToken, memory: EmbeddingSequence) -> TokenGeneration:
    table = executor.registry.get(slot.adapter)
    trie = slot.closed_set.trie if slot.closed_set is not None else None
    first_adapter = prefix[0][1] if prefix else slot.adapter
    first_tag = prefix[0][2] if prefix else slot.tag
    bos_record: _Record = (BOS, first_adapter, first_tag)

    # the decoder input (BOS + prefix + generated) must fit the position table
    room = executor.registry.get("pos_embed").weight.shape[0] - len(prefix) - 1
    if room < 1:
        raise PlanError(f"forced prefix of {len(prefix)} tokens leaves no room "
                        f"to generate within max_positions")
    max_new = min(spec.max_len, room)

    hyps = [_Hyp(node=trie.start() if trie else None)]
    finished: list[_Hyp] = []
    for _step in range(max_new + 1):
        live = [h for h in hyps if not h.done]
        if not live:
            break
        rows = [[bos_record] + prefix +
                [(t, slot.adapter, slot.tag) for t in h.tokens] for h in live]
        seq = executor.embed_input_records(rows)
        hidden = executor.model.decode(executor._add_positions(seq),
                                       _repeat_memory(memory, len(live))).values
        logits = table.logits(hidden[:, -1])
        logp = torch.log_softmax(logits, dim=-1)

        candidates: list[tuple[float, _Hyp, int]] = []
        for row, hyp in enumerate(live):
            scores = logp[row].clone()
            gen_len = len(hyp.tokens)
            if spec.fixed_len is not None:
                if gen_len < spec.fixed_len:
                    scores[EOS] = float("-inf")
                else:
                    keep = scores[EOS].item()
                    scores.fill_(float("-inf"))
                    scores[EOS] = keep
            if trie is not None:
                allowed, terminal = trie.allowed(hyp.node)
                mask = torch.full_like(scores, float("-inf"))
                for tok in allowed:
                    mask[tok] = 0.0
                if terminal:
                    mask[EOS] = 0.0
                scores = scores + mask
            if spec.no_repeat_ngram > 0:
                for tok in _banned_ngram_tokens(hyp.tokens, spec.no_repeat_ngram):
                    scores[tok] = float("-inf")
            if bool(torch.isinf(scores).all()):
                raise NoValidContinuation(
                    "every continuation is banned by the decoding constraints")
            k = min(spec.beam + 1, scores.shape[0])
            top = torch.topk(scores, k)
            for val, tok in zip(top.values.tolist(), top.indices.tolist()):
                if math.isinf(val):
                    continue
                candidates.append((hyp.logp + val, hyp, tok))

        candidates.sort(key=lambda c: c[0], reverse=True)
        new_live: list[_Hyp] = []
        for total, hyp, tok in candidates:
            if tok == EOS:
                done = _Hyp(list(hyp.tokens), total, hyp.node, done=True)
                finished.append(done)
            elif len(new_live) < spec.beam:
                node = trie.step(hyp.node, tok) if trie is not None else None
                new_live.append(_Hyp(hyp.tokens + [tok], total, node))
            if len(new_live) >= spec.beam and len(finished) >= spec.beam:
                break
        hyps = new_live
        if len(finished) >= spec.beam and (
                not hyps or max(h.score() for h in finished) >=
                max(h.logp / max(len(h.tokens) + 1, 1) for h in hyps)):
            break

    pool = finished if finished else hyps
    if not pool:
        raise NoValidContinuation("beam search produced no hypotheses")
    best = max(pool, key=lambda h: h.score())
    return TokenGeneration(best.tokens, best.score(), [bos_record] + prefix,
                           slot, best.done)


def generate_features(executor: Executor, bound_plans: list[BoundPlan],
                      spec: ArFeature, batch: ProcessedBatch,
                      memory: EmbeddingSequence) -> list[np.ndarray]:
    """Append predicted frames until the stop head fires or max_frames."""
    outputs = []
    for i, bound in enumerate(bound_plans):
        slot = [s for s in bound.plan.decoder_segments if s.is_slot][0]
        adapter = executor.registry.get(slot.adapter)
        mem = _slice_memory(memory, i)
        frames: list[torch.Tensor] = []
        room = executor.registry.get("pos_embed").weight.shape[0] - 1
        for _ in range(min(spec.max_frames, room)):
            n = len(frames)
            inputs = torch.zeros(1, n + 1, adapter.n_mels, dtype=executor.dtype)
            for j, f in enumerate(frames):
                inputs[0, j + 1] = f
            mask = torch.ones(1, n + 1, dtype=torch.bool)
            tags = torch.full((1, n + 1), slot.tag, dtype=torch.long)
            seq = EmbeddingSequence(adapter(inputs), mask, tags)
            hidden = executor.model.decode(executor._add_positions(seq), mem).values
            pred, stop_logits = adapter.output(hidden[:, -1:])
            frames.append(pred[0, 0].detach())
            if torch.sigmoid(stop_logits[0, 0]) > spec.stop_threshold:
                break
        outputs.append(torch.stack(frames).numpy() if frames else
                       np.zeros((0, adapter.n_mels), dtype=np.float32))
    return outputs


def ancestral_sample(
    eps_fn: Callable[[torch.Tensor, int], torch.Tensor],
    shape: tuple[int, ...],
    schedule: DdpmSchedule,
    rng: np.random.Generator,
    sample_steps: Optional[int] = None,
) -> np.ndarray:
    """Ancestral DDPM sampling from x_T ~ N(0, I) down to x_0.

    ``eps_fn`` predicts the noise in ``x_t`` at integer step ``t``.  When
    ``sample_steps`` is fewer than the schedule's steps, an evenly strided
    timestep subsequence is used with the matching posterior variance.
    """
    abar = schedule.alpha_bars
    total = schedule.steps
    n = min(sample_steps or total, total)
    timesteps = np.unique(np.linspace(0, total - 1, n).round().astype(int))[::-1]
    x = torch.as_tensor(rng.standard_normal(shape), dtype=torch.float32)
    for idx, t in enumerate(timesteps):
        prev_abar = abar[timesteps[idx + 1]] if idx + 1 < len(timesteps) else 1.0
        eps = eps_fn(x, int(t))
        a_t = abar[t]
        x0_hat = (x - math.sqrt(1.0 - a_t) * eps) / math.sqrt(a_t)
        if idx + 1 < len(timesteps):
            var = (1.0 - prev_abar) / (1.0 - a_t) * (1.0 - a_t / prev_abar)
            var = max(var, 0.0)
            noise = torch.as_tensor(rng.standard_normal(shape), dtype=torch.float32)
            coeff = math.sqrt(max(1.0 - prev_abar - var, 0.0))
            x = math.sqrt(prev_abar) * x0_hat + coeff * eps + math.sqrt(var) * noise
        else:
            x = x0_hat
    return x.numpy()


def generate_diffusion(executor: Executor, bound_plans: list[BoundPlan],
                       spec: Diffusion, batch: ProcessedBatch,
                       memory: EmbeddingSequence,
                       rng: np.random.Generator,
                       output_shape: Optional[tuple[int, int]] = None) -> list[np.ndarray]:
    """Sample continuous decoder targets with the model as noise predictor."""
    outputs = []
    for i, bound in enumerate(bound_plans):
        slot = [s for s in bound.plan.decoder_segments if s.is_slot][0]
        adapter = executor.registry.get(slot.adapter)
        if output_shape is not None:
            shape = output_shape
        else:
            group = batch.decoder_groups[0]
            n_frames = int(group.lengths[i]) if group.lengths is not None else 0
            if n_frames == 0:
                n_frames = spec.output_frames or 0
            if n_frames == 0:
                raise PlanError("diffusion generation needs a bound target shape "
                                "or generator_args.output_frames")
            shape = (n_frames, adapter.d_in)
        mem = _slice_memory(memory, i)
        mask = torch.ones(1, shape[0], dtype=torch.bool)

        def eps_fn(x_t: torch.Tensor, t: int) -> torch.Tensor:
            with torch.no_grad():
                xt = x_t.unsqueeze(0).to(executor.dtype)
                pred = executor.denoise(xt, torch.tensor([t]), mask, mem, slot)
            return pred[0].to(torch.float32)

        outputs.append(ancestral_sample(eps_fn, shape, spec.schedule, rng,
                                        spec.sample_steps))
    return outputs
