"""Forward execution: bound plans -> embedding sequences -> criterion losses.

The executor walks each example's segment stream (constant token runs plus
preprocessed slot items), embeds every piece through its adapter, packs the
batch, runs the universal model, and evaluates the plan's criterion.  Token
streams may mix vocabularies (e.g. BOX and TEXT in detection); logits are
always computed against each position's own table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .adapters import (
    AdapterRegistry,
    AudioTargetAdapter,
    PromptAdapter,
    TokenEmbedding,
    add_ddpm_step_embedding,
    project_features,
)
from .criteria import (
    Ddpm,
    LabelSmoothedCE,
    MseWithStop,
    ce_loss,
    ddpm_corrupt,
    ddpm_loss,
    mse_stop_loss,
)
from .errors import AllMasked, PlanError
from .instruction import TEXT
from .model import UniversalModel
from .modality.dispatch import ProcessedBatch, ProcessedItem, dispatch
from .plan import BoundPlan, PlanSlot
from .sequence import EmbeddingSequence, pack_ragged
from .vocab import BOS, EOS, NUM_SPECIALS

SPACE_ID = NUM_SPECIALS + ord(" ")


@dataclass
class StreamPiece:
    """One contiguous chunk of an example's sequence."""

    tokens: Optional[list[int]] = None
    features: Optional[np.ndarray] = None
    prompt_len: int = 0
    adapter: str = "text_embed"
    tag: int = TEXT
    loss: bool = True
    forced: bool = True  # known at inference time (plain runs, no_loss slots)
    slot: Optional[PlanSlot] = None

    @property
    def is_text_tokens(self) -> bool:
        return self.tokens is not None and self.adapter == "text_embed"


def _space_piece(loss: bool, forced: bool) -> StreamPiece:
    return StreamPiece(tokens=[SPACE_ID], loss=loss, forced=forced)


def example_pieces(bound: BoundPlan, batch: ProcessedBatch, side: str,
                   example_index: int) -> list[StreamPiece]:
    """The ordered piece stream of one example, spaces joining text chunks."""
    groups = batch.encoder_groups if side == "encoder" else batch.decoder_groups
    by_group = {g.slot.group_index: g for g in groups}
    segments = bound.encoder if side == "encoder" else bound.decoder

    raw: list[StreamPiece] = []
    seen_groups: set[int] = set()
    for seg in segments:
        segment = seg.segment
        if not segment.is_slot:
            raw.append(StreamPiece(tokens=list(segment.token_ids)))
            continue
        gi = segment.group_index
        if gi in seen_groups:
            continue  # expanded members materialize with their group
        seen_groups.add(gi)
        group = by_group.get(gi)
        items = group.items[example_index] if group is not None else []
        if not items and segment.is_decoder and not segment.loss_masked:
            # free generation target with no bound value (inference)
            raw.append(StreamPiece(tokens=None, adapter=segment.adapter,
                                   tag=segment.tag, loss=True, forced=False,
                                   slot=segment))
            continue
        for item in items:
            slot = item.slot
            if slot.kind == "virtual":
                raw.append(StreamPiece(prompt_len=item.length, adapter=slot.adapter,
                                       tag=slot.tag, slot=slot))
            elif item.tokens is not None:
                raw.append(StreamPiece(tokens=list(item.tokens), adapter=slot.adapter,
                                       tag=slot.tag, loss=not slot.loss_masked,
                                       forced=slot.loss_masked, slot=slot))
            else:
                raw.append(StreamPiece(features=item.features, adapter=slot.adapter,
                                       tag=slot.tag, loss=not slot.loss_masked,
                                       forced=slot.loss_masked, slot=slot))

    def wants_space(prev: StreamPiece, piece: StreamPiece) -> bool:
        if not prev.is_text_tokens:
            return False
        if piece.is_text_tokens:
            return True
        if piece.tokens is None and piece.features is None and piece.prompt_len == 0:
            return piece.adapter == "text_embed"  # free text target at inference
        return False

    out: list[StreamPiece] = []
    for piece in raw:
        if out and wants_space(out[-1], piece):
            out.append(_space_piece(piece.loss, piece.forced))
        out.append(piece)
    return out


class Executor:
    def __init__(self, model: UniversalModel, registry: AdapterRegistry):
        self.model = model
        self.registry = registry
        self.dtype = model.cfg.torch_dtype

    # --- embedding ---------------------------------------------------------

    def _embed_piece(self, piece: StreamPiece) -> tuple[torch.Tensor, torch.Tensor]:
        """(values (L, D), tags (L,)) for one piece."""
        adapter = self.registry.get(piece.adapter)
        if piece.prompt_len:
            assert isinstance(adapter, PromptAdapter)
            values = adapter(1)[0]
        elif piece.tokens is not None:
            ids = torch.tensor(piece.tokens, dtype=torch.long)
            values = adapter.embed(ids)
        else:
            feats = torch.as_tensor(piece.features, dtype=self.dtype)
            seq = project_features(feats.unsqueeze(0),
                                   torch.ones(1, feats.shape[0], dtype=torch.bool),
                                   adapter, piece.tag)
            values = seq.values[0][seq.mask[0]]
        tags = torch.full((values.shape[0],), piece.tag, dtype=torch.long)
        return values, tags

    def _add_positions(self, seq: EmbeddingSequence) -> EmbeddingSequence:
        pos = self.registry.get("pos_embed")(seq.length)
        values = seq.values + pos.unsqueeze(0).to(seq.values.dtype)
        return seq.zero_padding().with_values(
            values * seq.mask.unsqueeze(-1).to(values.dtype))

    def encode(self, bound_plans: list[BoundPlan], batch: ProcessedBatch) -> EmbeddingSequence:
        rows, tag_rows = [], []
        for i, bound in enumerate(bound_plans):
            pieces = example_pieces(bound, batch, "encoder", i)
            vals, tags = [], []
            for piece in pieces:
                v, t = self._embed_piece(piece)
                vals.append(v)
                tags.append(t)
            rows.append(torch.cat(vals, dim=0) if vals else
                        torch.zeros(0, self.model.cfg.d_model, dtype=self.dtype))
            tag_rows.append(torch.cat(tags, dim=0) if tags else
                            torch.zeros(0, dtype=torch.long))
        seq = pack_ragged(rows, tag_rows)
        return self.model.encode(self._add_positions(seq))

    # --- decoder batches -----------------------------------------------------

    def token_records(self, bound: BoundPlan, batch: ProcessedBatch,
                      example_index: int, with_eos: bool = True):
        """Flat (token, adapter, tag, loss, forced) records for one example."""
        pieces = example_pieces(bound, batch, "decoder", example_index)
        records = []
        for piece in pieces:
            if piece.tokens is None:
                raise PlanError("decoder stream contains a non-token piece")
            for tok in piece.tokens:
                records.append((tok, piece.adapter, piece.tag, piece.loss, piece.forced))
        if with_eos:
            last = records[-1] if records else (0, "text_embed", TEXT, True, False)
            records.append((EOS, last[1], last[2], True, False))
        return records

    def embed_input_records(self, rows: list[list[tuple[int, str, int]]]) -> EmbeddingSequence:
        """Embed explicit (token, adapter, tag) rows (generation inputs)."""
        n = len(rows)
        lmax = max(len(r) for r in rows)
        table_ids = sorted({rec[1] for row in rows for rec in row})
        table_pos = {t: i for i, t in enumerate(table_ids)}
        ids = torch.zeros(n, lmax, dtype=torch.long)
        table_index = torch.full((n, lmax), -1, dtype=torch.long)
        tags = torch.full((n, lmax), -1, dtype=torch.long)
        mask = torch.zeros(n, lmax, dtype=torch.bool)
        for b, row in enumerate(rows):
            for j, (tok, table, tag) in enumerate(row):
                ids[b, j] = tok
                table_index[b, j] = table_pos[table]
                tags[b, j] = tag
                mask[b, j] = True
        values = torch.zeros(n, lmax, self.model.cfg.d_model, dtype=self.dtype)
        for ti, table_id in enumerate(table_ids):
            sel = table_index == ti
            if sel.any():
                values = values.index_put((sel,), self.registry.get(table_id).embed(ids[sel]))
        return EmbeddingSequence(values, mask, tags)

    def _token_batch(self, bound_plans, batch: ProcessedBatch):
        all_records = [self.token_records(b, batch, i)
                       for i, b in enumerate(bound_plans)]
        table_ids = sorted({r[1] for recs in all_records for r in recs})
        table_pos = {t: i for i, t in enumerate(table_ids)}
        bsz = len(all_records)
        lmax = max(len(r) for r in all_records)
        targets = torch.zeros(bsz, lmax, dtype=torch.long)
        table_index = torch.full((bsz, lmax), -1, dtype=torch.long)
        mask = torch.zeros(bsz, lmax, dtype=torch.bool)
        loss_mask = torch.zeros(bsz, lmax, dtype=torch.bool)
        tags = torch.full((bsz, lmax), -1, dtype=torch.long)
        input_ids = torch.zeros(bsz, lmax, dtype=torch.long)
        input_table = torch.full((bsz, lmax), -1, dtype=torch.long)
        input_tags = torch.full((bsz, lmax), -1, dtype=torch.long)
        for b, recs in enumerate(all_records):
            for j, (tok, table, tag, loss, _forced) in enumerate(recs):
                targets[b, j] = tok
                table_index[b, j] = table_pos[table]
                mask[b, j] = True
                loss_mask[b, j] = loss
                tags[b, j] = tag
                if j == 0:
                    input_ids[b, 0] = BOS
                    input_table[b, 0] = table_pos[recs[0][1]]
                    input_tags[b, 0] = recs[0][2]
                else:
                    input_ids[b, j] = recs[j - 1][0]
                    input_table[b, j] = table_pos[recs[j - 1][1]]
                    input_tags[b, j] = recs[j - 1][2]
        values = torch.zeros(bsz, lmax, self.model.cfg.d_model, dtype=self.dtype)
        for ti, table_id in enumerate(table_ids):
            table = self.registry.get(table_id)
            sel = input_table == ti
            if sel.any():
                flat = table.embed(input_ids[sel])
                values = values.index_put((sel,), flat)
        input_seq = EmbeddingSequence(values, mask, input_tags)
        return input_seq, targets, table_index, table_ids, loss_mask, tags, mask

    def _token_loss(self, bound_plans, batch, memory, criterion: LabelSmoothedCE):
        (input_seq, targets, table_index, table_ids,
         loss_mask, _tags, mask) = self._token_batch(bound_plans, batch)
        hidden = self.model.decode(self._add_positions(input_seq), memory).values
        supervised = loss_mask & mask
        count = int(supervised.sum().item())
        if count == 0:
            raise AllMasked("decoder batch has no supervised positions")
        total = hidden.new_zeros(())
        for ti, table_id in enumerate(table_ids):
            sel = supervised & (table_index == ti)
            if not sel.any():
                continue
            table = self.registry.get(table_id)
            logits = table.logits(hidden[sel])
            part, _n, _pp = ce_loss(logits, targets[sel],
                                    torch.ones_like(targets[sel], dtype=torch.bool),
                                    criterion.epsilon)
            total = total + part
        return total, count

    def _audio_batch(self, batch: ProcessedBatch):
        group = batch.decoder_groups[0]
        targets = torch.as_tensor(group.padded_features, dtype=self.dtype)
        mask = torch.as_tensor(group.mask)
        return group, targets, mask

    def _audio_loss(self, bound_plans, batch, memory, criterion: MseWithStop):
        group, targets, mask = self._audio_batch(batch)
        adapter = self.registry.get(group.slot.adapter)
        assert isinstance(adapter, AudioTargetAdapter)
        go = torch.zeros_like(targets[:, :1])
        inputs = torch.cat([go, targets[:, :-1]], dim=1)
        values = adapter(inputs) * mask.unsqueeze(-1).to(self.dtype)
        tags = torch.where(mask, torch.full(mask.shape, group.slot.tag),
                           torch.full(mask.shape, -1)).long()
        seq = EmbeddingSequence(values, mask, tags)
        hidden = self.model.decode(self._add_positions(seq), memory).values
        pred, stop_logits = adapter.output(hidden)
        loss, count = mse_stop_loss(pred, stop_logits, targets, mask,
                                    criterion.stop_weight)
        return loss, count

    def _motion_loss(self, bound_plans, batch, memory, criterion: Ddpm,
                     rngs: list[np.random.Generator]):
        group, x0, mask = self._audio_batch(batch)
        schedule = criterion.schedule
        bsz = x0.shape[0]
        t = torch.tensor([int(rngs[i].integers(schedule.steps)) for i in range(bsz)])
        noise = torch.as_tensor(
            np.stack([rngs[i].standard_normal(x0.shape[1:]) for i in range(bsz)]),
            dtype=self.dtype)
        noise = noise * mask.unsqueeze(-1).to(self.dtype)
        x_t = ddpm_corrupt(x0, t, noise, schedule)
        eps_pred = self.denoise(x_t, t, mask, memory, group.slot)
        return ddpm_loss(eps_pred, noise, mask)

    def denoise(self, x_t: torch.Tensor, t: torch.Tensor, mask: torch.Tensor,
                memory: EmbeddingSequence, slot: PlanSlot) -> torch.Tensor:
        """Predict the noise in x_t at step t (used by loss and sampler)."""
        adapter = self.registry.get(slot.adapter)
        values = adapter(x_t) * mask.unsqueeze(-1).to(self.dtype)
        tags = torch.where(mask, torch.full(mask.shape, slot.tag),
                           torch.full(mask.shape, -1)).long()
        seq = EmbeddingSequence(values, mask, tags)
        seq = add_ddpm_step_embedding(self._add_positions(seq), t,
                                      self.registry.get("ddpm_step"))
        hidden = self.model.decode(seq, memory).values
        return adapter.output(hidden)

    # --- public entry ---------------------------------------------------------

    def forward_loss(self, bound_plans: list[BoundPlan],
                     rngs: Optional[list[np.random.Generator]] = None,
                     base_dir: Optional[str] = None):
        """(loss_sum, supervised unit count) for one micro-batch."""
        if rngs is None:
            rngs = [np.random.default_rng(0) for _ in bound_plans]
        batch = dispatch(bound_plans, rngs, base_dir)
        memory = self.encode(bound_plans, batch)
        criterion = bound_plans[0].plan.criterion
        if isinstance(criterion, LabelSmoothedCE):
            return self._token_loss(bound_plans, batch, memory, criterion)
        if isinstance(criterion, MseWithStop):
            return self._audio_loss(bound_plans, batch, memory, criterion)
        if isinstance(criterion, Ddpm):
            return self._motion_loss(bound_plans, batch, memory, criterion, rngs)
        raise PlanError(f"no executor for criterion {criterion}")
