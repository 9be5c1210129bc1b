"""The full trainable system: universal core plus lazily-built adapters."""

from __future__ import annotations

import torch
from torch import nn

from .adapters import AdapterRegistry
from .model import ModelConfig, UniversalModel
from .plan import TaskPlan


class MultiModalModel(nn.Module):
    """Universal encoder-decoder core bundled with its adapter registry.

    Adapters appear only after ``build_for`` has seen the task plans, so the
    parameter set (and any checkpoint) covers exactly the modalities in use.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.core = UniversalModel(cfg)
        self.adapters = AdapterRegistry(cfg)

    def build_for(self, plans: list[TaskPlan]) -> "MultiModalModel":
        self.adapters.lazy_init(plans)
        return self

    def named_blocks(self) -> dict[str, torch.Tensor]:
        return {name: p for name, p in self.named_parameters()}

    def parameter_report(self) -> dict:
        """Universal vs modality-specific accounting.

        Modality-specific capacity is the adapters plus any MoE experts beyond
        the first (which plays the dense FFN's role).
        """
        core_counts = self.core.count_parameters()
        per_adapter = self.adapters.count_parameters()
        adapter_total = sum(per_adapter.values())
        return {
            "universal": core_counts["universal"],
            "modality_specific": core_counts["moe_extra_experts"] + adapter_total,
            "moe_extra_experts": core_counts["moe_extra_experts"],
            "adapters": per_adapter,
            "total": core_counts["universal"] + core_counts["moe_extra_experts"]
                     + adapter_total,
        }


def count_parameters(model: MultiModalModel) -> dict:
    return model.parameter_report()
