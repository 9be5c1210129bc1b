"""Generator specifications deduced from plans (execution lives in generate.py)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .criteria import DdpmSchedule


@dataclass(frozen=True)
class ArToken:
    beam: int = 1
    max_len: int = 64
    no_repeat_ngram: int = 0
    fixed_len: Optional[int] = None  # e.g. 256 image codes, EOS-free

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")


@dataclass(frozen=True)
class ArFeature:
    max_frames: int = 200
    stop_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.stop_threshold < 1.0:
            raise ValueError("stop_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class Diffusion:
    schedule: DdpmSchedule = field(default_factory=lambda: DdpmSchedule(1000))
    sample_steps: Optional[int] = None
    output_frames: Optional[int] = None  # frames to synthesize when no target bound


GeneratorSpec = Union[ArToken, ArFeature, Diffusion]
