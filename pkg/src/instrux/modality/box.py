"""Bounding-box quantization to discrete corner tokens and back.

Corner coordinates are scaled by the image extent, floored into ``num_bins``
bins, and clamped; dequantization returns bin centers, so the round-trip
error is at most half a bin width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import OutOfBounds


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise OutOfBounds(f"degenerate box {self}")

    @classmethod
    def from_text(cls, text: str) -> "BoundingBox":
        parts = text.replace(",", " ").split()
        if len(parts) != 4:
            raise OutOfBounds(f"box needs 4 coordinates, got {text!r}")
        return cls(*(float(p) for p in parts))

    def to_text(self) -> str:
        return f"{self.x1:.2f},{self.y1:.2f},{self.x2:.2f},{self.y2:.2f}"

    def iou(self, other: "BoundingBox") -> float:
        ix1, iy1 = max(self.x1, other.x1), max(self.y1, other.y1)
        ix2, iy2 = min(self.x2, other.x2), min(self.y2, other.y2)
        inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
        area_a = (self.x2 - self.x1) * (self.y2 - self.y1)
        area_b = (other.x2 - other.x1) * (other.y2 - other.y1)
        union = area_a + area_b - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class BoxQuantizer:
    image_w: float
    image_h: float
    num_bins: int = 1000

    def __post_init__(self):
        if self.num_bins < 2:
            raise ValueError("num_bins must be >= 2")

    def _quantize(self, coord: float, extent: float) -> int:
        b = math.floor(coord / extent * self.num_bins)
        return min(max(b, 0), self.num_bins - 1)

    def _dequantize(self, token: int, extent: float) -> float:
        return (token + 0.5) / self.num_bins * extent

    def quantize(self, box: BoundingBox) -> tuple[int, int, int, int]:
        if not (0 <= box.x1 and box.x2 <= self.image_w and 0 <= box.y1 and box.y2 <= self.image_h):
            raise OutOfBounds(f"box {box} outside {self.image_w}x{self.image_h} image")
        return (
            self._quantize(box.x1, self.image_w),
            self._quantize(box.y1, self.image_h),
            self._quantize(box.x2, self.image_w),
            self._quantize(box.y2, self.image_h),
        )

    def dequantize(self, tokens) -> BoundingBox:
        x1, y1, x2, y2 = tokens
        return BoundingBox(
            self._dequantize(min(x1, x2), self.image_w),
            self._dequantize(min(y1, y2), self.image_h),
            self._dequantize(max(x1, x2), self.image_w),
            self._dequantize(max(y1, y2), self.image_h),
        )

    @property
    def half_bin_x(self) -> float:
        return self.image_w / (2 * self.num_bins)

    @property
    def half_bin_y(self) -> float:
        return self.image_h / (2 * self.num_bins)
