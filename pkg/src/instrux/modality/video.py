"""Video preprocessing: uniform temporal downsampling, then per-frame patches."""

from __future__ import annotations

import numpy as np

from ..errors import BadImage
from .image import image_to_patches

DEFAULT_NUM_FRAMES = 4


def sample_frames(frames: np.ndarray, num_frames: int = DEFAULT_NUM_FRAMES) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise BadImage(f"expected TxHxWxC video, got shape {frames.shape}")
    t = frames.shape[0]
    if t == 0:
        raise BadImage("video has no frames")
    idx = np.linspace(0, t - 1, num=min(num_frames, t)).round().astype(int)
    return frames[idx]


def video_to_patches(frames: np.ndarray, patch: int, resolution: int | None = None,
                     num_frames: int = DEFAULT_NUM_FRAMES) -> np.ndarray:
    """Concatenate per-frame patch features along the sequence axis."""
    sampled = sample_frames(frames, num_frames)
    feats = [image_to_patches(f, patch, resolution) for f in sampled]
    return np.concatenate(feats, axis=0)
