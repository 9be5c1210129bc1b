"""Synthetic datasets for desk-scale experiments.

Three toy tasks exercise the system end to end on one model: text copy,
bag-of-marker classification with a closed set, and box "grounding" on
images where a bright square's location defines the target box.
"""

from __future__ import annotations

import os

import numpy as np

from .config import TaskConfig
from .modality.image import write_ppm

CLASS_LABELS = ["alpha", "bravo", "charlie", "delta"]
NOISE_WORDS = ["stone", "river", "cloud", "ember", "moss", "drift", "glass", "fern"]
COPY_ALPHABET = "abcdefghijklmnopqrstuvwxyz"

IMAGE_SIZE = 64
BOX_BINS = 32  # 2 px per bin: quantization error stays far inside IoU@0.5


def _write_tsv(path: str, header: list[str], rows: list[tuple]) -> str:
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(c) for c in row) + "\n")
    return path


def make_copy_task(out_dir: str, n_train: int = 5000, n_valid: int = 200,
                   seed: int = 0, weight: float = 1.0) -> TaskConfig:
    """tgt == src over short random letter strings."""
    rng = np.random.default_rng(seed)

    def word():
        length = int(rng.integers(3, 9))
        return "".join(COPY_ALPHABET[int(rng.integers(26))] for _ in range(length))

    rows = [(w, w) for w in (word() for _ in range(n_train + n_valid))]
    train = _write_tsv(os.path.join(out_dir, "copy_train.tsv"), ["src", "tgt"],
                       rows[:n_train])
    valid = _write_tsv(os.path.join(out_dir, "copy_valid.tsv"), ["src", "tgt"],
                       rows[n_train:])
    return TaskConfig(
        instructions=["repeat the text: [TEXT:src] -> [TEXT:tgt]"],
        name="copy", train_data=train, valid_data=valid,
        micro_batch_size=8, weight=weight,
        criterion=("label_smoothed_cross_entropy", {"label_smoothing": 0.0}),
        metrics=[("exact_match", {"target_field": "tgt"})],
        generator_args={"beam": 1, "max_len_b": 12},
    )


def make_classification_task(out_dir: str, n_train: int = 5000, n_valid: int = 200,
                             seed: int = 1, weight: float = 1.0) -> TaskConfig:
    """The label names the single marker word hidden among noise words."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_train + n_valid):
        label = CLASS_LABELS[int(rng.integers(len(CLASS_LABELS)))]
        words = [NOISE_WORDS[int(rng.integers(len(NOISE_WORDS)))]
                 for _ in range(int(rng.integers(2, 5)))]
        words.insert(int(rng.integers(len(words) + 1)), label)
        rows.append((" ".join(words), label))
    train = _write_tsv(os.path.join(out_dir, "cls_train.tsv"), ["src", "label"],
                       rows[:n_train])
    valid = _write_tsv(os.path.join(out_dir, "cls_valid.tsv"), ["src", "label"],
                       rows[n_train:])
    return TaskConfig(
        instructions=["which marker is hidden in \"[TEXT:src]\"? -> [TEXT:label,closed_set]"],
        name="classify", train_data=train, valid_data=valid,
        micro_batch_size=8, weight=weight,
        closed_set={"label": list(CLASS_LABELS)},
        criterion=("label_smoothed_cross_entropy", {"label_smoothing": 0.0}),
        metrics=[("accuracy", {"target_field": "label"})],
        generator_args={"beam": 1, "max_len_b": 16},
    )


def make_grounding_task(out_dir: str, n_train: int = 2000, n_valid: int = 100,
                        seed: int = 2, weight: float = 1.0) -> TaskConfig:
    """A bright square on a dark noisy background; the target is its box."""
    rng = np.random.default_rng(seed)
    img_dir = os.path.join(out_dir, "grounding_images")
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    for i in range(n_train + n_valid):
        side = int(rng.integers(16, 33))
        x1 = int(rng.integers(0, IMAGE_SIZE - side))
        y1 = int(rng.integers(0, IMAGE_SIZE - side))
        img = rng.integers(0, 40, size=(IMAGE_SIZE, IMAGE_SIZE, 3)).astype(np.uint8)
        img[y1:y1 + side, x1:x1 + side] = rng.integers(200, 256)
        path = os.path.join(img_dir, f"img_{i:05d}.ppm")
        write_ppm(path, img)
        rows.append((path, f"{x1},{y1},{x1 + side},{y1 + side}"))
    train = _write_tsv(os.path.join(out_dir, "ground_train.tsv"), ["img", "box"],
                       rows[:n_train])
    valid = _write_tsv(os.path.join(out_dir, "ground_valid.tsv"), ["img", "box"],
                       rows[n_train:])
    return TaskConfig(
        instructions=["[IMAGE:img] where is the bright square? -> [BOX:box]"],
        name="ground", train_data=train, valid_data=valid,
        micro_batch_size=8, update_freq=2, weight=weight,
        preprocess={
            "image": {"resolution": IMAGE_SIZE, "patch_size": 8},
            "box": {"num_bins": BOX_BINS, "image_w": IMAGE_SIZE,
                    "image_h": IMAGE_SIZE},
        },
        criterion=("label_smoothed_cross_entropy", {"label_smoothing": 0.0}),
        metrics=[("iou_at_0_5", {"target_field": "box"})],
        generator_args={"beam": 1, "max_len_b": 6},
    )


def make_all_tasks(out_dir: str, copy_n: int = 5000, cls_n: int = 5000,
                   ground_n: int = 2000) -> list[TaskConfig]:
    os.makedirs(out_dir, exist_ok=True)
    return [
        make_copy_task(out_dir, n_train=copy_n),
        make_classification_task(out_dir, n_train=cls_n),
        make_grounding_task(out_dir, n_train=ground_n),
    ]
