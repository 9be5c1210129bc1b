"""TSV datasets: header-checked streaming rows with O(1) memory, a seeded
shuffle buffer, and fetch-to-temp for remote URIs.

``file://`` and ``http(s)://`` sources are supported; remote files land in
``$INSTRUX_CACHE`` (or a temp dir) keyed by URL hash.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import warnings
from typing import Iterator, Optional

import numpy as np

from .errors import MalformedRow, MissingColumn, SchemaError


def _cache_dir() -> str:
    path = os.environ.get("INSTRUX_CACHE")
    if not path:
        path = os.path.join(tempfile.gettempdir(), "instrux_cache")
    os.makedirs(path, exist_ok=True)
    return path


def resolve_uri(source: str) -> str:
    """Local path for a dataset URI, downloading remote files once."""
    if source.startswith("file://"):
        return source[len("file://"):]
    if source.startswith(("http://", "https://")):
        import urllib.request
        digest = hashlib.sha256(source.encode()).hexdigest()[:16]
        target = os.path.join(_cache_dir(), f"{digest}.tsv")
        if not os.path.exists(target):
            with urllib.request.urlopen(source) as resp, open(target, "wb") as out:
                while True:
                    chunk = resp.read(1 << 20)
                    if not chunk:
                        break
                    out.write(chunk)
        return target
    return source


class TsvDataset:
    """Tab-separated rows with a mandatory header; cells stay strings."""

    def __init__(self, source: str):
        self.source = source
        self.path = resolve_uri(source)
        if not os.path.exists(self.path):
            raise SchemaError("dataset", f"no such file: {self.path}")
        with open(self.path, "r", encoding="utf-8") as fh:
            header_line = fh.readline().rstrip("\n")
        if not header_line:
            raise SchemaError("dataset", f"{self.path}: empty file, header required")
        self.header = header_line.split("\t")
        self.malformed_rows = 0

    @property
    def base_dir(self) -> str:
        return os.path.dirname(os.path.abspath(self.path))

    def check_columns(self, required: set[str]) -> None:
        missing = sorted(required - set(self.header))
        if missing:
            raise MissingColumn(missing[0])

    def __iter__(self) -> Iterator[dict]:
        """One streaming pass over the rows (malformed rows counted, skipped)."""
        n_cols = len(self.header)
        skipped = 0
        with open(self.path, "r", encoding="utf-8") as fh:
            fh.readline()  # header
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                cells = line.split("\t")
                if len(cells) != n_cols:
                    skipped += 1
                    continue
                yield dict(zip(self.header, cells))
        self.malformed_rows = skipped
        if skipped:
            warnings.warn(f"{self.path}: skipped {skipped} malformed rows",
                          stacklevel=2)

    def count_rows(self) -> int:
        return sum(1 for _ in self)

    def distinct(self, column: str, limit: int = 10000) -> list[str]:
        """Distinct values of one column, in first-seen order (is_label sets)."""
        if column not in self.header:
            raise MissingColumn(column)
        seen: dict[str, None] = {}
        for row in self:
            if row[column] not in seen:
                seen[row[column]] = None
                if len(seen) >= limit:
                    break
        return list(seen)


def shuffled_stream(dataset: TsvDataset, seed: int,
                    buffer_size: int = 256) -> Iterator[tuple[int, dict]]:
    """Infinite (uid, row) stream; restarts with a fresh pass-derived seed.

    Deterministic for a given seed; uids number examples globally so that a
    resumed run can fast-forward to the identical stream position.
    """
    uid = 0
    pass_index = 0
    while True:
        rng = np.random.default_rng(np.random.SeedSequence([seed, pass_index]))
        if buffer_size <= 1:
            for row in dataset:
                yield uid, row
                uid += 1
        else:
            buffer: list[dict] = []
            for row in dataset:
                if len(buffer) < buffer_size:
                    buffer.append(row)
                    continue
                slot = int(rng.integers(len(buffer)))
                yield uid, buffer[slot]
                uid += 1
                buffer[slot] = row
            while buffer:
                slot = int(rng.integers(len(buffer)))
                yield uid, buffer.pop(slot)
                uid += 1
        if uid == 0:
            raise MalformedRow(f"{dataset.path}: no usable rows")
        pass_index += 1


def skip_stream(stream: Iterator, count: int) -> Iterator:
    for _ in range(count):
        next(stream)
    return stream
