"""Vocabularies and the closed-set token trie.

Every token stream in the system lives in one of a few small vocabularies:
the lossless byte-level text vocabulary, the box-bin vocabulary, and the
image-code vocabulary.  Each vocabulary reserves the same four special ids
(PAD, BOS, EOS, MASK) at indices 0..3.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .errors import EmptyClosedSet, IdOutOfRange

PAD, BOS, EOS, MASK = 0, 1, 2, 3
NUM_SPECIALS = 4


class Vocab:
    """Base vocabulary: id layout [specials | payload]."""

    name = "vocab"

    def __init__(self, payload_size: int):
        self.payload_size = payload_size
        self.size = NUM_SPECIALS + payload_size

    def check(self, ids: Iterable[int]) -> None:
        for i in ids:
            if not 0 <= i < self.size:
                raise IdOutOfRange(f"token id {i} outside vocab '{self.name}' of size {self.size}")


class ByteVocab(Vocab):
    """Byte-level text vocabulary: UTF-8 bytes shifted past the specials.

    Tokenize/detokenize round-trip exactly for arbitrary text; ids for
    specials are skipped when decoding so generated streams detokenize
    cleanly.
    """

    name = "text"

    def __init__(self):
        super().__init__(256)

    def tokenize(self, text: str) -> list[int]:
        return [NUM_SPECIALS + b for b in text.encode("utf-8")]

    def detokenize(self, ids: Sequence[int]) -> str:
        data = bytes(i - NUM_SPECIALS for i in ids if i >= NUM_SPECIALS)
        return data.decode("utf-8", errors="replace")


class RangeVocab(Vocab):
    """Vocabulary over a contiguous code range (box bins, image codes)."""

    def __init__(self, name: str, n_codes: int):
        super().__init__(n_codes)
        self.name = name

    def encode(self, codes: Sequence[int]) -> list[int]:
        out = []
        for c in codes:
            if not 0 <= c < self.payload_size:
                raise IdOutOfRange(f"code {c} outside range vocab '{self.name}'")
            out.append(NUM_SPECIALS + c)
        return out

    def decode(self, ids: Sequence[int]) -> list[int]:
        return [i - NUM_SPECIALS for i in ids if i >= NUM_SPECIALS]


class TokenTrie:
    """Prefix tree over candidate token sequences.

    Used to constrain generation to a closed set: at each step only the
    current node's children are legal, and EOS becomes legal exactly at
    nodes that complete a candidate.
    """

    def __init__(self, sequences: Iterable[Sequence[int]]):
        self.root: dict = {}
        self._terminal: set[int] = set()  # ids of terminal nodes
        count = 0
        for seq in sequences:
            count += 1
            node = self.root
            for tok in seq:
                node = node.setdefault(tok, {})
            node["__end__"] = True
        if count == 0:
            raise EmptyClosedSet("closed set has no candidates")

    def start(self) -> dict:
        return self.root

    def step(self, node: dict, token: int) -> Optional[dict]:
        return node.get(token)

    def allowed(self, node: dict) -> tuple[list[int], bool]:
        """(legal next tokens, whether a candidate ends here)."""
        tokens = [t for t in node if t != "__end__"]
        return tokens, "__end__" in node


def build_candidate_trie(vocab: ByteVocab, candidates: Sequence[str]) -> TokenTrie:
    return TokenTrie([vocab.tokenize(c) for c in candidates])
