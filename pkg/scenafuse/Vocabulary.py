"""
Token vocabulary and the "[CLS] P [SEP] H [SEP]" pair encoding.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .Errors import DimensionError, FormatError

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"]


class Vocabulary:
    """
    Dense token -> id map; ids 0..3 are always [PAD], [CLS], [SEP], [UNK]
    """
    def __init__(self, tokens : list[str]):
        """
        Vocabulary constructor

        :param tokens: Every token in id order, reserved ones first
        :type tokens: list[str]
        """
        if list(tokens[:len(RESERVED)]) != RESERVED:
            raise FormatError(f"the first tokens must be {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise FormatError("duplicate tokens in vocabulary")
        self._tokens = list(tokens)
        self._ids = {token: i for i, token in enumerate(self._tokens)}

    @classmethod
    def build(cls, words):
        """
        Vocabulary over the given words; non-reserved tokens sorted for determinism
        """
        return cls(RESERVED + sorted(set(words) - set(RESERVED)))

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id(self, token : str) -> int:
        return self._ids.get(token, UNK)

    def token(self, id : int) -> str:
        return self._tokens[id]

    def encode(self, tokens : list[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def save(self, path):
        Path(path).write_text("".join(f"{t}\n" for t in self._tokens), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


@dataclass(frozen=True, eq=False)
class InputEncoding:
    """
    Token / segment / position ids and attention mask of one padded pair
    """
    token_ids : np.ndarray
    segment_ids : np.ndarray
    position_ids : np.ndarray
    attention_mask : np.ndarray

    @property
    def length(self) -> int:
        return len(self.token_ids)

    @property
    def real_length(self) -> int:
        return int(self.attention_mask.sum())


def truncate_pair(premise : list[str], hypothesis : list[str], max_len : int) -> tuple[list[str], list[str]]:
    """
    Shorten a pair so that it fits max_len with its three special tokens

    The hypothesis tail goes first (down to one token), then the premise tail.
    """
    premise, hypothesis = list(premise), list(hypothesis)
    if max_len < 5:
        raise DimensionError(f"max_len {max_len} cannot hold a pair plus three special tokens")
    overflow = len(premise) + len(hypothesis) + 3 - max_len
    if overflow > 0:
        cut = min(overflow, len(hypothesis) - 1)
        hypothesis = hypothesis[:len(hypothesis) - cut]
        overflow -= cut
    if overflow > 0:
        premise = premise[:len(premise) - overflow]
    return premise, hypothesis


def encode_pair(premise : list[str], hypothesis : list[str], vocab : Vocabulary, max_len : int) -> InputEncoding:
    """
    Lay out "[CLS] P [SEP] H [SEP]" followed by padding up to max_len

    :param premise: Premise tokens
    :param hypothesis: Hypothesis tokens
    :param vocab: Token ids
    :type vocab: Vocabulary
    :param max_len: Padded sequence length
    :type max_len: int
    """
    if not premise:
        raise DimensionError("empty premise")
    if not hypothesis:
        raise DimensionError("empty hypothesis")
    premise, hypothesis = truncate_pair(premise, hypothesis, max_len)

    first = [CLS] + vocab.encode(premise) + [SEP]
    second = vocab.encode(hypothesis) + [SEP]
    padding = max_len - len(first) - len(second)

    return InputEncoding(
        token_ids=np.array(first + second + [PAD] * padding, dtype=np.int64),
        segment_ids=np.array([0] * len(first) + [1] * len(second) + [0] * padding, dtype=np.int64),
        position_ids=np.arange(max_len, dtype=np.int64),
        attention_mask=np.array([1] * (len(first) + len(second)) + [0] * padding, dtype=np.int64),
    )
