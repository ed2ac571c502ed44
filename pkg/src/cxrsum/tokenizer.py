"""Character-level BPE tokenizer with word-boundary-aware merges.

Whitespace is rewritten as a word-start marker on the following symbol, so
merges never cross word boundaries. Reserved ids: PAD=0, BOS=1, EOS=2, SEP=3,
plus UNK=4 for characters outside the training alphabet.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

WORD_MARKER = "\u2581"

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SEP_ID = 3
UNK_ID = 4
SPECIAL_SYMBOLS = ["<PAD>", "<BOS>", "<EOS>", "<SEP>", "<UNK>"]

_PRETOKEN_RE = re.compile(r" ?[^ ]+| +")


class TokenizerError(ValueError):
    pass


@dataclass
class MergeTable:
    """Ordered merge rules (earlier = higher priority) over a base alphabet."""

    merges: list[tuple[str, str]] = field(default_factory=list)
    alphabet: list[str] = field(default_factory=list)


class Vocab:
    """Dense bidirectional symbol<->id map; specials occupy ids 0..4."""

    def __init__(self, symbols: list[str]):
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise TokenizerError("duplicate symbols in vocabulary")

    def __len__(self) -> int:
        return len(self.symbols)

    def id_of(self, symbol: str) -> int:
        return self.index.get(symbol, UNK_ID)

    def symbol_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.symbols):
            raise TokenizerError(f"unknown token id {token_id}")
        return self.symbols[token_id]


def _pretokenize(text: str) -> list[str]:
    """Split into space-prefixed words and residual space runs."""
    return _PRETOKEN_RE.findall(text)


def _to_symbols(pretoken: str) -> list[str]:
    return [WORD_MARKER if ch == " " else ch for ch in pretoken]


class BpeTokenizer:
    def __init__(self, merge_table: MergeTable):
        self.merge_table = merge_table
        self.vocab = self._build_vocab(merge_table)
        self._rank = {pair: i for i, pair in enumerate(merge_table.merges)}
        self._alphabet = set(merge_table.alphabet)
        self._word_cache: dict[str, list[int]] = {}

    @staticmethod
    def _build_vocab(table: MergeTable) -> Vocab:
        symbols = list(SPECIAL_SYMBOLS) + list(table.alphabet)
        for left, right in table.merges:
            symbols.append(left + right)
        return Vocab(symbols)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @classmethod
    def train(cls, corpus: list[str], num_merges: int) -> "BpeTokenizer":
        """Greedy most-frequent-pair BPE; ties go to the lexicographically
        smallest pair. Stops early if no adjacent pair is left to merge."""
        if not corpus:
            raise TokenizerError("cannot train on an empty corpus")
        if num_merges < 0:
            raise TokenizerError("num_merges must be >= 0")
        words: Counter[tuple[str, ...]] = Counter()
        alphabet: set[str] = set()
        for text in corpus:
            for pre in _pretokenize(text):
                syms = tuple(_to_symbols(pre))
                words[syms] += 1
                alphabet.update(syms)

        merges: list[tuple[str, str]] = []
        for _ in range(num_merges):
            pair_counts: Counter[tuple[str, str]] = Counter()
            for syms, freq in words.items():
                for i in range(len(syms) - 1):
                    pair_counts[(syms[i], syms[i + 1])] += freq
            if not pair_counts:
                break
            best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
            merges.append(best)
            words = Counter({_merge_word(syms, best): freq for syms, freq in words.items()})

        table = MergeTable(merges=merges, alphabet=sorted(alphabet))
        return cls(table)

    def encode(self, text: str) -> list[int]:
        """Token ids for ``text``; characters outside the alphabet become UNK."""
        ids: list[int] = []
        for pre in _pretokenize(text):
            cached = self._word_cache.get(pre)
            if cached is None:
                cached = self._encode_word(pre)
                self._word_cache[pre] = cached
            ids.extend(cached)
        return ids

    def _encode_word(self, pretoken: str) -> list[int]:
        syms = [s if s in self._alphabet else SPECIAL_SYMBOLS[UNK_ID] for s in _to_symbols(pretoken)]
        while len(syms) > 1:
            best_rank, best_pair = None, None
            for i in range(len(syms) - 1):
                rank = self._rank.get((syms[i], syms[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_pair = rank, (syms[i], syms[i + 1])
            if best_pair is None:
                break
            syms = list(_merge_word(tuple(syms), best_pair))
        return [self.vocab.id_of(s) for s in syms]

    def encode_symbols(self, text: str) -> list[str]:
        return [self.vocab.symbol_of(i) for i in self.encode(text)]

    def decode(self, ids: list[int], render_specials: bool = False) -> str:
        """Inverse of encode. Specials are dropped unless ``render_specials``,
        in which case they appear as their textual markers (e.g. "<SEP>")."""
        parts: list[str] = []
        for token_id in ids:
            symbol = self.vocab.symbol_of(int(token_id))
            if token_id < len(SPECIAL_SYMBOLS):
                if render_specials:
                    parts.append(symbol)
                continue
            parts.append(symbol)
        return "".join(parts).replace(WORD_MARKER, " ")

    def save(self, path: str | Path) -> None:
        lines = ["BPE v1", " ".join(_escape(s) for s in self.merge_table.alphabet)]
        for left, right in self.merge_table.merges:
            lines.append(f"{_escape(left)} {_escape(right)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeTokenizer":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != "BPE v1":
            raise TokenizerError(f"{path}: not a BPE v1 tokenizer file")
        alphabet = [_unescape(s) for s in lines[1].split(" ") if s]
        merges = []
        for ln in lines[2:]:
            if not ln:
                continue
            left, right = (_unescape(p) for p in ln.split(" "))
            merges.append((left, right))
        return cls(MergeTable(merges=merges, alphabet=alphabet))


def _merge_word(syms: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    out: list[str] = []
    i = 0
    merged = pair[0] + pair[1]
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


_ESCAPES = {"\\": "\\\\", " ": "\\s", "\n": "\\n", "\t": "\\t"}
_UNESCAPES = {"\\\\": "\\", "\\s": " ", "\\n": "\n", "\\t": "\t"}


def _escape(symbol: str) -> str:
    out = symbol.replace("\\", "\\\\").replace(" ", "\\s").replace("\n", "\\n").replace("\t", "\\t")
    return out


def _unescape(token: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(token):
        if token[i] == "\\" and i + 1 < len(token):
            out.append(_UNESCAPES.get(token[i : i + 2], token[i + 1]))
            i += 2
        else:
            out.append(token[i])
            i += 1
    return "".join(out)


def train_bpe(corpus: list[str], num_merges: int) -> BpeTokenizer:
    return BpeTokenizer.train(corpus, num_merges)
