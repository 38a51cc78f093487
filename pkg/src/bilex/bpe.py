"""Byte-level byte pair encoding trained from scratch.

One tokenizer is trained per dataset condition so its merges reflect that
condition's input distribution. Tokens are byte strings over the 256-byte
base alphabet plus the single special ``<|endoftext|>``; any UTF-8 text
round-trips exactly.

Determinism: merge candidates are fully ordered by (count desc, merged byte
string asc, left part asc), so retraining and input permutations yield the
identical merge list. The pre-tokenizer pattern below is part of the
tokenizer file format and is recorded in its header.

On-disk format (``save``/``load``): ``vocab.tsv`` (escaped token, tab, id),
``merges.tsv`` (escaped left, tab, escaped right, in merge order), and
``tokenizer.json`` with {version, vocab_size, pretokenizer_pattern}.
Byte escaping is Python ``unicode_escape`` over a latin-1 view, so every
token is one printable line.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import EOS_TOKEN, Corpus, regex_words


class BpeError(Exception):
    pass


class UnknownId(BpeError):
    """decode() saw an id outside the vocabulary."""


FORMAT_VERSION = 1

# Lossless split into contraction suffixes, space-prefixed letter runs,
# digit runs, punctuation runs (underscore counts as punctuation), and
# whitespace. Every input character lands in exactly one pre-token.
PRETOKEN_PATTERN = (
    r"'(?:[sdmt]|ll|ve|re)"
    r"| ?[^\W\d_]+"
    r"| ?\d+"
    r"| ?(?:(?!\s)[\W_])+"
    r"|\s+(?!\S)"
    r"|\s+"
)
_PRETOKEN_RE = re.compile(PRETOKEN_PATTERN, re.UNICODE)

_EOS_BYTES = EOS_TOKEN.encode("utf-8")


def pretokenize(text: str) -> list[str]:
    return _PRETOKEN_RE.findall(text)


def escape_bytes(b: bytes) -> str:
    return b.decode("latin-1").encode("unicode_escape").decode("ascii")


def unescape_bytes(s: str) -> bytes:
    return s.encode("ascii").decode("unicode_escape").encode("latin-1")


class BpeModel:
    """Trained vocabulary plus ordered merge list; pure encode/decode."""

    def __init__(self, merges: Sequence[tuple[bytes, bytes]], undersized: bool = False):
        self.id_to_token: list[bytes] = [bytes([i]) for i in range(256)]
        self.id_to_token.append(_EOS_BYTES)
        self.eos_id = 256
        self.merges: tuple[tuple[bytes, bytes], ...] = tuple(merges)
        for a, b in self.merges:
            self.id_to_token.append(a + b)
        self.vocab: dict[bytes, int] = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.vocab) != len(self.id_to_token):
            raise BpeError("merge list produces duplicate tokens")
        self.ranks: dict[tuple[bytes, bytes], int] = {pair: r for r, pair in enumerate(self.merges)}
        self.undersized = undersized
        self._cache: dict[str, list[int]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def _merge_word(self, pretoken: str) -> list[int]:
        cached = self._cache.get(pretoken)
        if cached is not None:
            return cached
        syms = [bytes([b]) for b in pretoken.encode("utf-8")]
        while len(syms) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(syms, syms[1:]):
                rank = self.ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pair = pair
            if best_pair is None:
                break
            syms = _merge_all(syms, best_pair)
        ids = [self.vocab[s] for s in syms]
        if len(self._cache) < 100_000:
            self._cache[pretoken] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for kind, chunk in _split_specials(text):
            if kind == "eos":
                ids.append(self.eos_id)
            else:
                for pretoken in pretokenize(chunk):
                    ids.extend(self._merge_word(pretoken))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        return self.decode_bytes(ids).decode("utf-8")

    def decode_bytes(self, ids: Iterable[int]) -> bytes:
        out = bytearray()
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise UnknownId(f"token id {i} out of range (vocab {self.vocab_size})")
            out.extend(self.id_to_token[i])
        return bytes(out)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with (directory / "vocab.tsv").open("w", encoding="ascii", newline="\n") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{escape_bytes(tok)}\t{i}\n")
        with (directory / "merges.tsv").open("w", encoding="ascii", newline="\n") as f:
            for a, b in self.merges:
                f.write(f"{escape_bytes(a)}\t{escape_bytes(b)}\n")
        header = {
            "version": FORMAT_VERSION,
            "vocab_size": self.vocab_size,
            "pretokenizer_pattern": PRETOKEN_PATTERN,
            "undersized": self.undersized,
        }
        with (directory / "tokenizer.json").open("w", encoding="utf-8") as f:
            json.dump(header, f, indent=2)

    @classmethod
    def load(cls, directory: str | Path) -> "BpeModel":
        directory = Path(directory)
        with (directory / "tokenizer.json").open(encoding="utf-8") as f:
            header = json.load(f)
        if header.get("version") != FORMAT_VERSION:
            raise BpeError(f"unsupported tokenizer version: {header.get('version')}")
        merges = []
        with (directory / "merges.tsv").open(encoding="ascii") as f:
            for line in f:
                left, right = line.rstrip("\n").split("\t")
                merges.append((unescape_bytes(left), unescape_bytes(right)))
        model = cls(merges, undersized=bool(header.get("undersized", False)))
        with (directory / "vocab.tsv").open(encoding="ascii") as f:
            for line in f:
                tok, idx = line.rstrip("\n").split("\t")
                if model.id_to_token[int(idx)] != unescape_bytes(tok):
                    raise BpeError(f"vocab file disagrees with merge replay at id {idx}")
        return model


def _split_specials(text: str) -> Iterator[tuple[str, str]]:
    parts = text.split(EOS_TOKEN)
    for i, part in enumerate(parts):
        if part:
            yield "text", part
        if i < len(parts) - 1:
            yield "eos", ""


def _merge_all(syms: list[bytes], pair: tuple[bytes, bytes]) -> list[bytes]:
    a, b = pair
    out: list[bytes] = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def train_bpe(corpus: Corpus | Iterable[str], vocab_size: int = 80_000) -> BpeModel:
    """Train byte-level BPE to exactly ``vocab_size`` tokens.

    Merging is greedy on global pair counts over pre-tokenized units and
    stops early (model flagged ``undersized``) once no pair occurs twice.
    """
    if vocab_size < 257:
        raise BpeError("vocab_size must cover 256 byte symbols plus <|endoftext|>")
    lines = corpus.lines() if isinstance(corpus, Corpus) else iter(corpus)

    pretoken_counts: Counter[str] = Counter()
    for line in lines:
        for kind, chunk in _split_specials(line):
            if kind == "text":
                pretoken_counts.update(pretokenize(chunk))
    if not pretoken_counts:
        raise BpeError("empty corpus")

    # Deterministic word order; counts are order-free but indexes below are not.
    words: list[list[bytes]] = []
    counts: list[int] = []
    for pretoken in sorted(pretoken_counts):
        words.append([bytes([b]) for b in pretoken.encode("utf-8")])
        counts.append(pretoken_counts[pretoken])

    pair_counts: dict[tuple[bytes, bytes], int] = {}
    pair_words: dict[tuple[bytes, bytes], set[int]] = {}

    def add_word_pairs(idx: int, sign: int) -> None:
        syms = words[idx]
        cnt = counts[idx] * sign
        for pair in zip(syms, syms[1:]):
            new = pair_counts.get(pair, 0) + cnt
            if new:
                pair_counts[pair] = new
            else:
                pair_counts.pop(pair, None)
            members = pair_words.setdefault(pair, set())
            if sign > 0:
                members.add(idx)
            else:
                members.discard(idx)
                if not members:
                    pair_words.pop(pair, None)

    for idx in range(len(words)):
        add_word_pairs(idx, +1)

    merges: list[tuple[bytes, bytes]] = []
    n_merges_target = vocab_size - 257
    undersized = False
    while len(merges) < n_merges_target:
        best = None
        best_key = None
        for pair, count in pair_counts.items():
            if count < 2:
                continue
            key = (-count, pair[0] + pair[1], pair[0])
            if best_key is None or key < best_key:
                best_key = key
                best = pair
        if best is None:
            undersized = True
            break
        merges.append(best)
        for idx in sorted(pair_words[best]):
            add_word_pairs(idx, -1)
            words[idx] = _merge_all(words[idx], best)
            add_word_pairs(idx, +1)

    return BpeModel(merges, undersized=undersized)


def fragmentation_rate(model: BpeModel, corpus: Corpus | Iterable[str]) -> float:
    """Subword tokens emitted per regex word over serialized lines.

    The numerator counts every token the model emits for each line (the EOS
    token included); the denominator counts regex words of the line with the
    EOS text stripped.
    """
    lines = list(corpus.lines() if isinstance(corpus, Corpus) else corpus)
    n_tokens = 0
    n_words = 0
    for line in lines:
        n_tokens += len(model.encode(line))
        text = line[: -len(EOS_TOKEN)] if line.endswith(EOS_TOKEN) else line
        n_words += len(regex_words(text))
    if n_words == 0:
        raise BpeError("corpus has no words")
    return n_tokens / n_words
