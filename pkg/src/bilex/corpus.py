"""Dialogue corpus model.

A corpus is an ordered set of multi-turn adult/child dialogues. Each
dialogue exists in up to four parallel language variants sharing one id, so
variants can be swapped per dialogue (or per sentence) without changing the
underlying conversation. This module owns parsing of raw generated blocks,
text normalization, the one-line training serialization, word statistics,
and corpus file IO.

Serialized training line format::

    **Mom**: Hi there.\\n\\n**Child**: Hi!<|endoftext|>

Turns are joined with the literal four characters ``\\n\\n``, raw newlines
inside a turn are normalized to the literal two characters ``\\n``, and each
line ends with exactly one ``<|endoftext|>``. A corpus file holds one such
line per physical line, with a JSON sidecar (``<path>.meta.json``) carrying
per-dialogue metadata in the same canonical (id-sorted) order.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator


class CorpusError(Exception):
    """Base class for corpus construction and parsing errors."""


class MissingDialogueSection(CorpusError):
    """Raw block has no non-empty DIALOGUE section."""


class UnknownSpeakerLabel(CorpusError):
    """Turn label cannot be mapped to Mom/Dad/Child."""


class UnnormalizedInput(CorpusError):
    """Operation requires normalized text (no raw newlines)."""


class Speaker(str, Enum):
    MOM = "Mom"
    DAD = "Dad"
    CHILD = "Child"


class Context(str, Enum):
    HOME = "home"
    PUBLIC = "public"


class Language(str, Enum):
    EN = "EN"
    ES = "ES"
    CS_SENT = "CS_SENT"
    CS_WORD = "CS_WORD"


CHILD_AGES = (2, 5, 10, 15)

EOS_TOKEN = "<|endoftext|>"
TURN_SEPARATOR = "\\n\\n"
NEWLINE_ESCAPE = "\\n"

# Closed alias table; anything else is an error rather than a pass-through.
_SPEAKER_ALIASES = {
    "mom": Speaker.MOM,
    "mamá": Speaker.MOM,
    "dad": Speaker.DAD,
    "papá": Speaker.DAD,
    "child": Speaker.CHILD,
    "niño": Speaker.CHILD,
    "niña": Speaker.CHILD,
}

_QUOTE_MAP = {
    "“": '"',  # left double
    "”": '"',  # right double
    "‘": "'",  # left single
    "’": "'",  # right single
}

# A word is a maximal run of Unicode letters/digits with internal
# apostrophes (ASCII or typographic). Underscore is excluded on purpose.
_WORD_RE = re.compile(r"[^\W_]+(?:['‘’][^\W_]+)*", re.UNICODE)

_TURN_LABEL_RE = re.compile(r"^\s*\*\*(?P<label>[^*]+)\*\*\s*:\s?(?P<text>.*)$", re.DOTALL)

_SECTION_RE = re.compile(r"^[ \t]*(PARTICIPANTS|SETTING|DIALOGUE)[ \t]*:", re.MULTILINE)


def resolve_speaker(label: str) -> Speaker:
    try:
        return _SPEAKER_ALIASES[label.strip().casefold()]
    except KeyError:
        raise UnknownSpeakerLabel(f"unknown speaker label: {label!r}") from None


@dataclass(frozen=True)
class Turn:
    speaker: Speaker
    text: str


@dataclass(frozen=True)
class Dialogue:
    """One conversation between an adult (Mom or Dad) and a child.

    The id is shared by all language variants of the same conversation.
    """

    id: str
    adult_speaker: Speaker
    context: Context
    child_age: int
    turns: tuple[Turn, ...]
    language_variant: Language

    def __post_init__(self) -> None:
        if not self.turns:
            raise CorpusError(f"dialogue {self.id}: no turns")
        if self.adult_speaker not in (Speaker.MOM, Speaker.DAD):
            raise CorpusError(f"dialogue {self.id}: adult speaker must be Mom or Dad")
        if self.child_age not in CHILD_AGES:
            raise CorpusError(f"dialogue {self.id}: child age {self.child_age} not in {CHILD_AGES}")
        if all(t.speaker is not self.adult_speaker for t in self.turns):
            raise CorpusError(f"dialogue {self.id}: adult speaker {self.adult_speaker.value} never speaks")
        for t in self.turns:
            if not t.text.strip():
                raise CorpusError(f"dialogue {self.id}: empty turn text")

    def word_count(self) -> int:
        """Regex-word count of the serialized line (EOS excluded)."""
        return len(regex_words(serialize_training_line(self)[: -len(EOS_TOKEN)]))


class Corpus:
    """Ordered collection of dialogues with unique ids.

    Iteration order is always canonical (lexicographic by id) so that
    parallel or chunked processing cannot change downstream outputs.
    ``language_variant`` is None for heterogeneous corpora such as
    dialogue-level language mixtures.
    """

    def __init__(self, dialogues: Iterable[Dialogue], language_variant: Language | None = None):
        ordered = sorted(dialogues, key=lambda d: d.id)
        ids = [d.id for d in ordered]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CorpusError(f"duplicate dialogue ids: {dupes[:5]}")
        self.dialogues: tuple[Dialogue, ...] = tuple(ordered)
        self.language_variant = language_variant
        self._by_id = {d.id: d for d in self.dialogues}
        self._word_budget: int | None = None

    def __len__(self) -> int:
        return len(self.dialogues)

    def __iter__(self) -> Iterator[Dialogue]:
        return iter(self.dialogues)

    def __getitem__(self, dialogue_id: str) -> Dialogue:
        return self._by_id[dialogue_id]

    def __contains__(self, dialogue_id: str) -> bool:
        return dialogue_id in self._by_id

    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.dialogues)

    @property
    def word_budget(self) -> int:
        """Total regex-word count across serialized lines (cached)."""
        if self._word_budget is None:
            self._word_budget = sum(d.word_count() for d in self.dialogues)
        return self._word_budget

    def subset(self, ids: Iterable[str]) -> "Corpus":
        wanted = set(ids)
        missing = wanted - set(self._by_id)
        if missing:
            raise CorpusError(f"unknown ids in subset: {sorted(missing)[:5]}")
        return Corpus((self._by_id[i] for i in wanted), self.language_variant)

    def lines(self) -> Iterator[str]:
        for d in self.dialogues:
            yield serialize_training_line(d)


@dataclass(frozen=True)
class CorpusStats:
    total_words: int
    unique_regex: int
    unique_linguistic: int


def regex_words(text: str) -> list[str]:
    """Word tokens of ``text``: maximal runs of letters/digits/apostrophes.

    The literal escape ``\\n`` produced by normalization is treated as
    whitespace, so normalizing never changes a text's word count.
    """
    return _WORD_RE.findall(text.replace(NEWLINE_ESCAPE, " "))


_CONTRACTION_RE = re.compile(r"^(.+?)(n['’]t|['’](?:s|ll|re|ve|d|m))$", re.IGNORECASE)
_LEADING_PUNCT = "¿¡\"'(‘“[{"
_TRAILING_PUNCT = ".,!?;:…\"')’”]}"


def linguistic_tokens(text: str) -> list[str]:
    """Rule-based linguistic tokenization.

    Approximates a conventional word tokenizer: terminal punctuation is
    split off, English contractions (n't/'s/'ll/...) are split, and the
    Spanish opening marks ``¿ ¡`` are tokens of their own. This is a
    documented approximation, so counts derived from it are comparable only
    within this package.
    """
    out: list[str] = []
    for piece in text.replace(NEWLINE_ESCAPE, " ").split():
        lead: list[str] = []
        while piece and piece[0] in _LEADING_PUNCT:
            lead.append(piece[0])
            piece = piece[1:]
        trail: list[str] = []
        while piece and piece[-1] in _TRAILING_PUNCT:
            trail.append(piece[-1])
            piece = piece[:-1]
        out.extend(lead)
        if piece:
            m = _CONTRACTION_RE.match(piece)
            if m:
                out.extend([m.group(1), m.group(2)])
            else:
                out.append(piece)
        out.extend(reversed(trail))
    return out


def parse_dialogue(
    raw: str,
    *,
    id: str,
    adult_speaker: Speaker,
    context: Context,
    child_age: int,
    language_variant: Language = Language.EN,
) -> Dialogue:
    """Parse a raw generated block into a Dialogue.

    The block is expected to carry ``PARTICIPANTS:`` / ``SETTING:`` /
    ``DIALOGUE:`` sections; only the dialogue portion is retained. Turns are
    separated by blank lines and each turn starts with a ``**Label**:``
    marker whose label must map to the fixed Mom/Dad/Child set.
    """
    sections = _split_sections(raw)
    body = sections.get("DIALOGUE", "").strip()
    if not body:
        raise MissingDialogueSection(f"dialogue {id}: no DIALOGUE content")
    turns = []
    for chunk in re.split(r"\n\s*\n", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        m = _TURN_LABEL_RE.match(chunk)
        if m is None:
            raise UnknownSpeakerLabel(f"dialogue {id}: turn without **label**: {chunk[:40]!r}")
        turns.append(Turn(resolve_speaker(m.group("label")), m.group("text").strip()))
    if not turns:
        raise MissingDialogueSection(f"dialogue {id}: DIALOGUE section has no turns")
    return Dialogue(id, adult_speaker, context, child_age, tuple(turns), language_variant)


def _split_sections(raw: str) -> dict[str, str]:
    headers = [(m.start(), m.end(), m.group(1)) for m in _SECTION_RE.finditer(raw)]
    sections: dict[str, str] = {}
    for i, (_, end, name) in enumerate(headers):
        stop = headers[i + 1][0] if i + 1 < len(headers) else len(raw)
        # Last occurrence wins; generated blocks carry each header once.
        sections[name] = raw[end:stop]
    return sections


def normalize_dialogue(d: Dialogue) -> Dialogue:
    """Normalize turn texts: ASCII quotes, explicit ``\\n`` escapes, trimmed.

    Idempotent, and word counts are unchanged (``regex_words`` treats the
    ``\\n`` escape as whitespace).
    """
    turns = tuple(Turn(t.speaker, normalize_text(t.text)) for t in d.turns)
    return Dialogue(d.id, d.adult_speaker, d.context, d.child_age, turns, d.language_variant)


def normalize_text(text: str) -> str:
    for src, dst in _QUOTE_MAP.items():
        text = text.replace(src, dst)
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    text = text.strip()
    # Whitespace runs containing a newline become one explicit \n escape.
    text = re.sub(r"[ \t]*\n\s*", lambda _: NEWLINE_ESCAPE, text)
    return text


def serialize_training_line(d: Dialogue) -> str:
    """One-line training form: labeled turns joined by ``\\n\\n`` plus EOS."""
    parts = []
    for t in d.turns:
        if "\n" in t.text:
            raise UnnormalizedInput(f"dialogue {d.id}: raw newline in turn text")
        parts.append(f"**{t.speaker.value}**: {t.text}")
    return TURN_SEPARATOR.join(parts) + EOS_TOKEN


_LINE_TURN_SPLIT_RE = re.compile(r"\\n\\n(?=\*\*)")


def parse_training_line(
    line: str,
    *,
    id: str,
    adult_speaker: Speaker,
    context: Context,
    child_age: int,
    language_variant: Language,
) -> Dialogue:
    """Inverse of serialize_training_line for one corpus-file line."""
    line = line.rstrip("\n")
    if not line.endswith(EOS_TOKEN):
        raise CorpusError(f"dialogue {id}: line does not end with {EOS_TOKEN}")
    body = line[: -len(EOS_TOKEN)]
    turns = []
    for chunk in _LINE_TURN_SPLIT_RE.split(body):
        m = _TURN_LABEL_RE.match(chunk)
        if m is None:
            raise UnknownSpeakerLabel(f"dialogue {id}: malformed turn: {chunk[:40]!r}")
        turns.append(Turn(resolve_speaker(m.group("label")), m.group("text")))
    return Dialogue(id, adult_speaker, context, child_age, tuple(turns), language_variant)


def word_stats(corpus: Corpus) -> CorpusStats:
    """Word totals and vocabulary sizes over serialized lines (EOS stripped).

    Unique counts are case-insensitive; ``unique_regex`` uses the regex word
    pattern and ``unique_linguistic`` the rule-based linguistic tokenizer
    (only tokens containing a letter or digit count as words there).
    """
    total = 0
    regex_vocab: set[str] = set()
    ling_vocab: set[str] = set()
    for line in corpus.lines():
        text = line[: -len(EOS_TOKEN)]
        words = regex_words(text)
        total += len(words)
        regex_vocab.update(w.lower() for w in words)
        for tok in linguistic_tokens(text):
            if _WORD_RE.search(tok):
                ling_vocab.add(tok.lower())
    return CorpusStats(total, len(regex_vocab), len(ling_vocab))


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the training file plus its JSON metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for line in corpus.lines():
            f.write(line + "\n")
    meta = [
        {
            "id": d.id,
            "adult_speaker": d.adult_speaker.value,
            "context": d.context.value,
            "child_age": d.child_age,
            "language_variant": d.language_variant.value,
        }
        for d in corpus
    ]
    with _meta_path(path).open("w", encoding="utf-8") as f:
        json.dump(meta, f, ensure_ascii=False, indent=0)


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    with _meta_path(path).open(encoding="utf-8") as f:
        meta = json.load(f)
    dialogues = []
    with path.open(encoding="utf-8") as f:
        for record, line in zip(meta, f, strict=True):
            dialogues.append(
                parse_training_line(
                    line,
                    id=record["id"],
                    adult_speaker=Speaker(record["adult_speaker"]),
                    context=Context(record["context"]),
                    child_age=int(record["child_age"]),
                    language_variant=Language(record["language_variant"]),
                )
            )
    variants = {d.language_variant for d in dialogues}
    variant = variants.pop() if len(variants) == 1 else None
    return Corpus(dialogues, variant)


def corpus_sha256(corpus: Corpus) -> str:
    """Content hash of the serialized training file."""
    h = hashlib.sha256()
    for line in corpus.lines():
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
