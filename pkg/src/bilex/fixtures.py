"""Synthetic parallel pseudo-language corpora.

Desk-scale stand-in for the externally generated dialogue data: two nonce
languages share a template grammar, so the generated corpora are sentence
aligned and meaning matched while their vocabularies stay fully disjoint.
Disjointness is structural: pseudo-EN words always end in a consonant
cluster, pseudo-ES words always end in a vowel.

Lexicons are built from fixed syllable inventories and do not depend on the
fixture seed, so corpora generated with different seeds share vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .corpus import CHILD_AGES, Context, Corpus, Dialogue, Language, Speaker, Turn
from .rng import SplitMix64, stream


class EmptyLexicon(Exception):
    """A lexicon word class has no entries."""


@dataclass(frozen=True)
class Lexicon:
    determiners: tuple[str, ...]
    pronouns: tuple[str, ...]
    nouns: tuple[str, ...]
    verbs: tuple[str, ...]
    adjectives: tuple[str, ...]
    adverbs: tuple[str, ...]
    question_words: tuple[str, ...]
    exclamations: tuple[str, ...]

    def validate(self) -> None:
        for f in fields(self):
            if not getattr(self, f.name):
                raise EmptyLexicon(f"lexicon class {f.name} is empty")

    def all_words(self) -> set[str]:
        words: set[str] = set()
        for f in fields(self):
            words.update(getattr(self, f.name))
        return words


_CLASS_SIZES = {
    "determiners": 3,
    "pronouns": 4,
    "nouns": 60,
    "verbs": 40,
    "adjectives": 24,
    "adverbs": 12,
    "question_words": 4,
    "exclamations": 4,
}

_EN_ONSETS = ("bl", "st", "gr", "dr", "fl", "kr", "pl", "sk", "tr", "sn", "gl", "br", "cl", "sp")
_EN_VOWELS = ("a", "e", "i", "o", "u", "ee", "oo", "ai")
_EN_CODAS = ("rk", "nd", "st", "mp", "lt", "ft", "sh", "ng", "rm", "ck", "lp", "nt")

_ES_ONSETS = ("m", "r", "l", "t", "s", "n", "d", "p", "b", "ch", "v", "g", "f", "j")
_ES_VOWELS = ("a", "e", "i", "o", "u")


def _en_word(rng: SplitMix64) -> str:
    word = rng.choice(_EN_ONSETS) + rng.choice(_EN_VOWELS)
    if rng.random() < 0.45:
        word += rng.choice(_EN_ONSETS) + rng.choice(_EN_VOWELS)
    return word + rng.choice(_EN_CODAS)


def _es_word(rng: SplitMix64) -> str:
    n_syll = 2 + (rng.random() < 0.55)
    return "".join(rng.choice(_ES_ONSETS) + rng.choice(_ES_VOWELS) for _ in range(n_syll))


def _build_lexicon(lang: Language) -> Lexicon:
    make = _en_word if lang is Language.EN else _es_word
    classes: dict[str, tuple[str, ...]] = {}
    for name, size in _CLASS_SIZES.items():
        rng = stream(0xB11E, "lexicon", lang.value, name)
        seen: list[str] = []
        while len(seen) < size:
            w = make(rng)
            if w not in seen:
                seen.append(w)
        classes[name] = tuple(seen)
    return Lexicon(**classes)


_DEFAULT_LEXICONS: dict[Language, Lexicon] | None = None


def default_lexicons() -> dict[Language, Lexicon]:
    global _DEFAULT_LEXICONS
    if _DEFAULT_LEXICONS is None:
        lex = {Language.EN: _build_lexicon(Language.EN), Language.ES: _build_lexicon(Language.ES)}
        overlap = lex[Language.EN].all_words() & lex[Language.ES].all_words()
        assert not overlap, f"pseudo-language lexicons overlap: {sorted(overlap)[:5]}"
        _DEFAULT_LEXICONS = lex
    return _DEFAULT_LEXICONS


# Templates: word-class slots plus terminal punctuation. The same template
# and slot indices render both languages, keeping sentence counts and
# meanings aligned. Question/exclamation sentences gain ¿/¡ in pseudo-ES.
_TEMPLATES: tuple[tuple[tuple[str, ...], str], ...] = (
    (("determiners", "nouns", "verbs", "determiners", "nouns"), "."),
    (("determiners", "adjectives", "nouns", "verbs", "adverbs"), "."),
    (("pronouns", "verbs", "determiners", "nouns"), "."),
    (("pronouns", "verbs", "determiners", "adjectives", "nouns"), "."),
    (("determiners", "nouns", "verbs", "adverbs"), "."),
    (("question_words", "verbs", "pronouns", "determiners", "nouns"), "?"),
    (("question_words", "verbs", "determiners", "adjectives", "nouns"), "?"),
    (("exclamations", "pronouns", "verbs", "adverbs"), "!"),
)


@dataclass(frozen=True)
class _SentencePlan:
    template: int
    slots: tuple[int, ...]

    def render(self, lexicon: Lexicon, spanish_marks: bool) -> str:
        classes, punct = _TEMPLATES[self.template]
        words = [getattr(lexicon, c)[i % len(getattr(lexicon, c))] for c, i in zip(classes, self.slots)]
        words[0] = words[0].capitalize()
        body = " ".join(words)
        if spanish_marks and punct == "?":
            return f"¿{body}?"
        if spanish_marks and punct == "!":
            return f"¡{body}!"
        return body + punct


def _plan_sentence(rng: SplitMix64) -> _SentencePlan:
    t = rng.below(len(_TEMPLATES))
    classes, _ = _TEMPLATES[t]
    return _SentencePlan(t, tuple(rng.below(1 << 20) for _ in classes))


def generate_fixture(
    seed: int,
    n_dialogues: int,
    lexicons: dict[Language, Lexicon] | None = None,
) -> tuple[Corpus, Corpus]:
    """Generate aligned pseudo-EN and pseudo-ES corpora.

    Both corpora have identical ids, turn counts, and per-turn sentence
    counts; output is byte-deterministic in ``seed``. Speaker/context strata
    cycle so every stratum holds ``n_dialogues / 4`` dialogues when 4
    divides ``n_dialogues``.
    """
    if n_dialogues <= 0:
        raise ValueError("n_dialogues must be positive")
    if lexicons is None:
        lexicons = default_lexicons()
    for lang in (Language.EN, Language.ES):
        if lang not in lexicons:
            raise EmptyLexicon(f"no lexicon for {lang.value}")
        lexicons[lang].validate()
    overlap = lexicons[Language.EN].all_words() & lexicons[Language.ES].all_words()
    if overlap:
        raise ValueError(f"lexicons must be disjoint; shared words: {sorted(overlap)[:5]}")

    strata = (
        (Speaker.MOM, Context.HOME),
        (Speaker.MOM, Context.PUBLIC),
        (Speaker.DAD, Context.HOME),
        (Speaker.DAD, Context.PUBLIC),
    )
    en_dialogues: list[Dialogue] = []
    es_dialogues: list[Dialogue] = []
    for i in range(n_dialogues):
        did = f"d{i:06d}"
        adult, context = strata[i % 4]
        age = CHILD_AGES[(i // 4) % len(CHILD_AGES)]
        rng = stream(seed, did, "fixture")
        n_turns = 4 + rng.below(4)
        en_turns: list[Turn] = []
        es_turns: list[Turn] = []
        for t in range(n_turns):
            speaker = adult if t % 2 == 0 else Speaker.CHILD
            plans = [_plan_sentence(rng) for _ in range(1 + rng.below(3))]
            en_turns.append(Turn(speaker, " ".join(p.render(lexicons[Language.EN], False) for p in plans)))
            es_turns.append(Turn(speaker, " ".join(p.render(lexicons[Language.ES], True) for p in plans)))
        en_dialogues.append(Dialogue(did, adult, context, age, tuple(en_turns), Language.EN))
        es_dialogues.append(Dialogue(did, adult, context, age, tuple(es_turns), Language.ES))
    return Corpus(en_dialogues, Language.EN), Corpus(es_dialogues, Language.ES)
