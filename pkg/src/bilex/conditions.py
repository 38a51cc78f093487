"""Training-condition builders.

Materializes every exposure regime from parallel corpora: monolingual
toplines, half-size baselines (random or by-speaker), dialogue-level
language mixtures at any ratio, sentence-level code-switching, ingested
word-level code-switching, budgeted reductions, and aligned train/val
splits.

Determinism contract: every choice is drawn from a stream keyed by
(seed, dialogue id, purpose), so rebuilding any condition from the same
inputs is byte-identical and independent of processing order.

Validation splits are computed once over the full parallel id universe,
stratified by speaker and context; each condition keeps the intersection
with its own ids. Conditions built from the same universe and seed
therefore agree on every shared id. When stratum sizes are divisible by
20 the held-out share is exactly 5% for every stratum union.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .corpus import Corpus, Dialogue, Language, Speaker, Turn, corpus_sha256
from .rng import PRNG_NAME, key_hash, stream


class ConditionError(Exception):
    pass


class InvalidSpec(ConditionError):
    pass


class IdMismatch(ConditionError):
    """Parallel corpora do not share an identical id set."""


class IncompleteAssignment(InvalidSpec):
    """Speaker assignment must map Mom and Dad to two distinct languages."""


class SentenceCountMismatch(ConditionError):
    """Aligned variants disagree on turn or sentence counts."""


class BudgetTooLarge(ConditionError):
    pass


class ConditionKind(str, Enum):
    TOPLINE = "topline"
    BASELINE_RANDOM = "baseline_random"
    BASELINE_BY_SPEAKER = "baseline_by_speaker"
    MULTILINGUAL_RANDOM = "multilingual_random"
    MULTILINGUAL_BY_SPEAKER = "multilingual_by_speaker"
    CS_SENTENCE = "cs_sentence"
    CS_WORD_INGEST = "cs_word_ingest"


_BY_SPEAKER_KINDS = (ConditionKind.BASELINE_BY_SPEAKER, ConditionKind.MULTILINGUAL_BY_SPEAKER)
_MONOLINGUAL_KINDS = (ConditionKind.TOPLINE, ConditionKind.BASELINE_RANDOM, ConditionKind.BASELINE_BY_SPEAKER)


@dataclass(frozen=True)
class ExposureSpec:
    """Declarative description of one training condition.

    ``language`` names the rendered language for monolingual kinds (and
    which half a baseline matches). ``p_l2`` is the language-2 (ES) share
    for random mixtures; baselines size themselves to their language's
    share of the mixture. ``reuse_mix_selection`` makes the random baseline
    reuse the ids the random mixture assigned to ``language`` instead of
    re-drawing a stratified half.
    """

    kind: ConditionKind
    language: Language = Language.EN
    p_l2: float = 0.5
    speaker_assignment: tuple[tuple[Speaker, Language], ...] | None = None
    word_budget: int | None = None
    seed: int = 42
    reuse_mix_selection: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_l2 <= 1.0:
            raise InvalidSpec(f"p_l2 must be in [0, 1], got {self.p_l2}")
        if self.word_budget is not None and self.word_budget <= 0:
            raise InvalidSpec("word_budget must be positive")
        if self.kind in _BY_SPEAKER_KINDS:
            self.assignment_map()  # raises IncompleteAssignment
        if self.kind in _MONOLINGUAL_KINDS and self.language not in (Language.EN, Language.ES):
            raise InvalidSpec(f"{self.kind.value} requires language EN or ES")

    def assignment_map(self) -> dict[Speaker, Language]:
        if self.speaker_assignment is None:
            raise IncompleteAssignment(f"{self.kind.value} requires speaker_assignment")
        mapping = dict(self.speaker_assignment)
        if set(mapping) != {Speaker.MOM, Speaker.DAD}:
            raise IncompleteAssignment("speaker_assignment must cover Mom and Dad")
        if len(set(mapping.values())) != 2:
            raise IncompleteAssignment("speakers must be assigned distinct languages")
        return mapping

    def slug(self) -> str:
        parts = [self.kind.value]
        if self.kind in _MONOLINGUAL_KINDS:
            parts.append(self.language.value.lower())
        if self.kind in _BY_SPEAKER_KINDS:
            mapping = self.assignment_map()
            parts.append("mom_" + mapping[Speaker.MOM].value.lower())
        if self.kind in (ConditionKind.MULTILINGUAL_RANDOM,) or (
            self.kind is ConditionKind.BASELINE_RANDOM and self.p_l2 != 0.5
        ):
            parts.append(f"p{round(self.p_l2 * 100):02d}")
        if self.word_budget is not None:
            parts.append(f"w{self.word_budget}")
        return "_".join(parts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "language": self.language.value,
            "p_l2": self.p_l2,
            "speaker_assignment": (
                None
                if self.speaker_assignment is None
                else {sp.value: lang.value for sp, lang in self.speaker_assignment}
            ),
            "word_budget": self.word_budget,
            "seed": self.seed,
            "reuse_mix_selection": self.reuse_mix_selection,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExposureSpec":
        assignment = data.get("speaker_assignment")
        if assignment is not None:
            assignment = tuple(sorted((Speaker(sp), Language(lang)) for sp, lang in assignment.items()))
        return cls(
            kind=ConditionKind(data["kind"]),
            language=Language(data.get("language", "EN")),
            p_l2=float(data.get("p_l2", 0.5)),
            speaker_assignment=assignment,
            word_budget=data.get("word_budget"),
            seed=int(data.get("seed", 42)),
            reuse_mix_selection=bool(data.get("reuse_mix_selection", False)),
        )


@dataclass
class ConditionDataset:
    train: Corpus
    val: Corpus
    manifest: dict

    def __post_init__(self) -> None:
        overlap = set(self.train.ids()) & set(self.val.ids())
        if overlap:
            raise ConditionError(f"train/val ids overlap: {sorted(overlap)[:5]}")


# ---------------------------------------------------------------------------
# sentence segmentation and the sentence-level code-switch mixer

_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?…])\s+")


def sentence_segment(text: str) -> list[str]:
    """Split after terminal punctuation followed by whitespace.

    Opening ¿/¡ stay attached to the following sentence; a text without a
    terminator is a single sentence. Joining the result with single spaces
    preserves the word sequence.
    """
    return [s for s in _SENTENCE_SPLIT_RE.split(text) if s]


def _other(lang: Language) -> Language:
    return Language.ES if lang is Language.EN else Language.EN


def mix_cs_sentence(en: Dialogue, es: Dialogue, seed: int, *, strict: bool = True) -> Dialogue:
    """Interleave the two variants sentence by sentence.

    Each sentence position picks a language uniformly at random, except that
    a fourth consecutive same-language sentence is forced to switch. Runs
    are counted across turn boundaries over the whole dialogue. Choices come
    from the stream keyed by (seed, dialogue id), so the result does not
    depend on batch composition.

    With ``strict`` (the default) differing per-turn sentence counts raise
    SentenceCountMismatch; otherwise the aligned prefix is mixed and the
    longer variant's remainder is appended.
    """
    if en.id != es.id:
        raise IdMismatch(f"variant ids differ: {en.id} vs {es.id}")
    if len(en.turns) != len(es.turns):
        raise SentenceCountMismatch(f"dialogue {en.id}: turn counts differ")
    rng = stream(seed, en.id, "cs")
    run_lang: Language | None = None
    run_len = 0
    turns: list[Turn] = []
    for en_turn, es_turn in zip(en.turns, es.turns):
        en_sents = sentence_segment(en_turn.text)
        es_sents = sentence_segment(es_turn.text)
        if len(en_sents) != len(es_sents) and strict:
            raise SentenceCountMismatch(
                f"dialogue {en.id}: {len(en_sents)} vs {len(es_sents)} sentences in a turn"
            )
        chosen: list[str] = []
        for i in range(min(len(en_sents), len(es_sents))):
            if run_len == 3:
                lang = _other(run_lang)
            else:
                lang = Language.ES if rng.random() < 0.5 else Language.EN
            run_len = run_len + 1 if lang is run_lang else 1
            run_lang = lang
            chosen.append(es_sents[i] if lang is Language.ES else en_sents[i])
        if len(en_sents) != len(es_sents):
            longer, lang = (en_sents, Language.EN) if len(en_sents) > len(es_sents) else (es_sents, Language.ES)
            for sent in longer[min(len(en_sents), len(es_sents)):]:
                run_len = run_len + 1 if lang is run_lang else 1
                run_lang = lang
                chosen.append(sent)
        turns.append(Turn(en_turn.speaker, " ".join(chosen)))
    return Dialogue(en.id, en.adult_speaker, en.context, en.child_age, tuple(turns), Language.CS_SENT)


# ---------------------------------------------------------------------------
# language selection

def _check_alignment(corpora: Iterable[Corpus]) -> None:
    ids = None
    for c in corpora:
        if ids is None:
            ids = c.ids()
        elif c.ids() != ids:
            raise IdMismatch("parallel corpora must share an identical id set")


def select_by_probability(en: Corpus, es: Corpus, p_l2: float, seed: int) -> Corpus:
    """Per dialogue id, emit the ES variant with probability ``p_l2``.

    The draw is keyed by (seed, id) alone, so adding or removing other
    dialogues never changes a given dialogue's language.
    """
    _check_alignment([en, es])
    chosen = []
    for d_en, d_es in zip(en, es):
        u = stream(seed, d_en.id, "langmix").random()
        chosen.append(d_es if u < p_l2 else d_en)
    variant = Language.ES if p_l2 == 1.0 else Language.EN if p_l2 == 0.0 else None
    return Corpus(chosen, variant)


def select_by_speaker(en: Corpus, es: Corpus, assignment: Mapping[Speaker, Language]) -> Corpus:
    """Render each dialogue in the language assigned to its adult speaker."""
    mapping = dict(assignment)
    if set(mapping) != {Speaker.MOM, Speaker.DAD} or len(set(mapping.values())) != 2:
        raise IncompleteAssignment("assignment must map Mom and Dad to distinct languages")
    _check_alignment([en, es])
    chosen = []
    for d_en, d_es in zip(en, es):
        lang = mapping[d_en.adult_speaker]
        chosen.append(d_es if lang is Language.ES else d_en)
    return Corpus(chosen)


# ---------------------------------------------------------------------------
# stratified, apportioned sampling

def _stratum(d: Dialogue) -> tuple[str, str]:
    return (d.adult_speaker.value, d.context.value)


def _apportion(quotas: Mapping, total: int) -> dict:
    """Integer apportionment by largest remainder; deterministic ties."""
    floors = {k: int(q) for k, q in quotas.items()}
    assigned = sum(floors.values())
    remainders = sorted(quotas, key=lambda k: (-(quotas[k] - floors[k]), k))
    for k in remainders:
        if assigned >= total:
            break
        floors[k] += 1
        assigned += 1
    return floors


def _ordered_stratum_ids(corpus: Corpus, seed: int, salt: str) -> dict[tuple[str, str], list[str]]:
    strata: dict[tuple[str, str], list[str]] = {}
    for d in corpus:
        strata.setdefault(_stratum(d), []).append(d.id)
    for key, ids in strata.items():
        ids.sort(key=lambda i: (key_hash(seed, i, salt), i))
    return strata


def compute_val_ids(universe: Corpus, seed: int, ratio: float = 0.95) -> frozenset[str]:
    """Held-out ids: floor((1-ratio)·N) in total, apportioned over strata."""
    if not 0.0 < ratio < 1.0:
        raise InvalidSpec("ratio must be in (0, 1)")
    val_fraction = 1.0 - ratio
    strata = _ordered_stratum_ids(universe, seed, "val")
    # Epsilon keeps the floor exact when (1-ratio)*N is mathematically integral.
    target = int(val_fraction * len(universe) + 1e-9)
    counts = _apportion({k: val_fraction * len(ids) for k, ids in strata.items()}, target)
    held: set[str] = set()
    for key, ids in strata.items():
        held.update(ids[: counts[key]])
    return frozenset(held)


def split_train_val(
    corpus: Corpus,
    seed: int,
    ratio: float = 0.95,
    universe: Corpus | None = None,
) -> ConditionDataset:
    """Split a condition corpus against the shared validation id set.

    ``universe`` is the full parallel corpus the validation set is defined
    on; conditions holding only a subset of ids inherit the intersection.
    """
    universe = universe if universe is not None else corpus
    val_ids = compute_val_ids(universe, seed, ratio) & set(corpus.ids())
    train = corpus.subset(set(corpus.ids()) - val_ids)
    val = corpus.subset(val_ids)
    manifest = {
        "seed": seed,
        "ratio": ratio,
        "prng": PRNG_NAME,
        "counts": {"train": len(train), "val": len(val)},
    }
    return ConditionDataset(train, val, manifest)


def _stratified_share(
    corpus: Corpus,
    fraction: float,
    seed: int,
    salt: str,
    val_ids: frozenset[str],
) -> set[str]:
    """Draw ``fraction`` of ids, proportional per stratum and per split side.

    Stratifying on validation membership keeps every selection's held-out
    share equal to the global one (exact when cell quotas are integral).
    """
    strata = _ordered_stratum_ids(corpus, seed, salt)
    cells: dict[tuple[str, str, bool], list[str]] = {}
    for key, ids in strata.items():
        for i in ids:
            cells.setdefault((*key, i in val_ids), []).append(i)
    n_val = sum(len(ids) for (_, _, in_val), ids in cells.items() if in_val)
    n_train = len(corpus) - n_val
    target_val = round(fraction * n_val)
    target_train = round(fraction * len(corpus)) - target_val
    for side_target, side_total, in_val in ((target_val, n_val, True), (target_train, n_train, False)):
        side_cells = {k: ids for k, ids in cells.items() if k[2] is in_val}
        if not side_cells:
            continue
        quotas = {k: side_target * len(ids) / side_total for k, ids in side_cells.items()}
        counts = _apportion(quotas, side_target)
        for k, ids in side_cells.items():
            side_cells[k] = ids[: counts[k]]
        cells.update(side_cells)
    return {i for ids in cells.values() for i in ids}


def sample_reduced(
    parallel: Mapping[Language, Corpus] | Corpus,
    budget_words: int,
    seed: int,
    reference: Language = Language.EN,
) -> frozenset[str]:
    """One id set whose EN-variant word count minimally reaches the budget.

    Ids stream in a stratified, hash-shuffled order so every prefix keeps
    speaker x context proportions within one dialogue of the full corpus;
    the same set applies to every language variant.
    """
    if isinstance(parallel, Corpus):
        ref = parallel
    else:
        _check_alignment(parallel.values())
        ref = parallel[reference]
    if budget_words > ref.word_budget:
        raise BudgetTooLarge(f"budget {budget_words} exceeds corpus words {ref.word_budget}")
    strata = _ordered_stratum_ids(ref, seed, "reduce")
    keys = sorted(strata)
    total = len(ref)
    shares = {k: len(strata[k]) / total for k in keys}
    taken = {k: 0 for k in keys}
    selected: list[str] = []
    cum_words = 0
    while cum_words < budget_words:
        best = max(
            (k for k in keys if taken[k] < len(strata[k])),
            key=lambda k: (shares[k] * (len(selected) + 1) - taken[k], k),
        )
        did = strata[best][taken[best]]
        taken[best] += 1
        selected.append(did)
        cum_words += ref[did].word_count()
    return frozenset(selected)


# ---------------------------------------------------------------------------
# condition assembly

def build_condition(spec: ExposureSpec, corpora: Mapping[Language, Corpus]) -> ConditionDataset:
    """Materialize a condition and split it into aligned train/val corpora.

    ``corpora`` holds the parallel variants; EN and ES are required for all
    kinds (EN also defines word budgets), and CS_WORD must be present for
    the ingest kind. Output is byte-identical for identical (spec, inputs).
    """
    for lang in (Language.EN, Language.ES):
        if lang not in corpora:
            raise InvalidSpec(f"missing {lang.value} corpus")
    if spec.kind is ConditionKind.CS_WORD_INGEST and Language.CS_WORD not in corpora:
        raise InvalidSpec("cs_word_ingest requires a pre-generated CS_WORD corpus")
    _check_alignment(corpora.values())

    universe = {lang: c for lang, c in corpora.items()}
    reduced_ids: frozenset[str] | None = None
    if spec.word_budget is not None:
        reduced_ids = sample_reduced(universe, spec.word_budget, spec.seed)
        universe = {lang: c.subset(reduced_ids) for lang, c in universe.items()}

    en = universe[Language.EN]
    es = universe[Language.ES]
    val_ids = compute_val_ids(en, spec.seed, 0.95)
    mismatched_turns = 0

    if spec.kind is ConditionKind.TOPLINE:
        selected = universe[spec.language]
    elif spec.kind is ConditionKind.BASELINE_RANDOM:
        fraction = (1.0 - spec.p_l2) if spec.language is Language.EN else spec.p_l2
        if spec.reuse_mix_selection:
            mixed = select_by_probability(en, es, spec.p_l2, spec.seed)
            ids = {d.id for d in mixed if d.language_variant is spec.language}
        else:
            ids = _stratified_share(en, fraction, spec.seed, f"baseline:{spec.language.value}", val_ids)
        selected = universe[spec.language].subset(ids)
    elif spec.kind is ConditionKind.BASELINE_BY_SPEAKER:
        mapping = spec.assignment_map()
        if spec.language not in mapping.values():
            raise IncompleteAssignment(f"no speaker assigned to {spec.language.value}")
        speaker = next(sp for sp, lang in mapping.items() if lang is spec.language)
        ids = {d.id for d in en if d.adult_speaker is speaker}
        selected = universe[spec.language].subset(ids)
    elif spec.kind is ConditionKind.MULTILINGUAL_RANDOM:
        selected = select_by_probability(en, es, spec.p_l2, spec.seed)
    elif spec.kind is ConditionKind.MULTILINGUAL_BY_SPEAKER:
        selected = select_by_speaker(en, es, spec.assignment_map())
    elif spec.kind is ConditionKind.CS_SENTENCE:
        mixed = []
        for d_en, d_es in zip(en, es):
            en_counts = [len(sentence_segment(t.text)) for t in d_en.turns]
            es_counts = [len(sentence_segment(t.text)) for t in d_es.turns]
            if en_counts != es_counts:
                mismatched_turns += sum(a != b for a, b in zip(en_counts, es_counts))
            mixed.append(mix_cs_sentence(d_en, d_es, spec.seed, strict=False))
        selected = Corpus(mixed, Language.CS_SENT)
    elif spec.kind is ConditionKind.CS_WORD_INGEST:
        selected = universe[Language.CS_WORD]
    else:  # pragma: no cover
        raise InvalidSpec(f"unhandled kind {spec.kind}")

    split = split_train_val(selected, spec.seed, 0.95, universe=en)
    languages = {d.id: d.language_variant.value for d in selected}
    manifest = {
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "prng": PRNG_NAME,
        "languages": languages,
        "counts": {
            "total": len(selected),
            "train": len(split.train),
            "val": len(split.val),
            "reduced_universe": None if reduced_ids is None else len(reduced_ids),
        },
        "word_counts": {"train": split.train.word_budget, "val": split.val.word_budget},
        "mismatched_turns": mismatched_turns,
        "sha256": {"train": corpus_sha256(split.train), "val": corpus_sha256(split.val)},
    }
    return ConditionDataset(split.train, split.val, manifest)
