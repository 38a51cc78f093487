"""Evaluation harness: perplexity, minimal pairs, and word similarity.

Scoring conventions, fixed here so conditions stay comparable:

* Perplexity is exp(total NLL / scored tokens) over serialized lines,
  speaker labels and EOS tokens included. Sequences longer than the model
  window are scored with a sliding window (default stride 512) so that
  every token is scored exactly once.
* A minimal pair is correct iff the grammatical sentence's summed
  (unnormalized) log-probability strictly exceeds the ungrammatical one's;
  ties count as incorrect and are reported.
* Word vectors are the mean of the subword vectors of the space-prefixed
  word; per-layer Spearman correlations are reported and the best layer is
  the argmax (lowest index on ties).
* Evaluation items are filtered so every content word (rule-based
  linguistic tokenization, case-insensitive) appears in all designated
  training vocabularies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bpe import BpeModel
from .corpus import EOS_TOKEN, Corpus, Speaker, linguistic_tokens, regex_words
from .models.base import EmbeddingProvider, MissingTokenError, ScoringModel


class EvalError(Exception):
    pass


class EmptySequence(EvalError):
    pass


class EmptyItemSet(EvalError):
    pass


class DegenerateInput(EvalError):
    """Spearman correlation of a constant vector is undefined."""


class MismatchedMetricKeys(EvalError):
    pass


# ---------------------------------------------------------------------------
# perplexity

def sliding_window_nll(
    model: ScoringModel,
    ids: Sequence[int],
    window: int = 1024,
    stride: int = 512,
) -> tuple[float, int]:
    """Total NLL (nats) and scored-token count for one sequence.

    The first window scores positions 1..window-1; each later window
    advances by ``stride`` and scores only its final ``stride`` positions,
    so every token is scored once with the maximal left context the window
    allows.
    """
    if len(ids) == 0:
        raise EmptySequence("cannot score an empty sequence")
    window = min(window, model.context_window)
    if window < 2:
        raise EvalError("window must cover at least two tokens")
    if stride > window:
        raise EvalError(f"stride {stride} exceeds window {window}")
    if len(ids) == 1:
        return 0.0, 0
    total = 0.0
    scored = 0
    next_pos = 1
    begin = 0
    while True:
        end = min(begin + window, len(ids))
        log_probs = model.log_probs(ids[begin:end])
        start_pos = max(begin + 1, next_pos)
        take = end - start_pos
        if take > 0:
            offset = start_pos - (begin + 1)
            total -= math.fsum(log_probs[offset:offset + take])
            scored += take
            next_pos = end
        if end == len(ids):
            return total, scored
        # A window must start before its first unscored position or that
        # token would have no in-window context (binds when stride == window).
        begin = min(begin + stride, next_pos - 1)


@dataclass(frozen=True)
class PerplexityResult:
    ppl: float
    total_nll: float
    scored_tokens: int
    oov_tokens: int


def perplexity(
    model: ScoringModel,
    corpus: Corpus | Iterable[str],
    tokenizer: BpeModel,
    window: int = 1024,
    stride: int = 512,
) -> PerplexityResult:
    """Corpus perplexity over serialized lines (EOS tokens included)."""
    lines = corpus.lines() if isinstance(corpus, Corpus) else iter(corpus)
    total = 0.0
    scored = 0
    oov = 0
    count_oov = getattr(model, "oov_count", None)
    for line in lines:
        ids = tokenizer.encode(line)
        nll, n = sliding_window_nll(model, ids, window, stride)
        total += nll
        scored += n
        if count_oov is not None:
            oov += count_oov(ids)
    if scored == 0:
        raise EmptySequence("no scorable tokens in corpus")
    return PerplexityResult(math.exp(total / scored), total, scored, oov)


def sequence_log_prob(
    model: ScoringModel, ids: Sequence[int], window: int = 1024, stride: int = 512
) -> float:
    nll, _ = sliding_window_nll(model, ids, window, stride)
    return -nll


# ---------------------------------------------------------------------------
# minimal pairs

@dataclass(frozen=True)
class MinimalPairItem:
    uid: str
    phenomenon: str
    sentence_good: str
    sentence_bad: str

    def __post_init__(self) -> None:
        if not self.sentence_good or not self.sentence_bad:
            raise EvalError(f"item {self.uid}: empty sentence")
        if self.sentence_good == self.sentence_bad:
            raise EvalError(f"item {self.uid}: good and bad sentences are identical")


@dataclass(frozen=True)
class MinimalPairResult:
    accuracy: float
    correct: int
    ties: int
    total: int


def score_minimal_pairs(
    model: ScoringModel,
    items: Sequence[MinimalPairItem],
    tokenizer: BpeModel,
    prepend_speaker: Speaker | None = None,
    window: int = 1024,
    stride: int = 512,
) -> MinimalPairResult:
    """Accuracy = fraction of items whose good sentence scores higher.

    Ties are counted as incorrect and reported. ``prepend_speaker`` adds a
    ``**Mom**: `` style prefix to both sentences.
    """
    if not items:
        raise EmptyItemSet("no minimal-pair items to score")
    prefix = f"**{prepend_speaker.value}**: " if prepend_speaker else ""
    correct = 0
    ties = 0
    for item in items:
        lp_good = sequence_log_prob(model, tokenizer.encode(prefix + item.sentence_good), window, stride)
        lp_bad = sequence_log_prob(model, tokenizer.encode(prefix + item.sentence_bad), window, stride)
        if lp_good > lp_bad:
            correct += 1
        elif lp_good == lp_bad:
            ties += 1
    return MinimalPairResult(correct / len(items), correct, ties, len(items))


# ---------------------------------------------------------------------------
# Spearman rank correlation

def _fractional_ranks(values: Sequence[float]) -> list[float]:
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of fractional (tie-averaged) ranks."""
    if len(xs) != len(ys):
        raise EvalError("input lengths differ")
    if len(xs) < 2:
        raise EvalError("need at least two observations")
    rx = _fractional_ranks(xs)
    ry = _fractional_ranks(ys)
    mx = math.fsum(rx) / len(rx)
    my = math.fsum(ry) / len(ry)
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    var_x = math.fsum((a - mx) ** 2 for a in rx)
    var_y = math.fsum((b - my) ** 2 for b in ry)
    if var_x == 0.0 or var_y == 0.0:
        raise DegenerateInput("constant input has no defined rank correlation")
    return cov / math.sqrt(var_x * var_y)


# ---------------------------------------------------------------------------
# word similarity

@dataclass(frozen=True)
class WordPairItem:
    w1: str
    w2: str
    gold: float
    lang1: str
    lang2: str

    @property
    def lang_pair(self) -> str:
        return f"{self.lang1}-{self.lang2}"


@dataclass(frozen=True)
class WordSimilarityResult:
    per_layer: tuple[float | None, ...]
    best_layer: int | None
    best_rho: float | None
    pairs_used: int
    pairs_missing: int


def _word_vector(provider: EmbeddingProvider, tokenizer: BpeModel, word: str, layer: int) -> np.ndarray:
    ids = tokenizer.encode(" " + word)
    if not ids:
        raise MissingTokenError(f"word {word!r} produced no tokens")
    return np.mean([np.asarray(provider.vector(i, layer), dtype=np.float64) for i in ids], axis=0)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise MissingTokenError("zero-norm word vector")
    return float(a @ b) / (na * nb)


def word_similarity_eval(
    provider: EmbeddingProvider,
    items: Sequence[WordPairItem],
    tokenizer: BpeModel,
) -> WordSimilarityResult:
    """Per-layer Spearman rho of cosine similarity against gold judgments.

    Items whose words yield no usable vector at some layer are dropped from
    every layer (and counted), so all layers score the same pair set.
    """
    if not items:
        raise EmptyItemSet("no word pairs to score")
    n_layers = provider.n_layers
    sims: list[list[float]] = [[] for _ in range(n_layers)]
    golds: list[float] = []
    missing = 0
    for item in items:
        try:
            per_layer = [
                _cosine(
                    _word_vector(provider, tokenizer, item.w1, layer),
                    _word_vector(provider, tokenizer, item.w2, layer),
                )
                for layer in range(n_layers)
            ]
        except MissingTokenError:
            missing += 1
            continue
        golds.append(item.gold)
        for layer, sim in enumerate(per_layer):
            sims[layer].append(sim)
    per_layer_rho: list[float | None] = []
    for layer in range(n_layers):
        try:
            per_layer_rho.append(spearman(golds, sims[layer]) if len(golds) >= 2 else None)
        except DegenerateInput:
            per_layer_rho.append(None)
    scored = [(rho, layer) for layer, rho in enumerate(per_layer_rho) if rho is not None]
    if scored:
        best_rho = max(rho for rho, _ in scored)
        best_layer = min(layer for rho, layer in scored if rho == best_rho)
    else:
        best_rho = best_layer = None
    return WordSimilarityResult(tuple(per_layer_rho), best_layer, best_rho, len(golds), missing)


# ---------------------------------------------------------------------------
# vocabulary filtering

@dataclass(frozen=True)
class FilterResult:
    items: tuple
    kept: int
    total: int

    @property
    def ratio(self) -> float:
        return self.kept / self.total if self.total else 1.0


def corpus_vocabulary(corpus: Corpus | Iterable[str]) -> frozenset[str]:
    """Lowercased linguistic word types over serialized lines."""
    lines = corpus.lines() if isinstance(corpus, Corpus) else iter(corpus)
    vocab: set[str] = set()
    for line in lines:
        text = line[: -len(EOS_TOKEN)] if line.endswith(EOS_TOKEN) else line
        vocab.update(w.lower() for w in linguistic_tokens(text) if regex_words(w))
    return frozenset(vocab)


def content_words(sentence: str) -> list[str]:
    return [w.lower() for w in linguistic_tokens(sentence) if regex_words(w)]


def filter_minimal_pairs(
    items: Sequence[MinimalPairItem], vocab_sets: Sequence[frozenset[str] | set[str]]
) -> FilterResult:
    """Keep items whose sentences' content words appear in every vocab set."""
    allowed = _intersect(vocab_sets)
    kept = tuple(
        item
        for item in items
        if all(w in allowed for w in content_words(item.sentence_good))
        and all(w in allowed for w in content_words(item.sentence_bad))
    )
    return FilterResult(kept, len(kept), len(items))


def filter_word_pairs(
    items: Sequence[WordPairItem],
    vocab_sets_by_language: Mapping[str, Sequence[frozenset[str] | set[str]]],
) -> FilterResult:
    """Each word is checked against its own language's vocabulary sets."""
    allowed = {lang: _intersect(sets) for lang, sets in vocab_sets_by_language.items()}
    kept = []
    for item in items:
        if item.lang1 not in allowed or item.lang2 not in allowed:
            continue
        if all(w in allowed[item.lang1] for w in content_words(item.w1)) and all(
            w in allowed[item.lang2] for w in content_words(item.w2)
        ):
            kept.append(item)
    return FilterResult(tuple(kept), len(kept), len(items))


def _intersect(vocab_sets: Sequence[frozenset[str] | set[str]]) -> frozenset[str]:
    if not vocab_sets:
        raise EvalError("at least one vocabulary set is required")
    out = frozenset(vocab_sets[0])
    for s in vocab_sets[1:]:
        out &= frozenset(s)
    return out


# ---------------------------------------------------------------------------
# aggregation across seeds

@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    n_runs: int


def aggregate_runs(
    runs: Sequence[Mapping[str, float]],
    mirrored: Sequence[Mapping[str, float]] | None = None,
) -> dict[str, MetricSummary]:
    """Mean and sample std across seeds.

    When ``mirrored`` holds the symmetric speaker-language assignment's
    runs, each seed's value is the mean of the two assignments before
    aggregating, so assignment-specific biases cancel.
    """
    if not runs:
        raise EvalError("no runs to aggregate")
    keys = set(runs[0])
    for run in runs[1:]:
        if set(run) != keys:
            raise MismatchedMetricKeys(f"runs disagree on metrics: {sorted(keys ^ set(run))}")
    values: dict[str, list[float]] = {k: [float(r[k]) for r in runs] for k in keys}
    if mirrored is not None:
        if len(mirrored) != len(runs):
            raise MismatchedMetricKeys("mirrored runs must pair one-to-one with runs")
        for run in mirrored:
            if set(run) != keys:
                raise MismatchedMetricKeys("mirrored runs disagree on metrics")
        for k in keys:
            values[k] = [(a + float(b[k])) / 2 for a, b in zip(values[k], mirrored)]
    out = {}
    for k, vals in values.items():
        mean = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        else:
            std = 0.0
        out[k] = MetricSummary(mean, std, len(vals))
    return out


@dataclass
class EvalReport:
    """Per-metric results with seed aggregation and filtering provenance."""

    metrics: dict[str, MetricSummary]
    runs: list[dict[str, float]]
    filtering: dict[str, dict[str, int]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {
                k: {"mean": m.mean, "std": m.std, "n_runs": m.n_runs}
                for k, m in sorted(self.metrics.items())
            },
            "runs": self.runs,
            "filtering": self.filtering,
            "config": self.config,
        }


# ---------------------------------------------------------------------------
# benchmark file loading

def load_minimal_pairs_tsv(path: str | Path) -> list[MinimalPairItem]:
    items = []
    for row in _tsv_rows(path, header=("uid", "phenomenon", "sentence_good", "sentence_bad")):
        items.append(MinimalPairItem(row[0], row[1], row[2], row[3]))
    return items


def load_word_pairs_tsv(path: str | Path) -> list[WordPairItem]:
    items = []
    for row in _tsv_rows(path, header=("w1", "w2", "gold", "lang1", "lang2")):
        items.append(WordPairItem(row[0], row[1], float(row[2]), row[3], row[4]))
    return items


def _tsv_rows(path: str | Path, header: tuple[str, ...]):
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            row = line.split("\t")
            if lineno == 0 and tuple(row) == header:
                continue
            if len(row) != len(header):
                raise EvalError(f"{path}:{lineno + 1}: expected {len(header)} columns, got {len(row)}")
            yield row
