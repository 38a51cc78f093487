import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom, spearmanr

from bilex.bpe import BpeModel, train_bpe
from bilex.corpus import Speaker
from bilex.evaluation import (
    DegenerateInput,
    EmptyItemSet,
    EmptySequence,
    EvalError,
    MinimalPairItem,
    MismatchedMetricKeys,
    WordPairItem,
    aggregate_runs,
    corpus_vocabulary,
    filter_minimal_pairs,
    filter_word_pairs,
    load_minimal_pairs_tsv,
    load_word_pairs_tsv,
    perplexity,
    score_minimal_pairs,
    sliding_window_nll,
    spearman,
    word_similarity_eval,
)
from bilex.fixtures import generate_fixture
from bilex.models import (
    EFFECTIVELY_UNBOUNDED,
    MissingTokenError,
    NGramLm,
    train_ngram,
    train_sgns,
)
from bilex.rng import stream


def oracle_full_context_nll(model, ids, window):
    """Brute force: score each position with its maximal left context."""
    total = 0.0
    for pos in range(1, len(ids)):
        segment = ids[max(0, pos - window + 1): pos + 1]
        total -= model.log_probs(segment)[-1]
    return total, len(ids) - 1


class TotalScoreModel:
    """Fake scorer with a preset total log-prob per exact sequence."""

    context_window = EFFECTIVELY_UNBOUNDED

    def __init__(self, totals):
        self.totals = totals

    def log_probs(self, ids):
        total = self.totals[tuple(ids)]
        return [0.0] * (len(ids) - 2) + [total]


class RandomScoreModel:
    """Deterministic pseudo-random total per sequence."""

    context_window = EFFECTIVELY_UNBOUNDED

    def __init__(self, seed=0):
        self.seed = seed

    def log_probs(self, ids):
        total = -stream(self.seed, ",".join(map(str, ids))).random()
        return [0.0] * (len(ids) - 2) + [total]


class TestSlidingWindow:
    def test_short_sequence_equals_full_context(self):
        rng = stream(1, "sw")
        ids = [rng.below(10) for _ in range(200)]
        model = train_ngram(ids, order=3)
        windowed = sliding_window_nll(model, ids[:100], window=1024, stride=512)
        direct = (-math.fsum(model.log_probs(ids[:100])), 99)
        assert windowed[1] == direct[1]
        assert windowed[0] == pytest.approx(direct[0], rel=1e-12)

    def test_uniform_model_closed_form(self):
        model = NGramLm.uniform(40)
        n = 1500
        nll, scored = sliding_window_nll(model, list(range(40)) * 38, window=128, stride=64)
        total_len = 40 * 38
        assert scored == total_len - 1
        assert nll == pytest.approx((total_len - 1) * math.log(41), rel=1e-12)

    def test_strided_matches_max_context_oracle(self):
        rng = stream(2, "sw-oracle")
        ids = [rng.below(12) for _ in range(1500)]
        model = train_ngram([rng.below(12) for _ in range(3000)], order=3)
        nll, scored = sliding_window_nll(model, ids, window=1024, stride=512)
        o_nll, o_scored = oracle_full_context_nll(model, ids, window=1024)
        assert scored == o_scored
        assert nll == pytest.approx(o_nll, rel=1e-9)

    def test_each_token_scored_once_on_varied_lengths(self):
        model = NGramLm.uniform(8)
        for length in (2, 100, 511, 512, 513, 1024, 1025, 2047, 3000):
            ids = [i % 8 for i in range(length)]
            _, scored = sliding_window_nll(model, ids, window=1024, stride=512)
            assert scored == length - 1

    def test_stride_equal_to_window_still_scores_every_token(self):
        # Non-overlapping windows: the boundary token is scored from a
        # window shifted back one position so it keeps some context.
        model = NGramLm.uniform(8)
        for length in (65, 128, 129, 300):
            ids = [i % 8 for i in range(length)]
            nll, scored = sliding_window_nll(model, ids, window=64, stride=64)
            assert scored == length - 1
            assert nll == pytest.approx((length - 1) * math.log(9), rel=1e-12)
        # A bigram only ever needs one token of context, so the boundary
        # scores agree exactly with the per-token maximal-context oracle.
        rng = stream(8, "sw-eq")
        train = [rng.below(12) for _ in range(3000)]
        bigram = train_ngram(train, order=2)
        ids = [rng.below(12) for _ in range(500)]
        nll, scored = sliding_window_nll(bigram, ids, window=64, stride=64)
        o_nll, o_scored = oracle_full_context_nll(bigram, ids, window=64)
        assert scored == o_scored
        assert nll == pytest.approx(o_nll, rel=1e-9)

    def test_empty_sequence_raises(self):
        with pytest.raises(EmptySequence):
            sliding_window_nll(NGramLm.uniform(4), [], window=16, stride=8)

    def test_stride_must_fit_window(self):
        with pytest.raises(EvalError):
            sliding_window_nll(NGramLm.uniform(4), [1, 2, 3], window=4, stride=8)

    def test_degenerate_window_rejected(self):
        with pytest.raises(EvalError):
            sliding_window_nll(NGramLm.uniform(4), [1, 2, 3], window=1, stride=1)


class TestPerplexity:
    def test_uniform_model_ppl_is_vocab_plus_one(self):
        model = NGramLm.uniform(99)
        tokenizer = BpeModel([])
        result = perplexity(model, ["abc def", "ghi"], tokenizer)
        assert result.ppl == pytest.approx(100.0, rel=1e-12)

    def test_train_ppl_below_held_out_ppl(self):
        en, _ = generate_fixture(3, 300)
        train_lines = list(en.lines())[:250]
        held_out = list(en.lines())[250:]
        tokenizer = train_bpe(train_lines, vocab_size=400)
        ids = [t for line in train_lines for t in tokenizer.encode(line)]
        model = train_ngram(ids, order=3)
        ppl_in = perplexity(model, train_lines, tokenizer).ppl
        ppl_out = perplexity(model, held_out, tokenizer).ppl
        assert ppl_in < ppl_out

    def test_oov_tokens_counted(self):
        model = train_ngram([1, 2, 3] * 10, order=2)
        tokenizer = BpeModel([])
        result = perplexity(model, ["zz"], tokenizer)
        assert result.oov_tokens == len(tokenizer.encode("zz"))


def make_items(n, prefix="i"):
    return [
        MinimalPairItem(f"{prefix}{k}", "agreement", f"good sentence {k}", f"bad sentence {k}")
        for k in range(n)
    ]


def totals_for(items, tokenizer, good, bad):
    table = {}
    for item in items:
        table[tuple(tokenizer.encode(item.sentence_good))] = good(item)
        table[tuple(tokenizer.encode(item.sentence_bad))] = bad(item)
    return table


class TestMinimalPairs:
    def test_constructed_oracle_scores_everything(self):
        items = make_items(50)
        tokenizer = BpeModel([])
        model = TotalScoreModel(totals_for(items, tokenizer, lambda i: 1.0, lambda i: 0.0))
        result = score_minimal_pairs(model, items, tokenizer)
        assert result.accuracy == 1.0
        assert result.ties == 0

    def test_constant_scores_count_as_incorrect_ties(self):
        items = make_items(20)
        tokenizer = BpeModel([])
        model = TotalScoreModel(totals_for(items, tokenizer, lambda i: -1.0, lambda i: -1.0))
        result = score_minimal_pairs(model, items, tokenizer)
        assert result.accuracy == 0.0
        assert result.ties == 20

    def test_random_scores_near_chance(self):
        items = make_items(2000)
        tokenizer = BpeModel([])
        result = score_minimal_pairs(RandomScoreModel(seed=5), items, tokenizer)
        lo = binom.ppf(5e-5, 2000, 0.5) / 2000
        hi = binom.ppf(1 - 5e-5, 2000, 0.5) / 2000
        assert lo <= result.accuracy <= hi

    def test_monotone_transform_invariance(self):
        items = make_items(300)
        tokenizer = BpeModel([])
        base = totals_for(
            items, tokenizer,
            lambda i: -stream(1, i.uid, "g").random(),
            lambda i: -stream(1, i.uid, "b").random(),
        )
        result = score_minimal_pairs(TotalScoreModel(base), items, tokenizer)
        for transform in (lambda x: 3 * x + 7, lambda x: x ** 3, math.tanh):
            warped = {k: transform(v) for k, v in base.items()}
            again = score_minimal_pairs(TotalScoreModel(warped), items, tokenizer)
            assert again.accuracy == result.accuracy
            assert again.ties == result.ties

    def test_prepended_speaker_label_changes_scored_sequence(self):
        items = make_items(3)
        tokenizer = BpeModel([])
        seen = []

        class Recorder:
            context_window = EFFECTIVELY_UNBOUNDED

            def log_probs(self, ids):
                seen.append(list(ids))
                return [0.0] * (len(ids) - 1)

        score_minimal_pairs(Recorder(), items, tokenizer, prepend_speaker=Speaker.MOM)
        prefix = tokenizer.encode("**Mom**: ")
        assert all(ids[: len(prefix)] == prefix for ids in seen)

    def test_empty_item_set(self):
        with pytest.raises(EmptyItemSet):
            score_minimal_pairs(RandomScoreModel(), [], BpeModel([]))


class TestSpearman:
    def test_identical_and_reversed(self):
        xs = [3.0, 1.0, 4.0, 1.5, 9.0]
        assert spearman(xs, xs) == pytest.approx(1.0, abs=1e-15)
        assert spearman(xs, [-x for x in xs]) == pytest.approx(-1.0, abs=1e-15)

    def test_tied_example_matches_reference(self):
        rho, _ = spearmanr([1, 2, 2, 4], [10, 20, 30, 40])
        assert spearman([1, 2, 2, 4], [10, 20, 30, 40]) == pytest.approx(rho, abs=1e-12)

    def test_random_vectors_with_ties_match_reference(self):
        rng = stream(6, "rho")
        for _ in range(50):
            n = 2 + rng.below(40)
            xs = [rng.below(8) / 2 for _ in range(n)]
            ys = [rng.below(8) / 2 for _ in range(n)]
            try:
                ours = spearman(xs, ys)
            except DegenerateInput:
                assert len(set(xs)) == 1 or len(set(ys)) == 1
                continue
            ref, _ = spearmanr(xs, ys)
            assert ours == pytest.approx(ref, abs=1e-12)

    def test_degenerate_input(self):
        with pytest.raises(DegenerateInput):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    @given(
        st.lists(st.integers(min_value=0, max_value=6), min_size=3, max_size=30),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=150, deadline=None)
    def test_bounds_and_monotone_invariance(self, xs, rnd):
        ys = list(xs)
        rnd.shuffle(ys)
        try:
            rho = spearman(xs, ys)
        except DegenerateInput:
            return
        assert -1.0 - 1e-12 <= rho <= 1.0 + 1e-12
        transformed = spearman([2 * x + 1 for x in xs], [y ** 3 for y in ys])
        assert transformed == pytest.approx(rho, abs=1e-12)


class PlantedProvider:
    """Two layers over single-byte words: layer 1 encodes the gold order,
    layer 0 collapses every word to one direction (degenerate rho)."""

    n_layers = 2
    dim = 2

    def __init__(self, angles):
        self.angles = angles  # byte id -> angle on layer 1

    def vector(self, token_id, layer=0):
        if token_id == ord(" "):
            return np.zeros(2)
        if token_id not in self.angles:
            raise MissingTokenError(str(token_id))
        if layer == 0:
            return np.array([1.0, 0.0])
        theta = self.angles[token_id]
        return np.array([math.cos(theta), math.sin(theta)])


class MirroredProvider(PlantedProvider):
    """Both layers carry the same angles, so per-layer rhos tie exactly."""

    def vector(self, token_id, layer=0):
        if token_id == ord(" "):
            return np.zeros(2)
        if token_id not in self.angles:
            raise MissingTokenError(str(token_id))
        theta = self.angles[token_id]
        return np.array([math.cos(theta), math.sin(theta)])


class TestWordSimilarity:
    def build_benchmark(self):
        # Pair k compares "a"+k with "b"+k at angle gap theta_k; cosine
        # similarity on layer 1 is cos(theta_k), decreasing in k while the
        # gold is increasing, so layer 1 anti-correlates unless golds are
        # reversed. Use golds aligned with layer 1 and anti-aligned with 0.
        letters = ["a", "b", "c", "d", "e", "f", "g", "h"]
        items = []
        angles = {}
        for k in range(4):
            w1, w2 = letters[2 * k], letters[2 * k + 1]
            gap = 0.3 * (k + 1)
            angles[ord(w1)] = 0.0 if k % 2 == 0 else 0.5
            angles[ord(w2)] = angles[ord(w1)] + gap
            items.append(WordPairItem(w1, w2, gold=4 - k, lang1="EN", lang2="EN"))
        return items, angles

    def test_planted_provider_perfect_on_designed_layer(self):
        items, angles = self.build_benchmark()
        result = word_similarity_eval(PlantedProvider(angles), items, BpeModel([]))
        assert result.per_layer[0] is None  # constant similarities
        assert result.per_layer[1] == pytest.approx(1.0, abs=1e-12)
        assert result.best_layer == 1
        assert result.best_rho == pytest.approx(1.0, abs=1e-12)
        assert result.pairs_used == 4

    def test_tied_layers_pick_lowest_index(self):
        items, angles = self.build_benchmark()
        result = word_similarity_eval(MirroredProvider(angles), items, BpeModel([]))
        assert result.per_layer[0] == result.per_layer[1]
        assert result.best_layer == 0

    def test_single_layer_provider_best_layer_zero(self):
        items, angles = self.build_benchmark()

        class OneLayer(MirroredProvider):
            n_layers = 1

        result = word_similarity_eval(OneLayer(angles), items, BpeModel([]))
        assert result.best_layer == 0

    def test_missing_words_dropped_and_counted(self):
        items, angles = self.build_benchmark()
        items.append(WordPairItem("zz", "a", gold=1.0, lang1="EN", lang2="EN"))
        result = word_similarity_eval(PlantedProvider(angles), items, BpeModel([]))
        assert result.pairs_missing == 1
        assert result.pairs_used == 4

    def test_empty_items(self):
        with pytest.raises(EmptyItemSet):
            word_similarity_eval(PlantedProvider({}), [], BpeModel([]))

    def test_sgns_on_designed_synonym_benchmark(self):
        # Words co-occur only within their cluster, so same-cluster pairs
        # (gold 1) should embed closer than cross-cluster pairs (gold 0).
        clusters = [
            ["korgan", "shuldo", "brimmel", "tasker"],
            ["veluna", "ossari", "dwinta", "galome"],
            ["pretik", "mavollo", "junder", "cresby"],
        ]
        rng = stream(0, "ws-designed")
        lines = []
        for _ in range(400):
            c = clusters[rng.below(3)]
            words = [c[rng.below(4)] for _ in range(8)]
            lines.append(" ".join(words) + ".<|endoftext|>")
        tokenizer = train_bpe(lines, vocab_size=520)
        ids = [t for line in lines for t in tokenizer.encode(line)]
        model = train_sgns(ids, dim=16, window=3, negatives=4, epochs=3, seed=1)
        items = []
        for c in clusters:
            items.append(WordPairItem(c[0], c[1], 1.0, "EN", "EN"))
            items.append(WordPairItem(c[2], c[3], 1.0, "EN", "EN"))
        for a, b in [(0, 1), (1, 2), (0, 2)]:
            items.append(WordPairItem(clusters[a][0], clusters[b][2], 0.0, "EN", "EN"))
            items.append(WordPairItem(clusters[a][1], clusters[b][3], 0.0, "EN", "EN"))
        result = word_similarity_eval(model, items, tokenizer)
        assert result.pairs_missing == 0
        assert result.best_rho > 0.5


class TestVocabularyFiltering:
    def test_universal_vocab_keeps_everything(self):
        items = make_items(10)
        vocab = corpus_vocabulary([f"good sentence {k} bad {k}<|endoftext|>" for k in range(10)])
        result = filter_minimal_pairs(items, [vocab])
        assert result.ratio == 1.0

    def test_planted_oov_words_drop_expected_items(self):
        keep = MinimalPairItem("k1", "x", "alpha beta gamma.", "alpha gamma beta.")
        drop_good = MinimalPairItem("d1", "x", "alpha zork.", "alpha beta.")
        drop_bad = MinimalPairItem("d2", "x", "alpha beta.", "alpha blivet.")
        vocab = frozenset({"alpha", "beta", "gamma"})
        result = filter_minimal_pairs([keep, drop_good, drop_bad], [vocab])
        assert result.items == (keep,)
        assert (result.kept, result.total) == (1, 3)

    def test_intersection_of_multiple_sets(self):
        item = MinimalPairItem("i", "x", "alpha beta.", "beta alpha also.")
        sets = [frozenset({"alpha", "beta", "also"}), frozenset({"alpha", "beta", "extra"})]
        assert filter_minimal_pairs([item], sets).kept == 0

    def test_ratio_monotone_in_vocab_growth(self):
        items = make_items(30)
        small = frozenset({"good", "sentence"})
        grown = small | frozenset({"bad"}) | frozenset(str(k) for k in range(30))
        r_small = filter_minimal_pairs(items, [small]).ratio
        r_grown = filter_minimal_pairs(items, [grown]).ratio
        assert r_grown >= r_small

    def test_word_pairs_check_each_language(self):
        items = [
            WordPairItem("alpha", "rojo", 1.0, "EN", "ES"),
            WordPairItem("alpha", "verde", 1.0, "EN", "ES"),
            WordPairItem("missing", "rojo", 1.0, "EN", "ES"),
        ]
        result = filter_word_pairs(
            items,
            {"EN": [frozenset({"alpha"})], "ES": [frozenset({"rojo"})]},
        )
        assert [i.w2 for i in result.items] == ["rojo"]
        assert result.total == 3


class TestAggregation:
    def test_single_run_has_zero_std(self):
        out = aggregate_runs([{"ppl": 3.5}])
        assert out["ppl"].mean == 3.5
        assert out["ppl"].std == 0.0

    def test_mirrored_pair_averaged_before_std(self):
        out = aggregate_runs(
            [{"m": 70.0}, {"m": 80.0}],
            mirrored=[{"m": 60.0}, {"m": 90.0}],
        )
        assert out["m"].mean == pytest.approx(75.0)
        assert out["m"].std == pytest.approx(math.sqrt(200.0))

    def test_equal_runs_zero_std(self):
        out = aggregate_runs([{"a": 2.0}, {"a": 2.0}, {"a": 2.0}])
        assert out["a"].std == 0.0

    def test_mismatched_keys(self):
        with pytest.raises(MismatchedMetricKeys):
            aggregate_runs([{"a": 1.0}, {"b": 1.0}])


class TestLoaders:
    def test_minimal_pairs_tsv(self, tmp_path):
        path = tmp_path / "pairs.tsv"
        path.write_text(
            "uid\tphenomenon\tsentence_good\tsentence_bad\n"
            "u1\tagreement\tThe dog runs.\tThe dog run.\n",
            encoding="utf-8",
        )
        items = load_minimal_pairs_tsv(path)
        assert items == [MinimalPairItem("u1", "agreement", "The dog runs.", "The dog run.")]

    def test_word_pairs_tsv(self, tmp_path):
        path = tmp_path / "ws.tsv"
        path.write_text("cat\tgato\t9.5\tEN\tES\n", encoding="utf-8")
        items = load_word_pairs_tsv(path)
        assert items[0].gold == 9.5
        assert items[0].lang_pair == "EN-ES"
