from collections import Counter

import pytest
from scipy.stats import binom

from bilex.conditions import (
    BudgetTooLarge,
    ConditionKind,
    ExposureSpec,
    IdMismatch,
    IncompleteAssignment,
    InvalidSpec,
    SentenceCountMismatch,
    build_condition,
    compute_val_ids,
    mix_cs_sentence,
    sample_reduced,
    select_by_probability,
    select_by_speaker,
    sentence_segment,
    split_train_val,
)
from bilex.corpus import Context, Corpus, Dialogue, Language, Speaker, Turn

from conftest import make_word_cs


def binomial_interval(n: int, p: float, alpha: float = 1e-4):
    """Central 1-alpha interval, computed from the exact binomial CDF."""
    return int(binom.ppf(alpha / 2, n, p)), int(binom.ppf(1 - alpha / 2, n, p))


def assignment(mom: Language, dad: Language):
    return ((Speaker.DAD, dad), (Speaker.MOM, mom))


class TestSentenceSegment:
    def test_basic_split(self):
        assert sentence_segment("Hi. How are you?") == ["Hi.", "How are you?"]

    def test_spanish_opening_marks_attach_forward(self):
        assert sentence_segment("¿Trato hecho?") == ["¿Trato hecho?"]
        assert sentence_segment("Sí. ¡Qué bien! ¿Trato hecho?") == ["Sí.", "¡Qué bien!", "¿Trato hecho?"]

    def test_no_terminator_is_one_sentence(self):
        assert sentence_segment("Wait") == ["Wait"]

    def test_join_preserves_word_sequence(self):
        text = "One two. Three four! ¿Five six?"
        assert " ".join(sentence_segment(text)) == text


class TestSelectByProbability:
    def test_boundaries_are_byte_identical(self, parallel_small):
        en, es = parallel_small
        assert list(select_by_probability(en, es, 0.0, 1).lines()) == list(en.lines())
        assert list(select_by_probability(en, es, 1.0, 1).lines()) == list(es.lines())

    def test_share_within_central_binomial_interval(self, parallel_2k):
        en, es = parallel_2k
        mixed = select_by_probability(en, es, 0.5, 42)
        n_es = sum(d.language_variant is Language.ES for d in mixed)
        lo, hi = binomial_interval(len(mixed), 0.5)
        assert lo <= n_es <= hi

    def test_choice_is_per_id(self, parallel_small):
        en, es = parallel_small
        full = select_by_probability(en, es, 0.5, 5)
        half_ids = list(en.ids())[:50]
        part = select_by_probability(
            Corpus([en[i] for i in half_ids], Language.EN),
            Corpus([es[i] for i in half_ids], Language.ES),
            0.5,
            5,
        )
        for d in part:
            assert d.language_variant is full[d.id].language_variant

    def test_id_mismatch(self, parallel_small):
        en, es = parallel_small
        with pytest.raises(IdMismatch):
            select_by_probability(en, Corpus(list(es)[:-1], Language.ES), 0.5, 1)


class TestSelectBySpeaker:
    def test_language_follows_adult_speaker(self, parallel_small):
        en, es = parallel_small
        out = select_by_speaker(en, es, dict(assignment(Language.EN, Language.ES)))
        for d in out:
            expected = Language.EN if d.adult_speaker is Speaker.MOM else Language.ES
            assert d.language_variant is expected

    def test_proportions_match_speaker_proportions(self, parallel_small):
        en, es = parallel_small
        out = select_by_speaker(en, es, dict(assignment(Language.EN, Language.ES)))
        n_mom = sum(d.adult_speaker is Speaker.MOM for d in en)
        assert sum(d.language_variant is Language.EN for d in out) == n_mom

    def test_mirror_assignment_swaps_selection(self, parallel_small):
        en, es = parallel_small
        a = select_by_speaker(en, es, dict(assignment(Language.EN, Language.ES)))
        b = select_by_speaker(en, es, dict(assignment(Language.ES, Language.EN)))
        for d_a, d_b in zip(a, b):
            assert d_a.language_variant is not d_b.language_variant

    def test_incomplete_assignment(self, parallel_small):
        en, es = parallel_small
        with pytest.raises(IncompleteAssignment):
            select_by_speaker(en, es, {Speaker.MOM: Language.EN})
        with pytest.raises(IncompleteAssignment):
            select_by_speaker(en, es, {Speaker.MOM: Language.EN, Speaker.DAD: Language.EN})


def sentence_languages(mixed: Dialogue, en: Dialogue, es: Dialogue) -> list[Language]:
    """Label each output sentence by membership in the source variants."""
    langs = []
    for turn, t_en, t_es in zip(mixed.turns, en.turns, es.turns):
        en_sents = set(sentence_segment(t_en.text))
        es_sents = set(sentence_segment(t_es.text))
        for sent in sentence_segment(turn.text):
            if sent in en_sents and sent not in es_sents:
                langs.append(Language.EN)
            elif sent in es_sents and sent not in en_sents:
                langs.append(Language.ES)
            else:
                raise AssertionError(f"sentence not attributable: {sent!r}")
    return langs


def max_run(langs) -> int:
    best = run = 0
    prev = None
    for lang in langs:
        run = run + 1 if lang == prev else 1
        prev = lang
        best = max(best, run)
    return best


class TestMixCsSentence:
    def test_identical_variants_passthrough(self):
        turns = (Turn(Speaker.MOM, "Same text here."), Turn(Speaker.CHILD, "Same reply."))
        en = Dialogue("d1", Speaker.MOM, Context.HOME, 5, turns, Language.EN)
        es = Dialogue("d1", Speaker.MOM, Context.HOME, 5, turns, Language.ES)
        mixed = mix_cs_sentence(en, es, seed=3)
        assert [t.text for t in mixed.turns] == [t.text for t in en.turns]
        assert mixed.language_variant is Language.CS_SENT

    def test_run_length_never_exceeds_three(self, parallel_small):
        en, es = parallel_small
        for seed in (0, 1, 42):
            for d_en, d_es in zip(en, es):
                mixed = mix_cs_sentence(d_en, d_es, seed)
                assert max_run(sentence_languages(mixed, d_en, d_es)) <= 3

    def test_es_share_near_half(self, parallel_2k):
        en, es = parallel_2k
        langs = []
        for d_en, d_es in zip(list(en)[:400], list(es)[:400]):
            mixed = mix_cs_sentence(d_en, d_es, 42)
            langs.extend(sentence_languages(mixed, d_en, d_es))
        share = sum(lang is Language.ES for lang in langs) / len(langs)
        assert 0.45 <= share <= 0.55

    def test_positionally_exact_choice(self, parallel_small):
        # Stronger than membership: the k-th output sentence must be the
        # k-th sentence of exactly one of the two variants.
        en, es = parallel_small
        for d_en, d_es in zip(list(en)[:80], list(es)[:80]):
            mixed = mix_cs_sentence(d_en, d_es, 4)
            for t_m, t_en, t_es in zip(mixed.turns, d_en.turns, d_es.turns):
                ms = sentence_segment(t_m.text)
                en_s = sentence_segment(t_en.text)
                es_s = sentence_segment(t_es.text)
                assert len(ms) == len(en_s) == len(es_s)
                for k, sent in enumerate(ms):
                    assert sent in (en_s[k], es_s[k])

    def test_deterministic_in_seed_and_id(self, parallel_small):
        en, es = parallel_small
        d_en, d_es = en.dialogues[0], es.dialogues[0]
        assert mix_cs_sentence(d_en, d_es, 9) == mix_cs_sentence(d_en, d_es, 9)
        assert mix_cs_sentence(d_en, d_es, 9) != mix_cs_sentence(d_en, d_es, 10)

    def test_sentence_count_mismatch(self):
        en = Dialogue("d1", Speaker.MOM, Context.HOME, 5,
                      (Turn(Speaker.MOM, "One. Two."),), Language.EN)
        es = Dialogue("d1", Speaker.MOM, Context.HOME, 5,
                      (Turn(Speaker.MOM, "Uno."),), Language.ES)
        with pytest.raises(SentenceCountMismatch):
            mix_cs_sentence(en, es, 1)
        tolerant = mix_cs_sentence(en, es, 1, strict=False)
        sents = sentence_segment(tolerant.turns[0].text)
        assert len(sents) == 2 and sents[1] == "Two."

    def test_id_mismatch(self, parallel_small):
        en, es = parallel_small
        with pytest.raises(IdMismatch):
            mix_cs_sentence(en.dialogues[0], es.dialogues[1], 1)


class TestSampleReduced:
    def test_full_budget_selects_everything(self, parallel_small):
        en, es = parallel_small
        ids = sample_reduced({Language.EN: en, Language.ES: es}, en.word_budget, 1)
        assert ids == frozenset(en.ids())

    def test_budget_reached_minimally_and_strata_preserved(self, parallel_2k):
        en, es = parallel_2k
        budget = round(en.word_budget * 0.2)
        ids = sample_reduced({Language.EN: en, Language.ES: es}, budget, 11)
        chosen = en.subset(ids)
        # Oracle recount: budget reached, and removing the last-drawn
        # dialogue would fall below it.
        total = sum(d.word_count() for d in chosen)
        assert total >= budget
        assert total - max(d.word_count() for d in chosen) < budget
        counts = Counter((d.adult_speaker, d.context) for d in chosen)
        share = len(chosen) / len(en)
        for stratum in counts:
            full = sum(1 for d in en if (d.adult_speaker, d.context) == stratum)
            assert abs(counts[stratum] - share * full) <= 1

    def test_same_seed_same_ids(self, parallel_small):
        en, es = parallel_small
        corpora = {Language.EN: en, Language.ES: es}
        assert sample_reduced(corpora, 2000, 5) == sample_reduced(corpora, 2000, 5)

    def test_budget_too_large(self, parallel_small):
        en, es = parallel_small
        with pytest.raises(BudgetTooLarge):
            sample_reduced({Language.EN: en, Language.ES: es}, en.word_budget + 1, 1)


class TestSplits:
    def test_exact_five_percent_on_divisible_fixture(self, parallel_2k):
        en, _ = parallel_2k
        val_ids = compute_val_ids(en, 42)
        assert len(val_ids) == 100

    def test_floor_survives_float_noise_in_ratio(self, parallel_small):
        en, _ = parallel_small
        # 1 - 0.9 is slightly below 0.1 in floats; floor(0.1 * 200) is 20.
        assert len(compute_val_ids(en, 1, ratio=0.9)) == 20

    def test_language_variants_share_val_ids(self, parallel_2k):
        en, es = parallel_2k
        ds_en = split_train_val(en, 42, universe=en)
        ds_es = split_train_val(es, 42, universe=es)
        assert set(ds_en.val.ids()) == set(ds_es.val.ids())

    def test_subset_inherits_intersection(self, parallel_2k):
        en, _ = parallel_2k
        mom_ids = {d.id for d in en if d.adult_speaker is Speaker.MOM}
        ds = split_train_val(en.subset(mom_ids), 42, universe=en)
        assert set(ds.val.ids()) == compute_val_ids(en, 42) & mom_ids

    def test_train_val_disjoint_and_cover(self, parallel_small):
        en, _ = parallel_small
        ds = split_train_val(en, 3)
        assert set(ds.train.ids()) | set(ds.val.ids()) == set(en.ids())
        assert not set(ds.train.ids()) & set(ds.val.ids())


class TestBuildCondition:
    def corpora(self, fixture):
        en, es = fixture
        return {Language.EN: en, Language.ES: es, Language.CS_WORD: make_word_cs(en, es)}

    def test_topline_is_language_corpus_split(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        ds = build_condition(ExposureSpec(ConditionKind.TOPLINE, language=Language.EN, seed=42), corpora)
        assert len(ds.train) + len(ds.val) == len(corpora[Language.EN])
        assert all(d.language_variant is Language.EN for d in ds.train)
        assert len(ds.val) == 100

    def test_multilingual_random_counts_within_interval(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        ds = build_condition(ExposureSpec(ConditionKind.MULTILINGUAL_RANDOM, p_l2=0.5, seed=42), corpora)
        n_es = sum(1 for lang in ds.manifest["languages"].values() if lang == "ES")
        lo, hi = binomial_interval(len(corpora[Language.EN]), 0.5)
        assert lo <= n_es <= hi

    def test_by_speaker_baselines_partition_corpus(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        spec_en = ExposureSpec(
            ConditionKind.BASELINE_BY_SPEAKER, language=Language.EN,
            speaker_assignment=assignment(Language.EN, Language.ES), seed=42,
        )
        spec_es = ExposureSpec(
            ConditionKind.BASELINE_BY_SPEAKER, language=Language.ES,
            speaker_assignment=assignment(Language.EN, Language.ES), seed=42,
        )
        ds_en = build_condition(spec_en, corpora)
        ds_es = build_condition(spec_es, corpora)
        ids_en = set(ds_en.train.ids()) | set(ds_en.val.ids())
        ids_es = set(ds_es.train.ids()) | set(ds_es.val.ids())
        assert not ids_en & ids_es
        assert ids_en | ids_es == set(corpora[Language.EN].ids())

    def test_baseline_random_half_with_exact_val_share(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        ds = build_condition(ExposureSpec(ConditionKind.BASELINE_RANDOM, language=Language.EN, seed=42), corpora)
        assert len(ds.train) + len(ds.val) == 1000
        assert len(ds.val) == 50

    def test_reuse_mix_selection_matches_mixture(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        en, es = corpora[Language.EN], corpora[Language.ES]
        ds = build_condition(
            ExposureSpec(ConditionKind.BASELINE_RANDOM, language=Language.EN, seed=42,
                         reuse_mix_selection=True),
            corpora,
        )
        mixed = select_by_probability(en, es, 0.5, 42)
        en_ids = {d.id for d in mixed if d.language_variant is Language.EN}
        assert set(ds.train.ids()) | set(ds.val.ids()) == en_ids

    def test_cs_word_ingest(self, parallel_small):
        corpora = self.corpora(parallel_small)
        ds = build_condition(ExposureSpec(ConditionKind.CS_WORD_INGEST, seed=1), corpora)
        assert all(d.language_variant is Language.CS_WORD for d in ds.train)
        with pytest.raises(InvalidSpec):
            build_condition(
                ExposureSpec(ConditionKind.CS_WORD_INGEST, seed=1),
                {Language.EN: corpora[Language.EN], Language.ES: corpora[Language.ES]},
            )

    def test_word_budget_applies_one_id_set(self, parallel_2k):
        corpora = self.corpora(parallel_2k)
        budget = round(corpora[Language.EN].word_budget * 0.3)
        spec_en = ExposureSpec(ConditionKind.TOPLINE, language=Language.EN, word_budget=budget, seed=42)
        spec_es = ExposureSpec(ConditionKind.TOPLINE, language=Language.ES, word_budget=budget, seed=42)
        ds_en = build_condition(spec_en, corpora)
        ds_es = build_condition(spec_es, corpora)
        assert set(ds_en.train.ids()) == set(ds_es.train.ids())
        assert set(ds_en.val.ids()) == set(ds_es.val.ids())

    def test_rebuild_is_byte_identical(self, parallel_small):
        corpora = self.corpora(parallel_small)
        spec = ExposureSpec(ConditionKind.CS_SENTENCE, seed=42)
        a = build_condition(spec, corpora)
        b = build_condition(spec, corpora)
        assert a.manifest == b.manifest
        assert list(a.train.lines()) == list(b.train.lines())

    def test_manifest_hash_recomputable_from_written_files(self, parallel_small, tmp_path):
        import hashlib

        from bilex.corpus import write_corpus

        corpora = self.corpora(parallel_small)
        ds = build_condition(ExposureSpec(ConditionKind.TOPLINE, language=Language.EN, seed=1), corpora)
        write_corpus(ds.train, tmp_path / "train.txt")
        on_disk = hashlib.sha256((tmp_path / "train.txt").read_bytes()).hexdigest()
        assert ds.manifest["sha256"]["train"] == on_disk

    def test_invalid_specs(self):
        with pytest.raises(InvalidSpec):
            ExposureSpec(ConditionKind.MULTILINGUAL_RANDOM, p_l2=1.5)
        with pytest.raises(IncompleteAssignment):
            ExposureSpec(ConditionKind.MULTILINGUAL_BY_SPEAKER)
        with pytest.raises(InvalidSpec):
            ExposureSpec(ConditionKind.TOPLINE, word_budget=0)

    def test_spec_dict_round_trip(self):
        spec = ExposureSpec(
            ConditionKind.MULTILINGUAL_BY_SPEAKER,
            speaker_assignment=assignment(Language.ES, Language.EN),
            seed=7,
        )
        assert ExposureSpec.from_dict(spec.to_dict()) == spec
