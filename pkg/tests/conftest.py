import json

import pytest

from bilex.conditions import sentence_segment
from bilex.corpus import Corpus, Dialogue, Language, Turn, write_corpus
from bilex.fixtures import default_lexicons, generate_fixture
from bilex.rng import stream


def make_word_cs(en: Corpus, es: Corpus, seed: int = 0) -> Corpus:
    """Crude word-level code-switched corpus for ingest tests.

    Zips words from the two variants per turn; stands in for externally
    generated word-level data, which the package only ever ingests.
    """
    mixed = []
    for d_en, d_es in zip(en, es):
        rng = stream(seed, d_en.id, "wordcs")
        turns = []
        for t_en, t_es in zip(d_en.turns, d_es.turns):
            a, b = t_en.text.split(), t_es.text.split()
            words = [(a[i] if rng.random() < 0.5 else b[i]) if i < min(len(a), len(b)) else w
                     for i, w in enumerate(a if len(a) >= len(b) else b)]
            turns.append(Turn(t_en.speaker, " ".join(words)))
        mixed.append(Dialogue(d_en.id, d_en.adult_speaker, d_en.context, d_en.child_age,
                              tuple(turns), Language.CS_WORD))
    return Corpus(mixed, Language.CS_WORD)


@pytest.fixture(scope="session")
def parallel_2k():
    """2000 aligned dialogues; strata of 500, so 5% splits are exact."""
    return generate_fixture(42, 2000)


@pytest.fixture(scope="session")
def parallel_small():
    return generate_fixture(7, 200)


def write_mini_benchmarks(directory, n_pairs: int = 24):
    """Fixture-grammar minimal pairs (scrambled word order) and word pairs."""
    lex = default_lexicons()
    en, es = generate_fixture(99, 40)
    mp_path = directory / "minimal_pairs.tsv"
    rows = []
    k = 0
    for d in en:
        for turn in d.turns:
            for sent in sentence_segment(turn.text):
                words = sent.rstrip(".!?").split()
                if len(words) < 4:
                    continue
                bad = " ".join(reversed(words)) + "."
                good = " ".join(words) + "."
                rows.append(f"mp{k}\tword_order\t{good}\t{bad}")
                k += 1
                if k >= n_pairs:
                    break
            if k >= n_pairs:
                break
        if k >= n_pairs:
            break
    mp_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    ws_path = directory / "word_pairs.tsv"
    rng = stream(3, "ws-bench")
    rows = []
    en_nouns = lex[Language.EN].nouns
    es_nouns = lex[Language.ES].nouns
    for i in range(10):
        a, b = en_nouns[2 * i], en_nouns[2 * i + 1]
        rows.append(f"{a}\t{b}\t{rng.below(100) / 10}\tEN\tEN")
    for i in range(10):
        a, b = es_nouns[2 * i], es_nouns[2 * i + 1]
        rows.append(f"{a}\t{b}\t{rng.below(100) / 10}\tES\tES")
    for i in range(10):
        rows.append(f"{en_nouns[i]}\t{es_nouns[i]}\t{rng.below(100) / 10}\tEN\tES")
    ws_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return mp_path, ws_path


def write_experiment_inputs(directory, n_dialogues: int = 400, seed: int = 42):
    """Corpus files, mini benchmarks, and a config dict for pipeline tests."""
    directory.mkdir(parents=True, exist_ok=True)
    en, es = generate_fixture(seed, n_dialogues)
    write_corpus(en, directory / "en.txt")
    write_corpus(es, directory / "es.txt")
    write_corpus(make_word_cs(en, es), directory / "cs_word.txt")
    mp_path, ws_path = write_mini_benchmarks(directory)
    config = {
        "corpora": {
            "en": str(directory / "en.txt"),
            "es": str(directory / "es.txt"),
            "cs_word": str(directory / "cs_word.txt"),
        },
        "conditions": [
            {"name": "topline_en", "kind": "topline", "language": "EN", "seed": 42},
            {"name": "mix50", "kind": "multilingual_random", "p_l2": 0.5, "seed": 42},
        ],
        "tokenizer": {"vocab_size": 420},
        "model": {
            "kind": "ngram",
            "ngram_order": 2,
            "sgns_dim": 8,
            "sgns_window": 2,
            "sgns_epochs": 1,
            "sgns_max_tokens": 4000,
        },
        "eval": {
            "suites": ["perplexity", "minimal_pairs", "word_similarity"],
            "window": 256,
            "stride": 128,
            "minimal_pairs_path": str(mp_path),
            "word_pairs_path": str(ws_path),
        },
        "seeds": [42, 0],
        "output_dir": str(directory / "run"),
    }
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(config, indent=1), encoding="utf-8")
    return config_path, config
