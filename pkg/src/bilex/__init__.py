"""Controlled bilingual-exposure corpora, tokenizers, and LM evaluation."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    Context,
    Corpus,
    CorpusStats,
    Dialogue,
    Language,
    Speaker,
    Turn,
    normalize_dialogue,
    parse_dialogue,
    parse_training_line,
    read_corpus,
    serialize_training_line,
    word_stats,
    write_corpus,
)
from .conditions import (  # noqa: F401
    ConditionDataset,
    ConditionKind,
    ExposureSpec,
    build_condition,
    mix_cs_sentence,
    sample_reduced,
    select_by_probability,
    select_by_speaker,
    sentence_segment,
    split_train_val,
)
from .fixtures import generate_fixture  # noqa: F401
