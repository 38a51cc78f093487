from .base import (  # noqa: F401
    EFFECTIVELY_UNBOUNDED,
    EmbeddingProvider,
    MissingTokenError,
    ModelError,
    ScoringModel,
)
from .external import (  # noqa: F401
    BadMagic,
    ExternalEmbeddings,
    ExternalScores,
    HashMiss,
    VersionMismatch,
    load_external_model,
    sequence_hash,
    write_embedding_file,
    write_score_file,
)
from .ngram import NGramLm, train_ngram  # noqa: F401
from .sgns import SkipGramModel, sgns_gradient_check, train_sgns  # noqa: F401
