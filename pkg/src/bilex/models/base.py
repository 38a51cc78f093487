"""Model contracts the evaluation harness scores against.

Any model usable by the harness implements one (or both) of the protocols
below: ``ScoringModel`` yields natural-log per-token probabilities for a
token-id sequence, ``EmbeddingProvider`` yields per-layer token vectors.
"""

from __future__ import annotations

from typing import Protocol, Sequence, runtime_checkable

import numpy as np

# context_window value for models whose effective context is not limited by
# the scoring interface (count-based and replay models).
EFFECTIVELY_UNBOUNDED = 1 << 30


class ModelError(Exception):
    pass


class MissingTokenError(ModelError):
    """Embedding lookup for a token the provider does not cover."""


@runtime_checkable
class ScoringModel(Protocol):
    context_window: int

    def log_probs(self, ids: Sequence[int]) -> list[float]:
        """Natural-log probability of each token given its in-window
        predecessors; one value per position 1..n-1."""


@runtime_checkable
class EmbeddingProvider(Protocol):
    n_layers: int
    dim: int

    def vector(self, token_id: int, layer: int = 0) -> np.ndarray:
        """Fixed-dimension vector for a token at the given layer."""
