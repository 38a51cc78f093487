"""Embedding-space analysis: token language labels and 2D projections.

Labels every tokenizer token by where its occurrences come from (an
English-only vs a Spanish-only corpus sample), then projects an embedding
matrix to two principal components for external plotting. PCA stands in
for neighborhood-embedding methods so the output is deterministic; the
exported TSV carries everything needed to re-project externally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bpe import BpeModel, escape_bytes
from .corpus import Corpus


class EmbSpaceError(Exception):
    pass


class LengthMismatch(EmbSpaceError):
    pass


LABEL_ENGLISH = "English"
LABEL_SPANISH = "Spanish"
LABEL_SHARED = "Shared"
LABEL_EXCLUDED = "Excluded"


@dataclass(frozen=True)
class TokenLanguageLabel:
    token_id: int
    label: str
    en_fraction: float | None
    en_count: int
    es_count: int


def label_tokens(
    tokenizer: BpeModel,
    en_corpus: Corpus | Iterable[str],
    es_corpus: Corpus | Iterable[str],
    threshold: float = 0.75,
    sample_lines: int = 20_000,
) -> list[TokenLanguageLabel]:
    """Label every vocabulary token by its occurrence split.

    Counts run over the first ``sample_lines`` lines of each corpus in
    canonical order. A token is English when at least ``threshold`` of its
    occurrences are in the English sample (the >= rule applies at the
    boundary), Spanish symmetrically, Shared in between, and Excluded when
    it never occurs in either sample.
    """
    if not 0.5 < threshold <= 1.0:
        raise EmbSpaceError("threshold must be in (0.5, 1]")
    en_counts = _token_counts(tokenizer, en_corpus, sample_lines)
    es_counts = _token_counts(tokenizer, es_corpus, sample_lines)
    labels = []
    for token_id in range(tokenizer.vocab_size):
        en = en_counts[token_id]
        es = es_counts[token_id]
        if en + es == 0:
            labels.append(TokenLanguageLabel(token_id, LABEL_EXCLUDED, None, 0, 0))
            continue
        fraction = en / (en + es)
        if fraction >= threshold:
            label = LABEL_ENGLISH
        elif 1.0 - fraction >= threshold:
            label = LABEL_SPANISH
        else:
            label = LABEL_SHARED
        labels.append(TokenLanguageLabel(token_id, label, fraction, en, es))
    return labels


def _token_counts(tokenizer: BpeModel, corpus: Corpus | Iterable[str], sample_lines: int) -> np.ndarray:
    counts = np.zeros(tokenizer.vocab_size, dtype=np.int64)
    lines = corpus.lines() if isinstance(corpus, Corpus) else iter(corpus)
    for i, line in enumerate(lines):
        if i >= sample_lines:
            break
        for token_id in tokenizer.encode(line):
            counts[token_id] += 1
    return counts


@dataclass(frozen=True)
class Projection:
    coords: np.ndarray            # (n, 2), or (n, 1) when rank deficient
    explained_variance: tuple[float, ...]
    rank_deficient: bool

    def coords_2d(self) -> np.ndarray:
        if self.coords.shape[1] >= 2:
            return self.coords[:, :2]
        return np.hstack([self.coords, np.zeros((len(self.coords), 1))])


def project_2d(matrix: np.ndarray, max_tokens: int = 20_000) -> Projection:
    """Top-2 principal components of the (row-truncated) embedding matrix.

    Deterministic: mean-centering plus a symmetric eigendecomposition of
    the covariance, with each output column's sign fixed so its
    largest-magnitude coordinate is positive. Inputs with fewer than two
    nonzero components come back one-dimensional with ``rank_deficient``
    set.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise EmbSpaceError("matrix must be 2D")
    x = x[:max_tokens]
    if len(x) < 2:
        raise EmbSpaceError("need at least two rows after truncation")
    if not np.all(np.isfinite(x)):
        raise EmbSpaceError("matrix must be finite")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(x) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12
    n_nonzero = int(np.sum(eigvals > max(tol, 0.0)))
    n_components = 2 if n_nonzero >= 2 else 1
    coords = centered @ eigvecs[:, :n_components]
    for col in range(coords.shape[1]):
        anchor = int(np.argmax(np.abs(coords[:, col])))
        if coords[anchor, col] < 0:
            coords[:, col] = -coords[:, col]
    return Projection(
        coords=coords,
        explained_variance=tuple(float(v) for v in eigvals[:n_components]),
        rank_deficient=n_nonzero < 2,
    )


def export_plot_data(
    coords: np.ndarray,
    labels: Sequence[TokenLanguageLabel],
    tokens: Sequence[bytes],
) -> str:
    """Render aligned (token, x, y, label, fraction) rows as TSV.

    Rows are ordered by token id; token bytes are escaped so every record
    is a single printable line. Coordinates are written with enough digits
    to recover float32 values exactly.
    """
    if not (len(coords) == len(labels) == len(tokens)):
        raise LengthMismatch(
            f"coords ({len(coords)}), labels ({len(labels)}), tokens ({len(tokens)}) differ"
        )
    order = sorted(range(len(labels)), key=lambda i: labels[i].token_id)
    lines = ["token\tx\ty\tlabel\ten_fraction"]
    for i in order:
        x = float(np.float32(coords[i][0]))
        y = float(np.float32(coords[i][1])) if len(coords[i]) > 1 else 0.0
        fraction = labels[i].en_fraction
        lines.append(
            "\t".join(
                [
                    escape_bytes(tokens[i]),
                    format(x, ".9g"),
                    format(y, ".9g"),
                    labels[i].label,
                    "NA" if fraction is None else format(fraction, ".9g"),
                ]
            )
        )
    return "\n".join(lines) + "\n"
