"""Skip-gram with negative sampling, trained with plain numpy.

Reference embedding provider for the word-similarity harness. Single
update stream, fixed symmetric window, negatives drawn from the standard
unigram^0.75 table; deterministic for a given seed. Input vectors double
as the single embedding "layer".

Per-pair loss, with v the center's input vector and u the context/negative
output vectors:

    L = -log sigmoid(u_ctx . v) - sum_neg log sigmoid(-u_neg . v)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .base import MissingTokenError

_NEG_TABLE_SIZE = 1 << 16
_NEG_EXPONENT = 0.75


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class SkipGramModel:
    dim: int
    ids: np.ndarray                 # sorted vocab ids, row order
    w_in: np.ndarray                # (V, dim) float64, the embedding layer
    w_out: np.ndarray               # (V, dim) float64
    neg_table: np.ndarray           # row indices, unigram^0.75 proportions
    epoch_losses: list[float] = field(default_factory=list)
    n_layers: int = 1

    def __post_init__(self) -> None:
        self._row_of = {int(t): r for r, t in enumerate(self.ids)}

    @property
    def vocab_size(self) -> int:
        return len(self.ids)

    def row(self, token_id: int) -> int:
        try:
            return self._row_of[int(token_id)]
        except KeyError:
            raise MissingTokenError(f"token id {token_id} not in embedding vocabulary") from None

    def vector(self, token_id: int, layer: int = 0) -> np.ndarray:
        if layer != 0:
            raise MissingTokenError(f"layer {layer} out of range (n_layers=1)")
        return self.w_in[self.row(token_id)]


def _build_neg_table(counts: np.ndarray) -> np.ndarray:
    weights = counts.astype(np.float64) ** _NEG_EXPONENT
    cdf = np.cumsum(weights / weights.sum())
    grid = (np.arange(_NEG_TABLE_SIZE) + 0.5) / _NEG_TABLE_SIZE
    return np.searchsorted(cdf, grid).astype(np.int64)


def pair_loss(v: np.ndarray, u_ctx: np.ndarray, u_negs: np.ndarray) -> float:
    pos = float(np.log(_sigmoid(u_ctx @ v)))
    neg = float(np.sum(np.log(_sigmoid(-(u_negs @ v)))))
    return -(pos + neg)


def pair_gradients(
    v: np.ndarray, u_ctx: np.ndarray, u_negs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of ``pair_loss`` w.r.t. (v, u_ctx, each u_neg)."""
    g_pos = _sigmoid(u_ctx @ v) - 1.0
    g_negs = _sigmoid(u_negs @ v)
    grad_v = g_pos * u_ctx + g_negs @ u_negs
    grad_ctx = g_pos * v
    grad_negs = g_negs[:, None] * v[None, :]
    return grad_v, grad_ctx, grad_negs


def train_sgns(
    stream: Iterable[int],
    dim: int = 32,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 3,
    lr: float = 0.05,
    seed: int = 42,
    max_tokens: int | None = None,
) -> SkipGramModel:
    tokens = list(stream)
    if max_tokens is not None:
        tokens = tokens[:max_tokens]
    if len(tokens) <= window:
        raise ValueError("token stream must be longer than the window")
    ids, counts = np.unique(np.asarray(tokens, dtype=np.int64), return_counts=True)
    row_of = {int(t): r for r, t in enumerate(ids)}
    rows = np.asarray([row_of[t] for t in tokens], dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(seed))
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(ids), dim))
    w_out = np.zeros((len(ids), dim))
    neg_table = _build_neg_table(counts)

    model = SkipGramModel(dim, ids, w_in, w_out, neg_table)
    n = len(rows)
    for _ in range(epochs):
        total_loss = 0.0
        n_pairs = 0
        for i in range(n):
            center = rows[i]
            v = w_in[center]
            lo, hi = max(0, i - window), min(n, i + window + 1)
            for j in range(lo, hi):
                if j == i:
                    continue
                ctx = rows[j]
                negs = neg_table[rng.integers(0, _NEG_TABLE_SIZE, size=negatives)]
                u_ctx = w_out[ctx]
                u_negs = w_out[negs]
                total_loss += pair_loss(v, u_ctx, u_negs)
                n_pairs += 1
                grad_v, grad_ctx, grad_negs = pair_gradients(v, u_ctx, u_negs)
                w_out[ctx] -= lr * grad_ctx
                np.subtract.at(w_out, negs, lr * grad_negs)
                v = v - lr * grad_v
            w_in[center] = v
        model.epoch_losses.append(total_loss / max(n_pairs, 1))
    return model


def sgns_gradient_check(
    model: SkipGramModel,
    sample: tuple[int, int, Sequence[int]] | None = None,
    eps: float = 1e-4,
    n_coords: int = 100,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``sample`` is (center id, context id, negative ids); by default one is
    drawn from the model vocabulary.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    if sample is None:
        picks = rng.integers(0, model.vocab_size, size=7)
        sample = (int(model.ids[picks[0]]), int(model.ids[picks[1]]),
                  [int(model.ids[p]) for p in picks[2:]])
    center, context, negatives = sample
    v = model.w_in[model.row(center)].astype(np.float64).copy()
    u_ctx = model.w_out[model.row(context)].astype(np.float64).copy()
    u_negs = np.stack([model.w_out[model.row(t)] for t in negatives]).astype(np.float64)

    grad_v, grad_ctx, grad_negs = pair_gradients(v, u_ctx, u_negs)
    params = [v, u_ctx, u_negs]
    grads = [grad_v, grad_ctx, grad_negs]

    worst = 0.0
    for _ in range(n_coords):
        which = int(rng.integers(0, len(params)))
        flat_idx = int(rng.integers(0, params[which].size))
        idx = np.unravel_index(flat_idx, params[which].shape)
        original = params[which][idx]
        params[which][idx] = original + eps
        up = pair_loss(v, u_ctx, u_negs)
        params[which][idx] = original - eps
        down = pair_loss(v, u_ctx, u_negs)
        params[which][idx] = original
        numeric = (up - down) / (2 * eps)
        analytic = grads[which][idx]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
