"""Count-based n-gram language model with interpolated absolute discounting.

Reference scoring model for desk-scale runs: deterministic, exactly
normalized, and cheap to train, so condition comparisons are reproducible
to the bit. The conditional probability of token w after history h is

    p(w | h) = max(c(h,w) - d, 0) / c(h)  +  d * N1+(h) / c(h) * p(w | h')

where h' drops the oldest history token, N1+(h) counts distinct
continuations of h, and the recursion bottoms out in a uniform distribution
over the training vocabulary plus UNK. Unseen histories fall through to the
shorter history. Tokens outside the training vocabulary score as UNK.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

from .base import EFFECTIVELY_UNBOUNDED

UNK = -1


class NGramLm:
    def __init__(
        self,
        order: int,
        discount: float,
        vocab: frozenset[int],
        totals: list[dict[tuple[int, ...], int]],
        continuations: list[dict[tuple[int, ...], dict[int, int]]],
        n1plus: list[dict[tuple[int, ...], int]],
    ):
        if not 0.0 < discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        self.order = order
        self.discount = discount
        self.vocab = vocab
        self._totals = totals
        self._continuations = continuations
        self._n1plus = n1plus
        self._uniform = 1.0 / (len(vocab) + 1)
        self.context_window = EFFECTIVELY_UNBOUNDED

    @classmethod
    def uniform(cls, vocab_size: int, order: int = 1, discount: float = 0.75) -> "NGramLm":
        """Untrained model: every token scores exactly 1/(V+1)."""
        vocab = frozenset(range(vocab_size))
        return cls(order, discount, vocab, *([{} for _ in range(order)] for _ in range(3)))

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def prob(self, token: int, context: Sequence[int]) -> float:
        w = token if token in self.vocab else UNK
        ctx = tuple(context[-(self.order - 1):]) if self.order > 1 else ()
        return self._p(w, ctx)

    def _p(self, w: int, ctx: tuple[int, ...]) -> float:
        k = len(ctx)
        c_ctx = self._totals[k].get(ctx, 0)
        if c_ctx == 0:
            return self._p(w, ctx[1:]) if k > 0 else self._uniform
        lower = self._p(w, ctx[1:]) if k > 0 else self._uniform
        c_w = self._continuations[k][ctx].get(w, 0)
        lam = self.discount * self._n1plus[k][ctx] / c_ctx
        return max(c_w - self.discount, 0.0) / c_ctx + lam * lower

    def log_probs(self, ids: Sequence[int]) -> list[float]:
        out = []
        span = self.order - 1
        for i in range(1, len(ids)):
            ctx = tuple(ids[max(0, i - span):i])
            out.append(math.log(self._p(ids[i] if ids[i] in self.vocab else UNK, ctx)))
        return out

    def oov_count(self, ids: Sequence[int]) -> int:
        return sum(1 for t in ids if t not in self.vocab)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "discount": self.discount,
            "vocab": sorted(self.vocab),
            "continuations": [
                {",".join(map(str, ctx)): conts for ctx, conts in level.items()}
                for level in self._continuations
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NGramLm":
        order = data["order"]
        continuations: list[dict[tuple[int, ...], dict[int, int]]] = []
        for level in data["continuations"]:
            parsed: dict[tuple[int, ...], dict[int, int]] = {}
            for key, conts in level.items():
                ctx = tuple(int(x) for x in key.split(",")) if key else ()
                parsed[ctx] = {int(w): c for w, c in conts.items()}
            continuations.append(parsed)
        totals = [{ctx: sum(c.values()) for ctx, c in level.items()} for level in continuations]
        n1plus = [{ctx: len(c) for ctx, c in level.items()} for level in continuations]
        return cls(order, data["discount"], frozenset(data["vocab"]), totals, continuations, n1plus)


def train_ngram(stream: Iterable[int], order: int = 3, discount: float = 0.75) -> NGramLm:
    """Count n-grams of orders 1..order over a token-id stream."""
    ids = list(stream)
    if not ids:
        raise ValueError("token stream is empty")
    continuations: list[dict[tuple[int, ...], dict[int, int]]] = [dict() for _ in range(order)]
    for i, w in enumerate(ids):
        for k in range(min(order, i + 1)):
            ctx = tuple(ids[i - k:i])
            conts = continuations[k].setdefault(ctx, {})
            conts[w] = conts.get(w, 0) + 1
    totals = [{ctx: sum(c.values()) for ctx, c in level.items()} for level in continuations]
    n1plus = [{ctx: len(c) for ctx, c in level.items()} for level in continuations]
    return NGramLm(order, discount, frozenset(ids), totals, continuations, n1plus)
