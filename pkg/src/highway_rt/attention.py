"""Multi-head attention and highway attention.

Highway attention extends each query row's softmax with one extra logit: the
similarity between the row's query projection and its own (``b_self``-biased)
key projection.  The matching weight routes the row's own value projection
through, so every output row is a convex mix of the context values and the
row itself before the output projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class MultiHeadParams:
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor

    @property
    def n_heads(self) -> int:
        return len(self.wq)

    @property
    def d_model(self) -> int:
        return self.wq[0].shape[0]

    @property
    def d_head(self) -> int:
        return self.wq[0].shape[1]

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for h in range(self.n_heads):
            out[f"{prefix}.h{h}.Wq"] = self.wq[h]
            out[f"{prefix}.h{h}.Wk"] = self.wk[h]
            out[f"{prefix}.h{h}.Wv"] = self.wv[h]
        out[f"{prefix}.Wo"] = self.wo
        return out

    def validate(self) -> None:
        shapes = {w.shape for w in self.wq + self.wk + self.wv}
        if len(shapes) != 1 or not (len(self.wq) == len(self.wk) == len(self.wv) >= 1):
            raise DimensionError(f"inconsistent head projections: {sorted(shapes)}")
        d_f, d_p = shapes.pop()
        if self.wo.shape != (self.n_heads * d_p, d_f):
            raise DimensionError(
                f"Wo has shape {self.wo.shape}, expected {(self.n_heads * d_p, d_f)}"
            )


@dataclass
class HighwayParams:
    heads: MultiHeadParams
    b_co: Tensor
    b_self: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.heads.named(prefix)
        out[f"{prefix}.b_co"] = self.b_co
        out[f"{prefix}.b_self"] = self.b_self
        return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_multi_head(rng: np.random.Generator, d_f: int, n_heads: int, d_p: int) -> MultiHeadParams:
    def proj():
        return [T.tensor(xavier_uniform(rng, d_f, d_p), requires_grad=True) for _ in range(n_heads)]

    wq, wk, wv = proj(), proj(), proj()
    wo = T.tensor(xavier_uniform(rng, n_heads * d_p, d_f), requires_grad=True)
    return MultiHeadParams(wq, wk, wv, wo)


def init_highway(rng: np.random.Generator, d_f: int, n_heads: int, d_p: int) -> HighwayParams:
    return HighwayParams(
        heads=init_multi_head(rng, d_f, n_heads, d_p),
        b_co=T.tensor(np.zeros(d_f), requires_grad=True),
        b_self=T.tensor(np.zeros(d_f), requires_grad=True),
    )


def _check_inputs(q: Tensor, k: Tensor, v: Tensor, p: MultiHeadParams) -> None:
    for name, x in (("query", q), ("key", k), ("value", v)):
        if x.ndim != 2:
            raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
        if x.shape[1] != p.d_model:
            raise DimensionError(f"{name} width {x.shape[1]} != model width {p.d_model}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key and value lengths differ: {k.shape[0]} vs {v.shape[0]}")


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    p: MultiHeadParams,
    *,
    scaled: bool = False,
) -> Tensor:
    _check_inputs(q, k, v, p)
    if k.shape[0] == 0:
        raise ContractError("multi-head attention over an empty key sequence")
    factor = 1.0 / math.sqrt(p.d_head) if scaled else 1.0
    heads = []
    for h in range(p.n_heads):
        qh = T.matmul(q, p.wq[h])
        kh = T.matmul(k, p.wk[h])
        vh = T.matmul(v, p.wv[h])
        sim = T.matmul(qh, T.transpose(kh))
        if scaled:
            sim = T.scale(sim, factor)
        heads.append(T.matmul(T.row_softmax(sim), vh))
    return T.matmul(T.concat_cols(heads), p.wo)


def highway_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    p: HighwayParams,
    *,
    scaled: bool = False,
    force_self_logit: float | None = None,
    force_co_logit: float | None = None,
    return_weights: bool = False,
):
    """Highway attention of ``q`` [l1, d_f] over ``k``/``v`` [l2, d_f].

    ``force_self_logit`` / ``force_co_logit`` replace the corresponding logits
    with a constant; they exist so tests can close or fully open the highway.
    With ``return_weights`` the per-head [l1, l2 + 1] weight matrices (last
    column is the self weight) are returned alongside the output.

    An empty key sequence is allowed: the self weight is then 1.
    """
    mh = p.heads
    _check_inputs(q, k, v, mh)
    l1, l2 = q.shape[0], k.shape[0]
    factor = 1.0 / math.sqrt(mh.d_head) if scaled else 1.0

    k_biased = T.add_row_bias(k, p.b_co) if l2 else None
    q_self = T.add_row_bias(q, p.b_self)

    heads, weights = [], []
    for h in range(mh.n_heads):
        qh = T.matmul(q, mh.wq[h])
        q_vh = T.matmul(q, mh.wv[h])
        q_kh = T.matmul(q_self, mh.wk[h])

        if force_self_logit is None:
            self_logit = T.row_dot(qh, q_kh)
            if scaled:
                self_logit = T.scale(self_logit, factor)
            self_logit = T.reshape(self_logit, (l1, 1))
        else:
            self_logit = T.tensor(np.full((l1, 1), float(force_self_logit)))

        if l2 == 0:
            heads.append(q_vh)
            if return_weights:
                weights.append(np.ones((l1, 1)))
            continue

        kh = T.matmul(k_biased, mh.wk[h])
        vh = T.matmul(v, mh.wv[h])
        if force_co_logit is None:
            co_logits = T.matmul(qh, T.transpose(kh))
            if scaled:
                co_logits = T.scale(co_logits, factor)
        else:
            co_logits = T.tensor(np.full((l1, l2), float(force_co_logit)))

        w = T.row_softmax(T.concat_cols([co_logits, self_logit]))
        w_co = T.slice_cols(w, 0, l2)
        w_self = T.reshape(T.slice_cols(w, l2, l2 + 1), (l1,))
        heads.append(T.add(T.matmul(w_co, vh), T.mul_col(q_vh, w_self)))
        if return_weights:
            weights.append(w.data.copy())

    out = T.matmul(T.concat_cols(heads), mh.wo)
    if return_weights:
        return out, weights
    return out
