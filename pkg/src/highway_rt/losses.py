"""Candidate-set objectives.

Each function accepts either a :class:`~highway_rt.tensor.Tensor` of scores,
in which case it returns a differentiable scalar tensor, or a plain sequence
of floats, in which case it returns a float.
"""

from __future__ import annotations

from contextlib import nullcontext
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


def _prepare(scores) -> tuple[Tensor, bool]:
    if isinstance(scores, Tensor):
        if scores.ndim != 1:
            raise ContractError(f"scores must be a vector, got shape {scores.shape}")
        return scores, True
    return T.tensor(np.asarray(scores, dtype=np.float64).reshape(-1)), False


def _finish(out: Tensor, as_tensor: bool):
    return out if as_tensor else out.item()


def lse(scores):
    """``log(sum(exp(scores)))`` computed with a max shift."""
    s, keep = _prepare(scores)
    if s.shape[0] == 0:
        raise ContractError("LSE of an empty score set")
    with _maybe_no_grad(keep):
        out = T.logsumexp(s)
    return _finish(out, keep)


def _split(labels: Sequence[int], n: int) -> tuple[list[int], list[int]]:
    labels = [int(y) for y in labels]
    if len(labels) != n:
        raise ContractError(f"{len(labels)} labels for {n} scores")
    pos = [j for j, y in enumerate(labels) if y == 1]
    neg = [j for j, y in enumerate(labels) if y == 0]
    if len(pos) + len(neg) != n:
        raise ContractError("labels must be 0 or 1")
    return pos, neg


def ranking_loss(scores, labels: Sequence[int], gamma: float = 1.0):
    """Hinge on a smooth max of negatives minus a smooth min of positives.

    ``max(0, LSE({s_j : y_j = 0}) + LSE({-s_j : y_j = 1}) + gamma)``
    """
    s, keep = _prepare(scores)
    pos, neg = _split(labels, s.shape[0])
    if not pos or not neg:
        raise ContractError("ranking loss needs at least one positive and one negative candidate")
    with _maybe_no_grad(keep):
        hardest_neg = T.logsumexp(T.take(s, neg))
        hardest_pos = T.logsumexp(T.neg(T.take(s, pos)))
        out = T.relu(T.add_scalar(T.add(hardest_neg, hardest_pos), gamma))
    return _finish(out, keep)


def bce_loss(scores, labels: Sequence[int]):
    """Mean binary cross-entropy on logits, ``softplus(s) - y * s`` per candidate."""
    s, keep = _prepare(scores)
    n = s.shape[0]
    if n == 0:
        raise ContractError("BCE over an empty candidate set")
    pos, neg = _split(labels, n)
    y = np.zeros(n)
    y[pos] = 1.0
    with _maybe_no_grad(keep):
        out = T.mean(T.sub(T.softplus(s), T.mul(T.tensor(y), s)))
    return _finish(out, keep)


def loss_for(kind: str, scores, labels: Sequence[int], gamma: float = 1.0):
    if kind == "bce":
        return bce_loss(scores, labels)
    if kind == "ranking":
        return ranking_loss(scores, labels, gamma)
    raise ContractError(f"unknown loss {kind!r}")


def _maybe_no_grad(keep: bool):
    return nullcontext() if keep else T.no_grad()
