"""Retrieval metrics over candidate rankings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 10, 50)


def first_positive_rank(ranking: Sequence[int], labels: Sequence[int]) -> int | None:
    """1-based position of the best-ranked correct candidate, or None."""
    for pos, j in enumerate(ranking, 1):
        if labels[j] == 1:
            return pos
    return None


def _ranks(rankings, labels) -> list[int]:
    if len(rankings) != len(labels):
        raise ValueError(f"{len(rankings)} rankings for {len(labels)} label vectors")
    ranks = []
    skipped = 0
    for ranking, ys in zip(rankings, labels):
        r = first_positive_rank(ranking, ys)
        if r is None:
            skipped += 1
        else:
            ranks.append(r)
    if skipped:
        log.warning("%d dialogue(s) without a correct candidate excluded from metrics", skipped)
    return ranks


def recall_at_k(rankings: Sequence[Sequence[int]], labels: Sequence[Sequence[int]], k: int) -> float:
    """Fraction of dialogues with a correct candidate in the top ``k``."""
    ranks = _ranks(rankings, labels)
    if not ranks:
        return 0.0
    return sum(r <= k for r in ranks) / len(ranks)


def mrr(rankings: Sequence[Sequence[int]], labels: Sequence[Sequence[int]]) -> float:
    """Mean reciprocal rank of the best-ranked correct candidate."""
    ranks = _ranks(rankings, labels)
    if not ranks:
        return 0.0
    return sum(1.0 / r for r in ranks) / len(ranks)


@dataclass
class EvalReport:
    recall: dict[int, float]
    mrr: float
    ranks: list[int | None] = field(default_factory=list)
    loss: float | None = None

    @property
    def n_dialogues(self) -> int:
        return len(self.ranks)

    @property
    def n_excluded(self) -> int:
        return sum(r is None for r in self.ranks)

    @classmethod
    def from_rankings(
        cls,
        rankings: Sequence[Sequence[int]],
        labels: Sequence[Sequence[int]],
        ks: Sequence[int] = DEFAULT_KS,
        loss: float | None = None,
    ) -> "EvalReport":
        ranks = [first_positive_rank(r, y) for r, y in zip(rankings, labels)]
        valid = [r for r in ranks if r is not None]
        if len(valid) < len(ranks):
            log.warning(
                "%d dialogue(s) without a correct candidate excluded from metrics",
                len(ranks) - len(valid),
            )
        if valid:
            recall = {k: sum(r <= k for r in valid) / len(valid) for k in ks}
            mean_rr = sum(1.0 / r for r in valid) / len(valid)
        else:
            recall = {k: 0.0 for k in ks}
            mean_rr = 0.0
        return cls(recall=recall, mrr=mean_rr, ranks=ranks, loss=loss)

    def to_dict(self) -> dict:
        out = {f"recall@{k}": v for k, v in sorted(self.recall.items())}
        out["mrr"] = self.mrr
        out["n_dialogues"] = self.n_dialogues
        out["n_excluded"] = self.n_excluded
        if self.loss is not None:
            out["loss"] = self.loss
        return out

    def table(self) -> str:
        rows = [(f"Recall@{k}", f"{v:.4f}") for k, v in sorted(self.recall.items())]
        rows.append(("MRR", f"{self.mrr:.4f}"))
        if self.loss is not None:
            rows.append(("Loss", f"{self.loss:.4f}"))
        rows.append(("Dialogues", str(self.n_dialogues - self.n_excluded)))
        if self.n_excluded:
            rows.append(("Excluded", str(self.n_excluded)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value:>10}" for name, value in rows)
