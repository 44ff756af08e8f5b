"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .data import DialogueRecord, Utterance, Vocabulary, prepend_speaker_tokens
from .losses import loss_for
from .model import ModelConfig, Ranker
from .tensor import Tensor

EPS = 1e-5
TOLERANCE = 1e-3
# Below this magnitude both gradients count as zero-ish and the error is
# measured against the floor instead (float64 round-off of the central
# difference at eps=1e-5 is around 1e-10).
FLOOR = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_gradient(
    fn: Callable[[], Tensor], t: Tensor, eps: float = EPS, indices=None
) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. the entries of ``t``.

    ``indices`` restricts the probe to selected flat positions (others stay 0).
    """
    flat = t.data.reshape(-1)
    out = np.zeros(flat.size)
    positions = range(flat.size) if indices is None else indices
    with T.no_grad():
        for i in positions:
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * eps)
    return out.reshape(t.shape)


def analytic_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    T.zero_grads(params.values())
    T.clear_tape()
    loss = fn()
    T.backward(loss)
    grads = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for name, p in params.items()}
    T.zero_grads(params.values())
    return grads


@dataclass
class TensorCheck:
    name: str
    checked: int
    max_rel_error: float
    worst_index: int
    analytic: float
    numeric: float
    max_abs_grad: float = 0.0


@dataclass
class GradCheckReport:
    checks: list[TensorCheck] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    @property
    def max_abs_grad(self) -> float:
        return max((c.max_abs_grad for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def n_checked(self) -> int:
        return sum(c.checked for c in self.checks)

    def failures(self) -> list[TensorCheck]:
        return [c for c in self.checks if c.max_rel_error >= self.tolerance]

    def summary(self) -> str:
        width = max((len(c.name) for c in self.checks), default=4)
        lines = [
            f"{c.name:<{width}}  n={c.checked:<5d} max_rel_err={c.max_rel_error:.2e}"
            f"{'' if c.max_rel_error < self.tolerance else '  FAIL'}"
            for c in self.checks
        ]
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(
            f"{verdict}: {self.n_checked} entries, max relative error {self.max_rel_error:.2e}, "
            f"largest gradient {self.max_abs_grad:.2e}"
        )
        return "\n".join(lines)


def check_gradients(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    eps: float = EPS,
    tolerance: float = TOLERANCE,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare backprop against central differences for every parameter.

    ``max_entries`` samples that many positions per tensor (all by default).
    """
    grads = analytic_gradients(fn, params)
    report = GradCheckReport(tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for name, p in params.items():
        n = p.data.size
        if max_entries is None or max_entries >= n:
            idx = np.arange(n)
        else:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        numeric = numerical_gradient(fn, p, eps, idx).reshape(-1)
        analytic = grads[name].reshape(-1)
        errs = np.array([relative_error(analytic[i], numeric[i]) for i in idx])
        worst = int(idx[int(np.argmax(errs))]) if len(idx) else 0
        report.checks.append(
            TensorCheck(
                name=name,
                checked=len(idx),
                max_rel_error=float(errs.max()) if len(idx) else 0.0,
                worst_index=worst,
                analytic=float(analytic[worst]) if len(idx) else 0.0,
                numeric=float(numeric[worst]) if len(idx) else 0.0,
                max_abs_grad=float(np.abs(analytic[idx]).max()) if len(idx) else 0.0,
            )
        )
    return report


def toy_dialogue(
    rng: np.random.Generator,
    n_utterances: int = 2,
    max_len: int = 4,
    n_candidates: int = 3,
    vocab_size: int = 12,
) -> DialogueRecord:
    """A small random dialogue with one positive candidate."""
    words = [f"t{i}" for i in range(vocab_size)]

    def seq():
        return [words[k] for k in rng.integers(0, vocab_size, size=int(rng.integers(2, max_len + 1)))]

    utterances = [Utterance(1 + i % 2, seq()) for i in range(n_utterances)]
    labels = [0] * n_candidates
    labels[int(rng.integers(n_candidates))] = 1
    record = DialogueRecord("toy", utterances, [seq() for _ in range(n_candidates)], labels)
    return prepend_speaker_tokens(record)


SCORE_TARGET = 2.0


def _unsaturate(model: Ranker, record: DialogueRecord) -> None:
    """Rescale the matching output projection so that scores are O(1).

    Raw scores of a randomly initialised model can run into the hundreds,
    where the sigmoid is flat and every gradient underflows to zero, which
    would make the comparison vacuous.  Scores are homogeneous in W^O of the
    matching block (degree 2 with max pooling, 6 with raw attention pooling),
    so one multiplicative rescale lands them at ``SCORE_TARGET``.
    """
    with T.no_grad():
        peak = max(abs(s) for s in model.score_all(record).scores)
    if peak <= SCORE_TARGET or peak == 0.0:
        return
    degree = 2 if model.config.pooling == "max" else 6
    model.params.matching.heads.wo.data *= (SCORE_TARGET / peak) ** (1.0 / degree)


def model_gradcheck(
    config: ModelConfig,
    *,
    record: DialogueRecord | None = None,
    max_entries: int | None = None,
    tolerance: float = TOLERANCE,
) -> GradCheckReport:
    """Finite-difference check of the full model loss on one toy dialogue.

    Parameters start from the seeded initialisation and are then perturbed
    randomly (biases, gains and the pooling vector are otherwise at exact
    zeros or ones, which hides sign and scale mistakes).
    """
    rng = np.random.default_rng(config.seed)
    if record is None:
        record = toy_dialogue(rng)
    model = Ranker.initialize(config, Vocabulary.build([record]))
    params = model.named_parameters()
    for p in params.values():
        p.data = p.data + rng.normal(0.0, 0.1, size=p.shape)
    _unsaturate(model, record)

    def loss() -> Tensor:
        scores = model.score_all(record).score_tensor
        return loss_for(config.loss, scores, record.labels, config.margin)

    return check_gradients(loss, params, max_entries=max_entries, tolerance=tolerance, rng=rng)
