"""Negative sampling, the per-dialogue training loop and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import DialogueRecord, Vocabulary, load_embeddings
from .errors import ConfigError, ContractError, DivergenceError, InputError
from .losses import loss_for
from .metrics import DEFAULT_KS, EvalReport
from .model import ModelConfig, Ranker
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    candidates_per_sample: int = 10
    log_every: int = 10
    eval_every: int = 100
    patience: int = 5
    valid_fraction: float = 0.1
    keep_best: bool = True

    def validate(self) -> "TrainConfig":
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.candidates_per_sample < 2:
            raise ConfigError("candidates_per_sample must be at least 2")
        if self.log_every < 1:
            raise ConfigError("log_every must be positive")
        if self.eval_every < 0 or self.patience < 0:
            raise ConfigError("eval_every and patience must be non-negative")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError("valid_fraction must lie in [0, 1)")
        return self


@dataclass(frozen=True)
class LossConfig:
    kind: str = "bce"
    gamma: float = 1.0
    total_candidates: int = 10

    @classmethod
    def from_configs(cls, model: ModelConfig, train: TrainConfig) -> "LossConfig":
        return cls(model.loss, model.margin, train.candidates_per_sample)


def split_config(obj: dict) -> tuple[ModelConfig, TrainConfig]:
    """Partition a flat config mapping into model and training settings."""
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(obj) - model_keys - train_keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    model = ModelConfig(**{k: v for k, v in obj.items() if k in model_keys}).validate()
    train = TrainConfig(**{k: v for k, v in obj.items() if k in train_keys}).validate()
    return model, train


def load_config(path: str | Path | None) -> tuple[ModelConfig, TrainConfig]:
    if path is None:
        return ModelConfig().validate(), TrainConfig().validate()
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg}") from exc
    return split_config(obj)


def config_to_dict(model: ModelConfig, train: TrainConfig) -> dict:
    out = asdict(model)
    out.update(asdict(train))
    return out


def sample_negatives(record: DialogueRecord, total: int, rng: np.random.Generator) -> DialogueRecord:
    """Keep every positive, fill up to ``total`` with random negatives, shuffle."""
    pos = [j for j, y in enumerate(record.labels) if y == 1]
    neg = [j for j, y in enumerate(record.labels) if y == 0]
    if not pos:
        raise ContractError(f"dialogue {record.id!r} has no positive candidate to train on")
    want = max(total - len(pos), 0)
    if want > len(neg):
        log.warning(
            "dialogue %r: %d negatives available, %d requested; keeping all", record.id, len(neg), want
        )
        want = len(neg)
    chosen = [neg[i] for i in rng.choice(len(neg), size=want, replace=False)] if want else []
    keep = pos + chosen
    order = rng.permutation(len(keep))
    picked = [keep[i] for i in order]
    return DialogueRecord(
        id=record.id,
        utterances=record.utterances,
        candidates=[record.candidates[j] for j in picked],
        labels=[record.labels[j] for j in picked],
        prior_courses=record.prior_courses,
        suggested_courses=record.suggested_courses,
    )


def evaluate(
    model: Ranker,
    records: Sequence[DialogueRecord],
    ks: Sequence[int] = DEFAULT_KS,
    with_loss: bool = False,
) -> EvalReport:
    """Rank every candidate of every dialogue and summarise."""
    rankings, labels, losses = [], [], []
    with T.no_grad():
        for r in records:
            result = model.score_all(r)
            rankings.append(result.ranking)
            labels.append(r.labels)
            if with_loss and 0 < sum(r.labels) < len(r.labels):
                losses.append(loss_for(model.config.loss, result.scores, r.labels, model.config.margin))
    loss = float(np.mean(losses)) if losses else None
    return EvalReport.from_rankings(rankings, labels, ks, loss=loss)


def _log_entry(step: int, loss: float | None, split: str, report: EvalReport | None = None) -> dict:
    return {
        "step": step,
        "loss": loss,
        "split": split,
        "recall@1": report.recall.get(1) if report else None,
        "recall@10": report.recall.get(10) if report else None,
        "mrr": report.mrr if report else None,
    }


def _holdout(corpus: list[DialogueRecord], fraction: float, rng: np.random.Generator):
    n_valid = int(len(corpus) * fraction)
    if n_valid == 0 or n_valid == len(corpus):
        return corpus, []
    order = rng.permutation(len(corpus))
    valid_idx = set(order[:n_valid].tolist())
    train = [r for i, r in enumerate(corpus) if i not in valid_idx]
    valid = [r for i, r in enumerate(corpus) if i in valid_idx]
    return train, valid


def train(
    corpus: Sequence[DialogueRecord],
    config: ModelConfig,
    train_config: TrainConfig | None = None,
    *,
    valid: Sequence[DialogueRecord] | None = None,
    vocab: Vocabulary | None = None,
    on_log: Callable[[dict], None] | None = None,
    embeddings: str | Path | None = None,
) -> tuple[Ranker, list[dict]]:
    """Fit a ranker with one Adam update per sampled dialogue.

    Without ``valid``, ``train_config.valid_fraction`` of the corpus is held
    out.  With a validation split and ``eval_every > 0`` the parameters with
    the best validation MRR are kept, and training stops early after
    ``patience`` evaluations without improvement.  ``embeddings`` names a
    ``token v1 v2 ...`` text file whose rows replace the random initial
    vectors of matching vocabulary entries.
    """
    config.validate()
    tc = (train_config or TrainConfig()).validate()
    corpus = list(corpus)
    if not corpus:
        raise InputError("cannot train on an empty corpus")

    data_rng = np.random.default_rng([config.seed, 1])
    if valid is None:
        corpus, valid = _holdout(corpus, tc.valid_fraction, data_rng)
    valid = list(valid)
    trainable = [r for r in corpus if 0 < sum(r.labels) < len(r.labels)]
    if not trainable:
        raise InputError("no training dialogue has both positive and negative candidates")

    if vocab is None:
        vocab = Vocabulary.build(corpus)
    model = Ranker.initialize(config, vocab)
    if embeddings is not None:
        filled = load_embeddings(embeddings, vocab, model.params.embedding.data)
        log.info("loaded %d of %d embedding rows from %s", filled, len(vocab), embeddings)
    params = model.trainable_parameters()
    opt = AdamState.for_params(params)
    loss_cfg = LossConfig.from_configs(config, tc)

    history: list[dict] = []

    def emit(entry: dict) -> None:
        history.append(entry)
        if on_log is not None:
            on_log(entry)

    best_mrr, best_state, stale = -math.inf, None, 0
    window: list[float] = []
    order: list[int] = []
    for step in range(1, tc.steps + 1):
        if not order:
            order = data_rng.permutation(len(trainable)).tolist()
        record = trainable[order.pop()]
        sample = sample_negatives(record, loss_cfg.total_candidates, data_rng)

        result = model.score_all(sample)
        loss = loss_for(loss_cfg.kind, result.score_tensor, sample.labels, loss_cfg.gamma)
        value = loss.item()
        if not math.isfinite(value):
            T.clear_tape()
            raise DivergenceError(step, value)
        if loss.requires_grad:
            T.backward(loss)
        else:
            T.clear_tape()
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros(p.shape)
        adam_step(params, opt, config.lr)
        window.append(value)

        if step % tc.log_every == 0 or step == tc.steps:
            emit(_log_entry(step, float(np.mean(window)), "train"))
            window = []

        if valid and tc.eval_every and (step % tc.eval_every == 0 or step == tc.steps):
            report = evaluate(model, valid, with_loss=True)
            emit(_log_entry(step, report.loss, "valid", report))
            if report.mrr > best_mrr:
                best_mrr, stale = report.mrr, 0
                best_state = {name: p.data.copy() for name, p in params.items()}
            else:
                stale += 1
                if tc.patience and stale >= tc.patience:
                    emit(_log_entry(step, None, "early_stop"))
                    break

    if tc.keep_best and best_state is not None:
        for name, p in params.items():
            p.data = best_state[name]
    return model, history


def write_log(history: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")
