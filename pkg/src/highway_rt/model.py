"""Highway recurrent transformer: recurrence, matching, pooling and scoring."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import HighwayParams, highway_attention, init_highway, xavier_uniform
from .data import FEATURE_WIDTH, DialogueRecord, FeatureTable, Vocabulary, feature_matrix
from .encoder import EncoderStackParams, encode_sequence, init_stack
from .errors import ConfigError, InputError
from .tensor import Tensor

VARIANTS = ("last", "all")
POOLINGS = ("max", "attention")
LOSSES = ("bce", "ranking")


@dataclass
class ModelConfig:
    d_emb: int = 62
    d_feat: int = 2
    n_heads: int = 4
    d_p: int = 16
    d_h: int = 512
    n_blocks: int = 2
    variant: str = "all"
    pooling: str = "max"
    loss: str = "bce"
    margin: float = 1.0
    scaled_similarity: bool = False
    normalize_pool_weights: bool = False
    freeze_embeddings: bool = False
    seed: int = 0
    lr: float = 1e-4
    max_head_width: int = 1024

    @property
    def d_f(self) -> int:
        return self.d_emb + self.d_feat

    def validate(self) -> "ModelConfig":
        if self.d_emb < 1:
            raise ConfigError(f"d_emb must be positive, got {self.d_emb}")
        if self.d_feat not in (0, FEATURE_WIDTH):
            raise ConfigError(f"d_feat must be 0 or {FEATURE_WIDTH}, got {self.d_feat}")
        if self.d_f % 2:
            raise ConfigError(f"d_emb + d_feat must be even, got {self.d_f}")
        if self.n_heads < 1 or self.d_p < 1 or self.d_h < 1 or self.n_blocks < 0:
            raise ConfigError("n_heads, d_p and d_h must be positive and n_blocks non-negative")
        if self.n_heads * self.d_p > self.max_head_width:
            raise ConfigError(
                f"n_heads * d_p = {self.n_heads * self.d_p} exceeds max_head_width {self.max_head_width}"
            )
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**obj).validate()


@dataclass
class ModelParams:
    embedding: Tensor
    encoder: EncoderStackParams
    recurrence: HighwayParams
    matching: HighwayParams
    pool_w: Tensor | None = None

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        out.update(self.encoder.named("encoder"))
        out.update(self.recurrence.named("recurrence"))
        out.update(self.matching.named("matching"))
        if self.pool_w is not None:
            out["pool.w"] = self.pool_w
        for name, p in out.items():
            p.name = name
        return out


def init_params(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator | None = None) -> ModelParams:
    """Seeded initialisation: Xavier-uniform projections, zero biases, unit gains."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    d_f = cfg.d_f
    embedding = T.tensor(
        rng.normal(0.0, 1.0, size=(vocab_size, cfg.d_emb)),
        requires_grad=not cfg.freeze_embeddings,
    )
    encoder = init_stack(rng, cfg.n_blocks, d_f, cfg.n_heads, cfg.d_p, cfg.d_h)
    recurrence = init_highway(rng, d_f, cfg.n_heads, cfg.d_p)
    matching = init_highway(rng, d_f, cfg.n_heads, cfg.d_p)
    pool_w = None
    if cfg.pooling == "attention":
        pool_w = T.tensor(xavier_uniform(rng, d_f, 1)[:, 0], requires_grad=True)
    params = ModelParams(embedding, encoder, recurrence, matching, pool_w)
    params.named_parameters()
    return params


@dataclass
class DialogueState:
    """Per-utterance outputs of the recurrence, oldest first."""

    states: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def context(self, variant: str) -> Tensor:
        if not self.states:
            raise InputError("empty dialogue state")
        if variant == "last":
            return self.states[-1]
        if len(self.states) == 1:
            return self.states[0]
        return T.concat_rows(self.states)


@dataclass
class RankedResult:
    dialogue_id: str
    scores: list[float]
    ranking: list[int]
    score_tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> str:
        return json.dumps({"dialogue_id": self.dialogue_id, "scores": self.scores, "ranking": self.ranking})


def rank_scores(scores: Sequence[float]) -> list[int]:
    """Indices by descending score; equal scores keep the lower index first."""
    return sorted(range(len(scores)), key=lambda j: (-scores[j], j))


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def recur_over_utterances(
    encoded: Sequence[Tensor], p: HighwayParams, *, scaled: bool = False
) -> DialogueState:
    if not encoded:
        raise InputError("cannot run the recurrence over an empty dialogue")
    states = [encoded[0]]
    for v in encoded[1:]:
        prev = states[-1]
        states.append(highway_attention(v, prev, prev, p, scaled=scaled))
    return DialogueState(states)


def match_bidirectional(
    state: DialogueState, v_x: Tensor, cfg: ModelConfig, p: HighwayParams
) -> tuple[Tensor, Tensor]:
    """Candidate attends to the context and the context attends to the candidate."""
    ctx = state.context(cfg.variant)
    scaled = cfg.scaled_similarity
    v_tilde = highway_attention(v_x, ctx, ctx, p, scaled=scaled)
    a_tilde = highway_attention(ctx, v_x, v_x, p, scaled=scaled)
    return v_tilde, a_tilde


def pool_max(x: Tensor) -> Tensor:
    return T.max_rows(x)


def pool_attention(x: Tensor, w: Tensor, *, normalize: bool = False) -> Tensor:
    """Weighted row sum with weights ``<w, x_k>`` (softmaxed only if ``normalize``)."""
    alpha = T.matvec(x, w)
    if normalize:
        n = alpha.shape[0]
        alpha = T.reshape(T.row_softmax(T.reshape(alpha, (1, n))), (n,))
    return T.vecmat(alpha, x)


class Ranker:
    """Parameters, configuration and vocabulary bundled for scoring."""

    def __init__(self, config: ModelConfig, params: ModelParams, vocab: Vocabulary):
        self.config = config.validate()
        self.params = params
        self.vocab = vocab
        if params.embedding.shape != (len(vocab), config.d_emb):
            raise ConfigError(
                f"embedding shape {params.embedding.shape} does not match vocabulary "
                f"size {len(vocab)} and d_emb {config.d_emb}"
            )

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary) -> "Ranker":
        return cls(config, init_params(config, len(vocab)), vocab)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named_parameters()

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.named_parameters().items() if p.requires_grad}

    def augment_features(self, tokens: Sequence[str], table: FeatureTable | None) -> Tensor:
        """Embedding rows with the course feature columns appended."""
        emb = T.take_rows(self.params.embedding, self.vocab.encode(tokens))
        if self.config.d_feat == 0:
            return emb
        return T.concat_cols([emb, T.tensor(feature_matrix(tokens, table))])

    def encode(self, tokens: Sequence[str], table: FeatureTable | None) -> Tensor:
        if not tokens:
            raise InputError("cannot encode an empty token sequence")
        return encode_sequence(
            self.augment_features(tokens, table),
            self.params.encoder,
            scaled=self.config.scaled_similarity,
        )

    def dialogue_state(self, record: DialogueRecord) -> DialogueState:
        table = record.features
        encoded = [self.encode(u.tokens, table) for u in record.utterances]
        return recur_over_utterances(
            encoded, self.params.recurrence, scaled=self.config.scaled_similarity
        )

    def pool(self, x: Tensor) -> Tensor:
        if self.config.pooling == "max":
            return pool_max(x)
        return pool_attention(x, self.params.pool_w, normalize=self.config.normalize_pool_weights)

    def score_candidate(
        self, state: DialogueState, tokens: Sequence[str], table: FeatureTable | None = None
    ) -> Tensor:
        if not tokens:
            raise InputError("cannot score an empty candidate")
        v_x = self.encode(tokens, table)
        v_tilde, a_tilde = match_bidirectional(state, v_x, self.config, self.params.matching)
        return T.dot(self.pool(v_tilde), self.pool(a_tilde))

    def score_all(self, record: DialogueRecord) -> RankedResult:
        """Score every candidate against one shared dialogue state."""
        if not record.candidates:
            raise InputError(f"dialogue {record.id!r} has no candidates")
        state = self.dialogue_state(record)
        table = record.features
        per_candidate = [self.score_candidate(state, c, table) for c in record.candidates]
        scores = T.stack(per_candidate)
        values = [float(s) for s in scores.data]
        return RankedResult(record.id, values, rank_scores(values), scores)


def score_candidate(state: DialogueState, tokens: Sequence[str], model: Ranker, table=None) -> Tensor:
    return model.score_candidate(state, tokens, table)


def score_all(record: DialogueRecord, model: Ranker) -> RankedResult:
    return model.score_all(record)
