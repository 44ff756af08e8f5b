"""Transformer encoder blocks shared by utterances and candidates."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .attention import MultiHeadParams, init_multi_head, multi_head_attention, xavier_uniform
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class EncoderBlockParams:
    attn: MultiHeadParams
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.attn.named(f"{prefix}.attn")
        out.update(
            {
                f"{prefix}.ffn.W1": self.w1,
                f"{prefix}.ffn.b1": self.b1,
                f"{prefix}.ffn.W2": self.w2,
                f"{prefix}.ffn.b2": self.b2,
                f"{prefix}.ln1.gain": self.ln1_gain,
                f"{prefix}.ln1.bias": self.ln1_bias,
                f"{prefix}.ln2.gain": self.ln2_gain,
                f"{prefix}.ln2.bias": self.ln2_bias,
            }
        )
        return out


@dataclass
class EncoderStackParams:
    blocks: list[EncoderBlockParams] = field(default_factory=list)

    def named(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            out.update(block.named(f"{prefix}.b{i}"))
        return out


def init_block(rng: np.random.Generator, d_f: int, n_heads: int, d_p: int, d_h: int) -> EncoderBlockParams:
    def param(x):
        return T.tensor(x, requires_grad=True)

    return EncoderBlockParams(
        attn=init_multi_head(rng, d_f, n_heads, d_p),
        w1=param(xavier_uniform(rng, d_f, d_h)),
        b1=param(np.zeros(d_h)),
        w2=param(xavier_uniform(rng, d_h, d_f)),
        b2=param(np.zeros(d_f)),
        ln1_gain=param(np.ones(d_f)),
        ln1_bias=param(np.zeros(d_f)),
        ln2_gain=param(np.ones(d_f)),
        ln2_bias=param(np.zeros(d_f)),
    )


def init_stack(
    rng: np.random.Generator, n_blocks: int, d_f: int, n_heads: int, d_p: int, d_h: int
) -> EncoderStackParams:
    return EncoderStackParams([init_block(rng, d_f, n_heads, d_p, d_h) for _ in range(n_blocks)])


@lru_cache(maxsize=256)
def _sinusoid_table(length: int, d_f: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_f // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_f)
    table = np.empty((length, d_f))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    table.setflags(write=False)
    return table


def positional_encoding(length: int, d_f: int) -> Tensor:
    """Fixed sinusoidal encoding: sin on even columns, cos on odd ones."""
    if d_f % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d_f}")
    if length < 1:
        raise ConfigError(f"positional encoding needs length >= 1, got {length}")
    return T.tensor(_sinusoid_table(length, d_f))


def ffn(x: Tensor, p: EncoderBlockParams) -> Tensor:
    hidden = T.relu(T.add_row_bias(T.matmul(x, p.w1), p.b1))
    return T.add_row_bias(T.matmul(hidden, p.w2), p.b2)


def transformer_block(x: Tensor, p: EncoderBlockParams, *, scaled: bool = False) -> Tensor:
    y = T.layer_norm(T.add(x, multi_head_attention(x, x, x, p.attn, scaled=scaled)), p.ln1_gain, p.ln1_bias)
    return T.layer_norm(T.add(y, ffn(y, p)), p.ln2_gain, p.ln2_bias)


def encode_sequence(x: Tensor, stack: EncoderStackParams, *, scaled: bool = False) -> Tensor:
    h = T.add(x, positional_encoding(x.shape[0], x.shape[1]))
    for block in stack.blocks:
        h = transformer_block(h, block, scaled=scaled)
    return h
