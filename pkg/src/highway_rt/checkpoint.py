"""Checkpoint files: a JSON header followed by raw little-endian float64 data.

Layout::

    b"HRTCKPT1\\n"
    b"%016d\\n" % len(header)         # header byte length, ASCII decimal
    header                            # UTF-8 JSON, keys sorted
    payload                           # concatenated float64 '<f8' arrays

The header holds ``format``, ``version``, ``config`` (ModelConfig fields),
``vocab`` (id-ordered token list) and ``params``: a list of
``{"name", "shape", "offset", "count"}`` entries, where ``offset`` and
``count`` are in float64 elements from the start of the payload.  Parameter
names follow the model's role naming (``encoder.b0.attn.h1.Wq``,
``matching.b_co``, ``pool.w``, ...).  The same model always serialises to
the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import InputError
from .model import ModelConfig, Ranker, init_params

MAGIC = b"HRTCKPT1\n"
VERSION = 1


def checkpoint_bytes(model: Ranker) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, p in model.named_parameters().items():
        count = int(p.data.size)
        entries.append({"name": name, "shape": list(p.shape), "offset": offset, "count": count})
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        offset += count
    header = {
        "format": "highway-rt-checkpoint",
        "version": VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_list(),
        "params": entries,
    }
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return MAGIC + b"%016d\n" % len(raw) + raw + b"".join(chunks)


def save_checkpoint(model: Ranker, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def read_header(blob: bytes) -> tuple[dict, int]:
    if not blob.startswith(MAGIC):
        raise InputError("not a checkpoint file (bad magic)")
    start = len(MAGIC)
    try:
        size = int(blob[start : start + 16])
    except ValueError as exc:
        raise InputError("corrupt checkpoint header length") from exc
    body = start + 17
    try:
        header = json.loads(blob[body : body + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError("corrupt checkpoint header") from exc
    if header.get("version") != VERSION:
        raise InputError(f"unsupported checkpoint version {header.get('version')!r}")
    return header, body + size


def load_checkpoint(path: str | Path) -> Ranker:
    blob = Path(path).read_bytes()
    header, payload_start = read_header(blob)
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary.from_list(header["vocab"])
    params = init_params(config, len(vocab))
    named = params.named_parameters()
    stored = {e["name"]: e for e in header["params"]}
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise InputError(f"checkpoint parameters mismatch: missing {missing}, unexpected {extra}")
    n_values = (len(blob) - payload_start) // 8
    payload = np.frombuffer(blob, dtype="<f8", count=n_values, offset=payload_start)
    for name, p in named.items():
        e = stored[name]
        if tuple(e["shape"]) != p.shape:
            raise InputError(f"{name}: stored shape {e['shape']} != expected {list(p.shape)}")
        chunk = payload[e["offset"] : e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise InputError(f"{name}: truncated payload")
        p.data = chunk.astype(np.float64).reshape(p.shape)
    return Ranker(config, params, vocab)
