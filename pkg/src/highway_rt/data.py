"""Dialogue records, preprocessing, vocabulary, course features and corpus I/O.

Corpus files are JSON lines, one dialogue per line::

    {"id": "d0",
     "utterances": [{"speaker": 1, "text": "..."}, ...],
     "candidates": ["...", ...],
     "labels": [0, 1, ...],
     "prior_courses": ["EECS 280"],        # optional
     "suggested_courses": ["eecs 281"]}    # optional

Text preprocessing runs in a fixed order: whitespace tokenisation,
lowercasing, course-number normalisation, then speaker-token prepending.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusFormatError, InputError

log = logging.getLogger(__name__)

PAD = "<pad-unused>"
UNK = "<unk>"
SPEAKER_RE = re.compile(r"^<speaker(\d+)>$")

# Course numbers: 1-5 letters, 1-4 digits, optional trailing letter ("cs1234n").
COURSE_RE = re.compile(r"^([a-z]{1,5})(\d{1,4}[a-z]?)$", re.IGNORECASE)
_COURSE_PREFIX_RE = re.compile(r"^[a-z]{1,5}$", re.IGNORECASE)
_COURSE_SUFFIX_RE = re.compile(r"^\d{1,4}[a-z]?$", re.IGNORECASE)

FEATURE_WIDTH = 2


def speaker_token(speaker: int) -> str:
    return f"<speaker{speaker}>"


@dataclass
class Utterance:
    speaker: int
    tokens: list[str]


@dataclass
class DialogueRecord:
    id: str
    utterances: list[Utterance]
    candidates: list[list[str]]
    labels: list[int]
    prior_courses: list[str] = field(default_factory=list)
    suggested_courses: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.utterances:
            raise InputError(f"dialogue {self.id!r} has no utterances")
        if len(self.labels) != len(self.candidates):
            raise InputError(
                f"dialogue {self.id!r}: {len(self.labels)} labels for {len(self.candidates)} candidates"
            )
        if any(y not in (0, 1) for y in self.labels):
            raise InputError(f"dialogue {self.id!r}: labels must be 0 or 1")
        for i, utt in enumerate(self.utterances):
            if not utt.tokens:
                raise InputError(f"dialogue {self.id!r}: utterance {i} is empty")
        for j, cand in enumerate(self.candidates):
            if not cand:
                raise InputError(f"dialogue {self.id!r}: candidate {j} is empty")

    @property
    def features(self) -> "FeatureTable | None":
        if not self.prior_courses and not self.suggested_courses:
            return None
        return FeatureTable.from_lists(self.prior_courses, self.suggested_courses)


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    return text.split()


def merge_course_tokens(tokens: Sequence[str]) -> list[str]:
    """Join ``["EECS", "280"]`` into ``["EECS280"]``."""
    out: list[str] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if (
            i + 1 < len(tokens)
            and _COURSE_PREFIX_RE.match(tok)
            and _COURSE_SUFFIX_RE.match(tokens[i + 1])
        ):
            out.append(tok + tokens[i + 1])
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def normalize_course_number(token: str) -> str:
    m = COURSE_RE.match(token)
    if m is None:
        return token
    return (m.group(1) + m.group(2)).lower()


def normalize_course_numbers(tokens: Sequence[str]) -> list[str]:
    return [normalize_course_number(t) for t in merge_course_tokens(tokens)]


def is_course(token: str) -> bool:
    return COURSE_RE.match(token) is not None


def prepend_speaker_tokens(record: DialogueRecord) -> DialogueRecord:
    """Mark each utterance with its speaker token; already-marked ones are kept."""
    utterances = []
    for utt in record.utterances:
        tok = speaker_token(utt.speaker)
        tokens = list(utt.tokens)
        if not tokens or tokens[0] != tok:
            tokens.insert(0, tok)
        utterances.append(Utterance(utt.speaker, tokens))
    return DialogueRecord(
        id=record.id,
        utterances=utterances,
        candidates=[list(c) for c in record.candidates],
        labels=list(record.labels),
        prior_courses=list(record.prior_courses),
        suggested_courses=list(record.suggested_courses),
    )


def preprocess_text(text: str, normalize_courses: bool = True) -> list[str]:
    tokens = [t.lower() for t in tokenize(text)]
    if normalize_courses:
        tokens = normalize_course_numbers(tokens)
    return tokens


def normalize_course_name(name: str) -> str:
    """Canonical form of a course list entry such as ``"EECS 280"``."""
    tokens = normalize_course_numbers(tokenize(name.lower()))
    return "".join(tokens)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


@dataclass
class FeatureTable:
    prior: frozenset[str]
    suggested: frozenset[str]

    @classmethod
    def from_lists(cls, prior: Iterable[str], suggested: Iterable[str]) -> "FeatureTable":
        return cls(
            frozenset(normalize_course_name(c) for c in prior),
            frozenset(normalize_course_name(c) for c in suggested),
        )

    def features(self, token: str) -> tuple[float, float]:
        if not is_course(token):
            return (0.0, 0.0)
        return (float(token in self.prior), float(token in self.suggested))

    def matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, FEATURE_WIDTH))
        return np.array([self.features(t) for t in tokens], dtype=np.float64)


def feature_matrix(tokens: Sequence[str], table: FeatureTable | None) -> np.ndarray:
    if table is None:
        return np.zeros((len(tokens), FEATURE_WIDTH))
    return table.matrix(tokens)


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Token to id map with reserved padding, unknown and speaker ids."""

    def __init__(self, tokens: Iterable[str] = (), n_speakers: int = 2):
        self.itos: list[str] = [PAD, UNK]
        self.stoi: dict[str, int] = {PAD: 0, UNK: 1}
        for s in range(1, n_speakers + 1):
            self.add(speaker_token(s))
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.itos.append(token)
            self.stoi[token] = idx
        return idx

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[:2]) != [PAD, UNK]:
            raise InputError("vocabulary must start with the padding and unknown tokens")
        vocab = cls(n_speakers=0)
        for tok in itos[2:]:
            vocab.add(tok)
        if len(vocab) != len(itos):
            raise InputError("vocabulary contains duplicate tokens")
        return vocab

    @classmethod
    def build(cls, records: Iterable[DialogueRecord], n_speakers: int = 2) -> "Vocabulary":
        """Ids in order of first appearance, after the reserved ones."""
        records = list(records)
        max_speaker = max(
            [n_speakers] + [u.speaker for r in records for u in r.utterances], default=n_speakers
        )
        vocab = cls(n_speakers=max_speaker)
        for r in records:
            for u in r.utterances:
                for t in u.tokens:
                    vocab.add(t)
            for c in r.candidates:
                for t in c:
                    vocab.add(t)
        return vocab


def load_embeddings(path: str | Path, vocab: Vocabulary, table: np.ndarray) -> int:
    """Overwrite rows of ``table`` from a ``token v1 v2 ...`` text file.

    Returns the number of vocabulary rows filled.  Tokens absent from the
    vocabulary are skipped; rows for tokens absent from the file keep their
    existing values.
    """
    width = table.shape[1]
    filled = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            tok = parts[0]
            if tok not in vocab:
                continue
            if len(parts) - 1 != width:
                raise CorpusFormatError(f"expected {width} values, got {len(parts) - 1}", lineno)
            table[vocab.stoi[tok]] = np.array([float(x) for x in parts[1:]])
            filled += 1
    return filled


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------


def record_from_json(obj: dict, normalize_courses: bool = True) -> DialogueRecord:
    if not isinstance(obj, dict):
        raise InputError("dialogue must be a JSON object")
    try:
        rid = str(obj["id"])
        utterances = [
            Utterance(int(u["speaker"]), preprocess_text(u["text"], normalize_courses))
            for u in obj["utterances"]
        ]
        candidates = [preprocess_text(c, normalize_courses) for c in obj["candidates"]]
        labels = [int(y) for y in obj["labels"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"missing or invalid field: {exc}") from exc
    record = DialogueRecord(
        id=rid,
        utterances=utterances,
        candidates=candidates,
        labels=labels,
        prior_courses=list(obj.get("prior_courses") or []),
        suggested_courses=list(obj.get("suggested_courses") or []),
    )
    record = prepend_speaker_tokens(record)
    record.validate()
    return record


def record_to_json(record: DialogueRecord) -> dict:
    utterances = []
    for u in record.utterances:
        tokens = u.tokens
        if tokens and tokens[0] == speaker_token(u.speaker):
            tokens = tokens[1:]
        utterances.append({"speaker": u.speaker, "text": " ".join(tokens)})
    obj = {
        "id": record.id,
        "utterances": utterances,
        "candidates": [" ".join(c) for c in record.candidates],
        "labels": list(record.labels),
    }
    if record.prior_courses:
        obj["prior_courses"] = list(record.prior_courses)
    if record.suggested_courses:
        obj["suggested_courses"] = list(record.suggested_courses)
    return obj


def load_corpus(path: str | Path, normalize_courses: bool = True) -> list[DialogueRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            try:
                records.append(record_from_json(obj, normalize_courses))
            except CorpusFormatError:
                raise
            except InputError as exc:
                raise CorpusFormatError(str(exc), lineno) from exc
    return records


def save_corpus(records: Iterable[DialogueRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def generate_synthetic(
    n_dialogues: int,
    vocab_size: int = 100,
    rng=0,
    n_candidates: int = 100,
    id_prefix: str = "syn",
) -> list[DialogueRecord]:
    """Keyword-echo dialogues with exactly one correct candidate each.

    The correct candidate repeats one word of the final utterance.  Every
    other candidate word, in the correct candidate and the distractors alike,
    is drawn from words that never occur in the dialogue, so context overlap
    identifies the answer exactly.
    """
    rng = _as_rng(rng)
    words = [f"w{i}" for i in range(vocab_size)]
    records = []
    for d in range(n_dialogues):
        n_utts = int(rng.integers(2, 5))
        utterances = []
        for i in range(n_utts):
            length = int(rng.integers(4, 9))
            toks = [words[k] for k in rng.integers(0, vocab_size, size=length)]
            utterances.append(Utterance(1 + i % 2, toks))
        used = {t for u in utterances for t in u.tokens}
        fresh = [w for w in words if w not in used]
        if not fresh:
            raise InputError(f"vocab_size {vocab_size} too small for synthetic dialogues")
        keyword = utterances[-1].tokens[int(rng.integers(len(utterances[-1].tokens)))]

        candidates = []
        pos_len = int(rng.integers(2, 6))
        positive = [fresh[k] for k in rng.integers(0, len(fresh), size=pos_len)]
        positive.insert(int(rng.integers(0, pos_len + 1)), keyword)
        candidates.append(positive)
        for _ in range(n_candidates - 1):
            length = int(rng.integers(3, 7))
            candidates.append([fresh[k] for k in rng.integers(0, len(fresh), size=length)])
        labels = [1] + [0] * (n_candidates - 1)
        order = rng.permutation(n_candidates)
        record = DialogueRecord(
            id=f"{id_prefix}{d}",
            utterances=utterances,
            candidates=[candidates[k] for k in order],
            labels=[labels[k] for k in order],
        )
        records.append(prepend_speaker_tokens(record))
    return records


def overlap_baseline_scores(record: DialogueRecord) -> list[float]:
    """Count of candidate tokens that appear in the final utterance."""
    final = {t for t in record.utterances[-1].tokens if not SPEAKER_RE.match(t)}
    return [float(sum(t in final for t in cand)) for cand in record.candidates]
