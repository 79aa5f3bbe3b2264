"""Narrative corpora: loading, tokenization, vocabularies, encoding, splits and statistics.

A corpus file is UTF-8 JSON lines, one narrative per line::

    {"id": "r1", "category": "recipes",
     "steps": [{"text": "Heat the oil.", "feature": [0.1, ...]},
               {"text": "Add onions.", "feature_file": "feats/r1_1.nif"}]}

``feature_file`` paths are resolved relative to the corpus file and hold
``b"NIF1"``, a little-endian u32 dimension, then that many float32 values.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

FEATURE_MAGIC = b"NIF1"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusError(ValueError):
    """Malformed corpus input."""


class FeatureSource(str, Enum):
    FILE = "file"
    INLINE = "inline"
    SYNTHETIC = "synthetic"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and isolate each punctuation character."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Step:
    text: str
    tokens: tuple[str, ...]
    feature: np.ndarray
    feature_source: FeatureSource = FeatureSource.INLINE

    @classmethod
    def from_text(cls, text: str, feature, source: FeatureSource = FeatureSource.INLINE) -> "Step":
        return cls(text, tuple(tokenize(text)), np.asarray(feature, dtype=np.float64), source)


@dataclass(frozen=True)
class Narrative:
    id: str
    category: str
    steps: tuple[Step, ...]

    def __post_init__(self):
        if not self.steps:
            raise CorpusError(f"narrative {self.id!r} has no steps")
        dims = {s.feature.shape for s in self.steps}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise CorpusError(f"narrative {self.id!r}: steps disagree on feature dimension {sorted(dims)}")

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def d_img(self) -> int:
        return self.steps[0].feature.shape[0]

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.feature for s in self.steps])


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def write_feature_file(path: str | Path, feature: np.ndarray) -> None:
    vec = np.asarray(feature, dtype="<f4").reshape(-1)
    Path(path).write_bytes(FEATURE_MAGIC + struct.pack("<I", vec.size) + vec.tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC or len(raw) < 8:
        raise CorpusError(f"{path}: not a feature file")
    (dim,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 4 * dim:
        raise CorpusError(f"{path}: expected {dim} floats, file holds {(len(raw) - 8) / 4:g}")
    return np.frombuffer(raw[8:], dtype="<f4").astype(np.float64)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _parse_record(obj, lineno: int, base: Path) -> Narrative:
    if not isinstance(obj, dict) or not isinstance(obj.get("steps"), list):
        raise CorpusError(f"line {lineno}: record must be an object with a 'steps' list")
    nid = str(obj.get("id", f"line{lineno}"))
    steps = []
    for k, s in enumerate(obj["steps"]):
        if not isinstance(s, dict) or not isinstance(s.get("text", ""), str):
            raise CorpusError(f"line {lineno}: step {k} of narrative {nid!r} is malformed")
        text = s.get("text", "")
        if "feature" in s:
            try:
                feat = np.asarray(s["feature"], dtype=np.float64)
            except (TypeError, ValueError):
                raise CorpusError(f"line {lineno}: narrative {nid!r} step {k} has a non-numeric feature") from None
            source = FeatureSource.INLINE
        elif "feature_file" in s:
            fpath = base / s["feature_file"]
            if not fpath.exists():
                raise CorpusError(f"narrative {nid!r} step {k}: feature file {fpath} not found")
            feat = read_feature_file(fpath)
            source = FeatureSource.FILE
        else:
            raise CorpusError(f"line {lineno}: narrative {nid!r} step {k} has no feature")
        if feat.ndim != 1 or feat.size == 0:
            raise CorpusError(f"line {lineno}: narrative {nid!r} step {k} feature must be a flat vector")
        steps.append(Step(text, tuple(tokenize(text)), feat, source))
    if not steps:
        raise CorpusError(f"line {lineno}: narrative {nid!r} has no steps")
    try:
        return Narrative(nid, str(obj.get("category", "stories")), tuple(steps))
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Narrative]:
    """Load narratives in file order. ``format`` is ``"jsonl"`` or ``"json"`` (a list)."""
    path = Path(path)
    base = path.parent
    text = path.read_text(encoding="utf-8")
    if format == "jsonl":
        records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    elif format == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, list):
            raise CorpusError("line 1: JSON corpus must be a list of narratives")
        records = list(enumerate(data, start=1))
    else:
        raise CorpusError(f"unknown corpus format {format!r}")
    corpus = [_parse_record(obj, lineno, base) for lineno, obj in records]
    if corpus:
        d = corpus[0].d_img
        for n in corpus:
            if n.d_img != d:
                raise CorpusError(f"narrative {n.id!r}: feature dimension {n.d_img} != corpus dimension {d}")
    return corpus


def save_corpus(path: str | Path, corpus: Iterable[Narrative]) -> None:
    """Write narratives as JSON lines with inline features."""
    with open(path, "w", encoding="utf-8") as fh:
        for n in corpus:
            rec = {
                "id": n.id,
                "category": n.category,
                "steps": [{"text": s.text, "feature": [float(x) for x in s.feature]} for s in n.steps],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# vocabulary and encoding
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the four special tokens")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip_special and i in (PAD, BOS, EOS):
                continue
            out.append(self.id_to_token[i])
        return out

    def to_json(self) -> str:
        return json.dumps({"tokens": self.id_to_token}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(list(json.loads(text)["tokens"]))


def build_vocabulary(corpus: Sequence[Narrative], min_freq: int = 1, max_size: int | None = None) -> Vocabulary:
    """Frequency-ranked vocabulary (ties broken lexicographically) after the specials."""
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts = Counter(t for n in corpus for s in n.steps for t in s.tokens)
    ranked = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(SPECIAL_TOKENS))]
    return Vocabulary(list(SPECIAL_TOKENS) + ranked)


@dataclass(frozen=True)
class EncodedNarrative:
    id: str
    feature_matrix: np.ndarray  # (n_steps, d_img)
    token_ids: np.ndarray       # (n_steps, max_words + 2)
    step_lengths: np.ndarray    # (n_steps,)

    @property
    def n_steps(self) -> int:
        return self.feature_matrix.shape[0]


def encode_narrative(narrative: Narrative, vocab: Vocabulary, max_steps: int = 5,
                     max_words: int = 20) -> EncodedNarrative:
    steps = narrative.steps[:max_steps]
    ids = np.full((len(steps), max_words + 2), PAD, dtype=np.int64)
    lengths = np.zeros(len(steps), dtype=np.int64)
    for k, s in enumerate(steps):
        words = vocab.encode(s.tokens[:max_words])
        ids[k, 0] = BOS
        ids[k, 1:len(words) + 1] = words
        ids[k, len(words) + 1] = EOS
        lengths[k] = len(words)
    feats = np.stack([s.feature for s in steps])
    return EncodedNarrative(narrative.id, feats, ids, lengths)


# ---------------------------------------------------------------------------
# splits and statistics
# ---------------------------------------------------------------------------

def split_corpus(corpus: Sequence[Narrative], ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                 seed: int = 0) -> tuple[list[Narrative], list[Narrative], list[Narrative]]:
    if not corpus:
        raise CorpusError("cannot split an empty corpus")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(corpus)
    order = np.random.default_rng(seed).permutation(n)
    # small slack so e.g. 0.7 * 10 floors to 7, not 6
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    pick = [corpus[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]


@dataclass(frozen=True)
class UniqueWordFractions:
    fractions: tuple[float, ...]
    mean: float
    empty_steps: tuple[int, ...] = ()


def unique_word_fraction(narrative: Narrative) -> UniqueWordFractions:
    """Share of each step's word types that occur in no other step."""
    types = [set(s.tokens) for s in narrative.steps]
    if len(types) == 1:
        fracs = [1.0 if types[0] else 0.0]
    else:
        fracs = []
        for k, own in enumerate(types):
            if not own:
                fracs.append(0.0)
                continue
            rest = set().union(*(t for j, t in enumerate(types) if j != k))
            fracs.append(len(own - rest) / len(own))
    empty = tuple(k for k, t in enumerate(types) if not t)
    return UniqueWordFractions(tuple(fracs), float(np.mean(fracs)), empty)


@dataclass(frozen=True)
class StatsReport:
    n_narratives: int
    n_steps_total: int
    avg_steps: float
    avg_words_per_step: float
    vocab_size: int
    avg_unique_word_fraction: float
    n_words_total: int = 0

    def to_dict(self) -> dict:
        return {
            "n_narratives": self.n_narratives,
            "n_steps_total": self.n_steps_total,
            "n_words_total": self.n_words_total,
            "avg_steps": self.avg_steps,
            "avg_words_per_step": self.avg_words_per_step,
            "vocab_size": self.vocab_size,
            "avg_unique_word_fraction": self.avg_unique_word_fraction,
        }


def corpus_stats(corpus: Sequence[Narrative]) -> StatsReport:
    if not corpus:
        raise CorpusError("cannot compute statistics of an empty corpus")
    n_steps = sum(n.n_steps for n in corpus)
    n_words = sum(len(s.tokens) for n in corpus for s in n.steps)
    types = {t for n in corpus for s in n.steps for t in s.tokens}
    uniq = [unique_word_fraction(n).mean for n in corpus]
    return StatsReport(
        n_narratives=len(corpus),
        n_steps_total=n_steps,
        avg_steps=n_steps / len(corpus),
        avg_words_per_step=n_words / n_steps,
        vocab_size=len(types),
        avg_unique_word_fraction=float(np.mean(uniq)),
        n_words_total=n_words,
    )
