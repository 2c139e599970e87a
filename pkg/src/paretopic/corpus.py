"""Corpus ingestion: tokenization, vocabulary building, bag-of-words vectors."""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[0-9a-z]+")
_DIGITS_RE = re.compile(r"^[0-9]+$")

DEFAULT_MIN_DF = 5
DEFAULT_MAX_DF_FRAC = 0.7
DEFAULT_MAX_SIZE = 2000


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop short and pure-digit tokens."""
    toks = _TOKEN_RE.findall(text.lower())
    return [t for t in toks if len(t) >= 2 and not _DIGITS_RE.match(t)]


@dataclass
class Vocabulary:
    words: list[str]
    df: list[int]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise DataError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.words)

    def content_hash(self) -> str:
        payload = "\n".join(self.words).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"words": self.words, "df": self.df}, fh)

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read vocabulary file {path}: {exc}") from exc
        if "words" not in obj or "df" not in obj:
            raise DataError(f"vocabulary file {path} missing 'words'/'df' fields")
        return cls(words=list(obj["words"]), df=list(obj["df"]))


@dataclass
class BowDocument:
    counts: dict[int, int]
    label: object = None
    raw_text: str | None = None

    @property
    def is_empty(self) -> bool:
        return not self.counts

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class Corpus:
    documents: list[BowDocument]
    vocabulary: Vocabulary
    split_tag: str = "train"

    def __len__(self) -> int:
        return len(self.documents)

    def trainable_indices(self) -> list[int]:
        return [i for i, d in enumerate(self.documents) if not d.is_empty]


def build_vocabulary(texts: list[str], min_df: int = DEFAULT_MIN_DF,
                     max_df_frac: float = DEFAULT_MAX_DF_FRAC,
                     max_size: int = DEFAULT_MAX_SIZE) -> Vocabulary:
    """Document-frequency filtered vocabulary.

    Keeps tokens with min_df <= df <= max_df_frac * len(texts), truncated to
    the max_size highest-df tokens. Order is df descending with lexicographic
    tiebreak, so the result is independent of input order.
    """
    if not texts:
        raise DataError("build_vocabulary: empty text list")
    if not (0.0 < max_df_frac <= 1.0):
        raise DataError(f"max_df_frac must be in (0, 1], got {max_df_frac}")
    df: Counter[str] = Counter()
    for text in texts:
        df.update(set(tokenize(text)))
    ceiling = max_df_frac * len(texts)
    kept = [(w, c) for w, c in df.items() if min_df <= c <= ceiling]
    if not kept:
        raise DataError(
            f"vocabulary empty after filtering: min_df={min_df}, "
            f"max_df_frac={max_df_frac} over {len(texts)} documents")
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    kept = kept[:max_size]
    return Vocabulary(words=[w for w, _ in kept], df=[c for _, c in kept])


def vectorize(text: str, vocab: Vocabulary, label: object = None) -> BowDocument:
    """Count in-vocabulary tokens; OOV tokens are dropped silently.

    A document with zero in-vocabulary tokens comes back with empty counts
    (is_empty); the trainer skips those.
    """
    counts: dict[int, int] = {}
    for tok in tokenize(text):
        idx = vocab.index.get(tok)
        if idx is not None:
            counts[idx] = counts.get(idx, 0) + 1
    return BowDocument(counts=counts, label=label, raw_text=text)


def load_corpus(path: str, max_malformed_frac: float = 0.01) -> list[tuple[str, object]]:
    """Read a JSONL corpus of {"text": ..., "label": optional}.

    Malformed lines are collected and reported with their line numbers;
    the whole load fails if more than max_malformed_frac of lines are bad.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc
    entries: list[tuple[str, object]] = []
    malformed: list[int] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            malformed.append(lineno)
            continue
        if not isinstance(obj, dict) or "text" not in obj:
            malformed.append(lineno)
            continue
        entries.append((obj["text"], obj.get("label")))
    total = len(entries) + len(malformed)
    if malformed:
        log.warning("%s: %d malformed line(s) at %s", path, len(malformed), malformed[:20])
        if len(malformed) > max_malformed_frac * total:
            raise DataError(
                f"{path}: {len(malformed)}/{total} malformed JSONL lines "
                f"(lines {malformed[:20]}{'...' if len(malformed) > 20 else ''})")
    if not entries:
        log.warning("%s: corpus file is empty", path)
    return entries


def make_corpus(entries: list[tuple[str, object]], vocab: Vocabulary,
                split_tag: str = "train") -> Corpus:
    docs = [vectorize(text, vocab, label=label) for text, label in entries]
    n_empty = sum(d.is_empty for d in docs)
    if n_empty:
        log.warning("%d/%d documents have no in-vocabulary tokens and will be "
                    "skipped during training", n_empty, len(docs))
    return Corpus(documents=docs, vocabulary=vocab, split_tag=split_tag)
