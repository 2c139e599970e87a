"""Topic-quality and downstream evaluation: NPMI, diversity, alignment, features."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import diffnet, ntm
from .corpus import Corpus, Vocabulary, vectorize
from .errors import DataError

Array = np.ndarray

DEFAULT_NPMI_EPS = 1e-12
DEFAULT_ALIGN_THRESHOLD = 0.5
DEFAULT_TOP_N = 10


@dataclass
class CooccurrenceStats:
    """Whole-document co-occurrence counts from a reference corpus."""
    doc_count: int
    word_doc_freq: dict[int, int]
    pair_doc_freq: dict[tuple[int, int], int] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "CooccurrenceStats":
        word_df: dict[int, int] = {}
        pair_df: dict[tuple[int, int], int] = {}
        D = 0
        for doc in corpus.documents:
            if doc.is_empty:
                continue
            D += 1
            words = sorted(doc.counts)
            for w in words:
                word_df[w] = word_df.get(w, 0) + 1
            for a, b in combinations(words, 2):
                pair_df[(a, b)] = pair_df.get((a, b), 0) + 1
        if D == 0:
            raise DataError("reference corpus has no nonempty documents")
        return cls(doc_count=D, word_doc_freq=word_df, pair_doc_freq=pair_df)

    def p_word(self, w: int) -> float:
        return self.word_doc_freq.get(w, 0) / self.doc_count

    def p_pair(self, a: int, b: int) -> float:
        key = (a, b) if a < b else (b, a)
        return self.pair_doc_freq.get(key, 0) / self.doc_count


def npmi(topics: list[list[int]], stats: CooccurrenceStats,
         eps: float = DEFAULT_NPMI_EPS) -> tuple[list[float], float]:
    """Per-topic mean NPMI over all top-word pairs, plus the overall mean.

    Pairs whose either word never occurs in the reference corpus contribute
    the metric minimum of -1.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if stats.doc_count <= 0:
        raise DataError("empty co-occurrence stats")
    per_topic = []
    for words in topics:
        vals = []
        for a, b in combinations(words, 2):
            pi, pj = stats.p_word(a), stats.p_word(b)
            if pi == 0.0 or pj == 0.0:
                vals.append(-1.0)
                continue
            pij = stats.p_pair(a, b)
            vals.append(math.log((pij + eps) / (pi * pj)) / (-math.log(pij + eps)))
        per_topic.append(sum(vals) / len(vals) if vals else 0.0)
    return per_topic, sum(per_topic) / len(per_topic)


def topic_diversity(topics: list[list[int]]) -> float:
    """Fraction of distinct words among all topics' top-N words."""
    total = sum(len(t) for t in topics)
    if total == 0:
        raise ValueError("topic_diversity: empty topic list")
    return len({w for t in topics for w in t}) / total


def _kl(p: Array, q: Array) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p: Array, q: Array) -> float:
    """Jensen-Shannon divergence, natural log; bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shape mismatch: {p.shape} vs {q.shape}")
    for name, d in (("p", p), ("q", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector (sum={d.sum()})")
    m = (p + q) / 2.0
    return 0.5 * _kl(p, m) + 0.5 * _kl(q, m)


def align_topics(A: list[Array], B: list[Array],
                 threshold: float = DEFAULT_ALIGN_THRESHOLD) -> list[tuple[int, int, float]]:
    """Competitive linking: repeatedly match the globally lowest-JS pair.

    Stops once the lowest remaining JS exceeds the threshold; ties break by
    (i, j) order. Emitted pairs have nondecreasing JS.
    """
    if A and B and A[0].shape != B[0].shape:
        raise DataError(
            f"topic distributions are over different vocabularies: "
            f"{A[0].shape} vs {B[0].shape}")
    scores = [[js_divergence(a, b) for b in B] for a in A]
    free_a = set(range(len(A)))
    free_b = set(range(len(B)))
    matching: list[tuple[int, int, float]] = []
    while free_a and free_b:
        best = None
        for i in sorted(free_a):
            for j in sorted(free_b):
                if best is None or scores[i][j] < best[2]:
                    best = (i, j, scores[i][j])
        if best[2] > threshold:
            break
        matching.append(best)
        free_a.discard(best[0])
        free_b.discard(best[1])
    return matching


def macro_f1(y_true: Array, y_pred: Array, n_classes: int) -> float:
    f1s = []
    for c in range(n_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def logistic_proxy_f1(features: Array, labels: Array, l2: float = 1e-4,
                      steps: int = 500, lr: float = 0.5,
                      holdout_frac: float = 0.2, seed: int = 0) -> float:
    """Multinomial logistic regression by full-batch gradient descent.

    Returns macro-F1 on a deterministic held-out split; a lightweight proxy
    for external classifiers fed from the exported feature table.
    """
    n, d = features.shape
    classes = sorted(set(labels.tolist()))
    y = np.array([classes.index(l) for l in labels.tolist()])
    C = len(classes)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = max(1, int(holdout_frac * n))
    test_idx, train_idx = order[:n_test], order[n_test:]
    Xtr, ytr = features[train_idx], y[train_idx]
    Xte, yte = features[test_idx], y[test_idx]
    W = np.zeros((d, C))
    b = np.zeros(C)
    onehot = np.eye(C)[ytr]
    for _ in range(steps):
        probs = diffnet.softmax(Xtr @ W + b)
        dlogits = (probs - onehot) / len(ytr)
        W -= lr * (Xtr.T @ dlogits + l2 * W)
        b -= lr * dlogits.sum(axis=0)
    pred = (Xte @ W + b).argmax(axis=1)
    return macro_f1(yte, pred, C)


def classification_features(corpus: Corpus, enc: ntm.EncoderParams,
                            csv_path: str | None = None,
                            seed: int = 0) -> tuple[Array, list, float | None]:
    """Mean-path theta_doc per document, optionally exported as CSV.

    Returns (features, labels, proxy macro-F1); the F1 is None when the
    corpus carries no labels.
    """
    theta, keep = ntm.doc_theta(corpus, enc)
    labels = [corpus.documents[i].label for i in keep]
    if csv_path is not None:
        T = theta.shape[1]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"theta_{t}" for t in range(T)] + ["label"])
            for row, label in zip(theta, labels):
                writer.writerow([repr(v) for v in row.tolist()] + ["" if label is None else label])
    if any(l is None for l in labels):
        return theta, labels, None
    f1 = logistic_proxy_f1(theta, np.array(labels, dtype=object), seed=seed)
    return theta, labels, f1


def similarity_probe(text_a: str, text_b: str, enc: ntm.EncoderParams,
                     vocab: Vocabulary) -> float:
    """Cosine similarity of the two texts' mean-path theta_doc vectors."""
    thetas = []
    for name, text in (("first", text_a), ("second", text_b)):
        doc = vectorize(text, vocab)
        if doc.is_empty:
            raise DataError(f"the {name} probe text has no in-vocabulary tokens: {text!r}")
        mu, _ = ntm.encode(doc, enc, vocab.size)
        thetas.append(diffnet.softmax(mu.reshape(1, -1)).ravel())
    a, b = thetas
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def save_topics(topics: list[list[int]], vocab: Vocabulary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for words in topics:
            fh.write(" ".join(vocab.words[w] for w in words) + "\n")


def load_topics(path: str, vocab: Vocabulary) -> list[list[int]]:
    topics = []
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read topics file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        words = line.split()
        if not words:
            continue
        row = []
        for w in words:
            if w not in vocab.index:
                raise DataError(f"{path}:{lineno}: word {w!r} is not in the vocabulary")
            row.append(vocab.index[w])
        topics.append(row)
    return topics
