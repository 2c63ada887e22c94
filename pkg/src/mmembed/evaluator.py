"""Triplet-ranking evaluation of word embeddings.

A triplet (base, positive, negative) counts as correct when the base
phrase is strictly closer in cosine distance to the positive than to the
negative.  Phrase vectors are the componentwise mean of their in-vocabulary
word vectors; phrases with no known words make the triplet a skip, not a
miss.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ParseError, ShapeError
from .textpipe import normalize


class Triplet(NamedTuple):
    base: str
    positive: str
    negative: str


def load_triplets(path):
    triplets = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, "expected `base<TAB>positive<TAB>negative`")
            if any(not p.strip() for p in parts):
                raise ParseError(path, lineno, "empty phrase in triplet")
            triplets.append(Triplet(*parts))
    return triplets


def write_triplets(path, triplets):
    with open(path, "w", encoding="utf-8") as f:
        for t in triplets:
            f.write(f"{t.base}\t{t.positive}\t{t.negative}\n")


class EmbeddingIndex:
    """Word -> vector lookup over a dense matrix."""

    def __init__(self, words, vectors):
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(words) != vectors.shape[0]:
            raise ShapeError(f"{len(words)} words vs {vectors.shape[0]} vector rows")
        self.words = list(words)
        self.vectors = vectors
        self.word2row = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self):
        return self.vectors.shape[1]

    def get(self, word):
        row = self.word2row.get(word)
        return None if row is None else self.vectors[row]

    @classmethod
    def from_params(cls, params, vocab):
        return cls(vocab.words, params.U_w)


def phrase_embedding(phrase, index):
    """Mean of the known word vectors of a phrase; None if none are known."""
    rows = [index.word2row[tok] for tok in normalize(phrase) if tok in index.word2row]
    if not rows:
        return None
    return index.vectors[rows].mean(axis=0)


def cosine_distance(a, b):
    """1 - cos(a, b), in [0, 2]; a zero vector is at distance 1 from anything."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_distance shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0
    sim = np.clip(float(a @ b) / (na * nb), -1.0, 1.0)
    return 1.0 - sim


@dataclass
class EvalReport:
    total: int = 0
    scored: int = 0
    correct: int = 0
    skipped: int = 0
    skip_reasons: Counter = field(default_factory=Counter)

    @property
    def precision(self):
        return self.correct / self.scored if self.scored else 0.0

    def render_text(self):
        lines = [
            f"triplets: {self.total} total, {self.scored} scored, {self.skipped} skipped",
            f"correct: {self.correct}",
            f"precision: {self.precision:.4f}",
        ]
        for reason, n in sorted(self.skip_reasons.items()):
            lines.append(f"  skipped ({reason}): {n}")
        return "\n".join(lines)

    def render_kv(self):
        lines = [
            f"total={self.total}",
            f"scored={self.scored}",
            f"skipped={self.skipped}",
            f"correct={self.correct}",
            f"precision={self.precision:.6f}",
        ]
        for reason, n in sorted(self.skip_reasons.items()):
            lines.append(f"skip.{reason}={n}")
        return "\n".join(lines)


def evaluate(triplets, index):
    """Score triplets against an embedding index.

    Ties in distance count as incorrect (the comparison is strict); any
    phrase with no in-vocabulary word skips the triplet with a reason.
    """
    report = EvalReport()
    for t in triplets:
        report.total += 1
        vecs = {name: phrase_embedding(text, index) for name, text in
                (("base", t.base), ("positive", t.positive), ("negative", t.negative))}
        missing = [name for name, v in vecs.items() if v is None]
        if missing:
            report.skipped += 1
            for name in missing:
                report.skip_reasons[f"{name}_no_known_words"] += 1
            continue
        report.scored += 1
        if cosine_distance(vecs["base"], vecs["positive"]) < \
           cosine_distance(vecs["base"], vecs["negative"]):
            report.correct += 1
    return report


def nearest_neighbors(index, word, k):
    """k closest words by cosine distance, excluding the query itself."""
    vec = index.get(word)
    if vec is None:
        return None
    norms = np.linalg.norm(index.vectors, axis=1)
    vnorm = np.linalg.norm(vec)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (index.vectors @ vec) / (norms * vnorm)
    sims = np.where(np.isfinite(sims), sims, -1.0)
    if vnorm == 0.0:
        sims[:] = -1.0
    order = np.argsort(-sims, kind="stable")
    out = []
    for row in order:
        if index.words[row] == word:
            continue
        out.append((index.words[row], 1.0 - float(np.clip(sims[row], -1.0, 1.0))))
        if len(out) == k:
            break
    return out
