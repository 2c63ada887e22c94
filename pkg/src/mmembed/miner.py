"""Mining evaluation triplets from search clickthrough logs.

Per query: score each annotation by the total clicks of the items carrying
it, keep the top ranked ones, drop any that shares a stemmed word with the
query, and pair each survivor with a random negative phrase that shares no
stemmed word with either side of the pair.  A separate vote-aggregation
pass keeps a crowd-checked triplet only on a strict majority for the
original labels.
"""

import hashlib
import logging
from collections import Counter
from typing import NamedTuple

import numpy as np

from .errors import MiningError, ParseError
from .evaluator import Triplet
from .stemmer import stem
from .textpipe import normalize

log = logging.getLogger(__name__)

MAX_NEGATIVE_REJECTS = 1000

VOTE_AGREE = "A"          # agrees with the original positive/negative labels
VOTE_DISAGREE = "D"
VOTE_BOTH_RELATED = "R"
VOTE_BOTH_UNRELATED = "U"
VOTE_KINDS = (VOTE_AGREE, VOTE_DISAGREE, VOTE_BOTH_RELATED, VOTE_BOTH_UNRELATED)


class ClickRecord(NamedTuple):
    query: str
    item_id: str
    clicks: int


class VoteRecord(NamedTuple):
    triplet: Triplet
    votes: tuple


def load_click_log(path):
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, "expected `query<TAB>item_id<TAB>clicks`")
            try:
                clicks = int(parts[2])
            except ValueError:
                raise ParseError(path, lineno, f"bad click count {parts[2]!r}") from None
            if clicks < 0:
                raise ParseError(path, lineno, "negative click count")
            records.append(ClickRecord(parts[0], parts[1], clicks))
    return records


def load_annotations(path):
    table = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].strip():
                raise ParseError(path, lineno, "expected `item_id<TAB>annotation`")
            table.setdefault(parts[0], []).append(parts[1])
    return table


def load_pool(path):
    with open(path, encoding="utf-8") as f:
        pool = [line.rstrip("\n") for line in f if line.strip()]
    return pool


def stemmed_words(phrase):
    return {stem(tok) for tok in normalize(phrase)}


def score_annotations(query, records, annotations):
    """Rank a query's candidate annotations by aggregated item clicks.

    Items appearing in the query's log rows define the candidate set; an
    annotation scores the summed clicks of every item that carries it.
    Descending score, ties broken lexicographically.
    """
    item_clicks = Counter()
    for rec in records:
        if rec.query == query:
            item_clicks[rec.item_id] += rec.clicks
    scores = Counter()
    for item_id in item_clicks:
        for annotation in set(annotations.get(item_id, ())):
            scores[annotation] += item_clicks[item_id]
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def filter_overlap(query, candidates):
    """Drop candidates sharing any stemmed word with the query."""
    query_stems = stemmed_words(query)
    return [c for c in candidates if not (stemmed_words(c) & query_stems)]


def sample_negative(base, positive, pool, rng, max_rejects=MAX_NEGATIVE_REJECTS):
    """Uniform draw from the pool, rejecting stemmed-word overlap with
    either phrase of the pair."""
    if not pool:
        raise MiningError("negative pool is empty")
    forbidden = stemmed_words(base) | stemmed_words(positive)
    for _ in range(max_rejects):
        candidate = pool[int(rng.integers(len(pool)))]
        if not (stemmed_words(candidate) & forbidden):
            return candidate
    raise MiningError(
        f"no acceptable negative for ({base!r}, {positive!r}) "
        f"after {max_rejects} draws")


def _query_rng(seed, query):
    digest = hashlib.sha256(query.encode("utf-8")).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest[:8], "big")]))


def mine(click_log, annotations, pool, top_k=20, seed=0):
    """Build triplets for every query in the log; pure in (inputs, seed).

    Queries are processed in sorted order and each gets its own random
    stream, so the output does not depend on log order or parallelism.
    """
    triplets = []
    for query in sorted({rec.query for rec in click_log}):
        ranked = score_annotations(query, click_log, annotations)
        positives = filter_overlap(query, [a for a, _ in ranked[:top_k]])
        rng = _query_rng(seed, query)
        for positive in positives:
            negative = sample_negative(query, positive, pool, rng)
            triplets.append(Triplet(query, positive, negative))
    return triplets


def load_votes(path):
    """Parse `base<TAB>positive<TAB>negative<TAB>v1,v2,...` vote records."""
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(
                    path, lineno, "expected `base<TAB>positive<TAB>negative<TAB>votes`")
            votes = tuple(v.strip() for v in parts[3].split(","))
            bad = [v for v in votes if v not in VOTE_KINDS]
            if bad:
                raise ParseError(
                    path, lineno,
                    f"unknown vote {bad[0]!r} (valid: {','.join(VOTE_KINDS)})")
            records.append((lineno, VoteRecord(Triplet(*parts[:3]), votes)))
    return records


def aggregate_votes(records):
    """Keep triplets where strictly more than half the votes agree with the
    original labels.  Records with fewer than 3 or more than 5 votes are
    rejected with a diagnostic.  Returns (accepted, diagnostics)."""
    accepted, diagnostics = [], []
    for lineno, rec in records:
        n = len(rec.votes)
        if not 3 <= n <= 5:
            diagnostics.append((lineno, f"{n} votes (need 3-5), record rejected"))
            continue
        agree = sum(1 for v in rec.votes if v == VOTE_AGREE)
        if agree * 2 > n:
            accepted.append(rec.triplet)
    return accepted, diagnostics
