"""Corpus normalization, filtering, and vocabulary construction.

The corpus file format is one record per line: ``image_id<TAB>sentence``
(UTF-8).  Sentences are lowercased, stripped of every character that is
not a letter, digit, or whitespace, and split on whitespace.  Short and
near-duplicate sentences are dropped per image before any counting.
"""

import hashlib
import io
from collections import Counter

import numpy as np

from .errors import ConfigError, ParseError

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"
RESERVED = (BOS, EOS, UNK)
BOS_ID, EOS_ID, UNK_ID = 0, 1, 2

DEFAULT_MIN_LEN = 4
DEFAULT_OVERLAP_THRESHOLD = 0.9


def normalize(raw):
    """Lowercase, drop non-alphanumeric characters, split on whitespace."""
    kept = "".join(c for c in raw.lower() if c.isalnum() or c.isspace())
    return kept.split()


def unigram_overlap(tokens_a, tokens_b):
    """|set(a) & set(b)| / min(|set(a)|, |set(b)|); 0.0 if either is empty."""
    sa, sb = set(tokens_a), set(tokens_b)
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / min(len(sa), len(sb))


def filter_sentences(sentences, min_len=DEFAULT_MIN_LEN,
                     overlap_threshold=DEFAULT_OVERLAP_THRESHOLD):
    """Drop short and near-duplicate sentences from one image's sentence set.

    A sentence is dropped when it has fewer than ``min_len`` tokens, or when
    its unigram overlap ratio against any earlier *kept* sentence reaches
    ``overlap_threshold``.
    """
    if min_len < 1:
        raise ConfigError(f"min_len must be >= 1, got {min_len}")
    if not 0.0 < overlap_threshold <= 1.0:
        raise ConfigError(f"overlap_threshold must be in (0, 1], got {overlap_threshold}")
    kept = []
    for tokens in sentences:
        if len(tokens) < min_len:
            continue
        if any(unigram_overlap(tokens, prev) >= overlap_threshold for prev in kept):
            continue
        kept.append(tokens)
    return kept


class Vocabulary:
    """Word/id table with frequency counts and reserved boundary tokens.

    Ids 0..2 are ``<bos>``, ``<eos>``, ``<unk>``; real words follow in
    descending frequency order (ties lexicographic).  Counts for the
    boundary tokens record the number of sentences seen; the ``<unk>``
    count records the total occurrences of words dropped by ``min_count``.
    Those counts feed the log-frequency negative sampler.
    """

    def __init__(self, words, counts):
        if tuple(words[:3]) != RESERVED:
            raise ConfigError("vocabulary must start with the reserved tokens")
        self.words = list(words)
        self.counts = np.asarray(counts, dtype=np.int64)
        if len(self.words) != len(self.counts):
            raise ConfigError("words and counts disagree in length")
        self.word2id = {w: i for i, w in enumerate(self.words)}
        if len(self.word2id) != len(self.words):
            raise ConfigError("duplicate word in vocabulary")

    def __len__(self):
        return len(self.words)

    @property
    def size(self):
        return len(self.words)

    @property
    def n_reserved(self):
        return len(RESERVED)

    def id_of(self, word):
        return self.word2id.get(word, UNK_ID)

    def __contains__(self, word):
        return word in self.word2id

    def encode(self, tokens):
        """Token list -> id sequence with BOS prepended and EOS appended."""
        ids = [BOS_ID]
        ids.extend(self.word2id.get(tok, UNK_ID) for tok in tokens)
        ids.append(EOS_ID)
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids):
        return [self.words[i] for i in ids]

    def to_bytes(self):
        buf = io.StringIO()
        for word, count in zip(self.words, self.counts):
            buf.write(f"{word}\t{count}\n")
        return buf.getvalue().encode("utf-8")

    def sha256(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        words, counts = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError(path, lineno, "expected `word<TAB>count`")
                try:
                    count = int(parts[1])
                except ValueError:
                    raise ParseError(path, lineno, f"bad count {parts[1]!r}") from None
                words.append(parts[0])
                counts.append(count)
        if len(words) < len(RESERVED):
            raise ParseError(path, 1, "vocabulary file lacks reserved tokens")
        return cls(words, counts)


def build_vocab(corpus, min_count=1):
    """Count words over an iterable of token lists and keep the frequent ones.

    Words seen fewer than ``min_count`` times are folded into the ``<unk>``
    count.  Ids go to the highest-frequency words first.
    """
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    freq = Counter()
    n_sentences = 0
    for tokens in corpus:
        n_sentences += 1
        freq.update(tokens)
    kept = [(w, c) for w, c in freq.items() if c >= min_count]
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    unk_mass = sum(c for _, c in freq.items() if c < min_count)
    words = list(RESERVED) + [w for w, _ in kept]
    counts = [n_sentences, n_sentences, unk_mass] + [c for _, c in kept]
    return Vocabulary(words, counts)


def read_corpus(path):
    """Yield (image_id, raw_sentence) pairs from a corpus file."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ParseError(path, lineno, "expected `image_id<TAB>sentence`")
            image_id, sentence = line.split("\t", 1)
            if not image_id:
                raise ParseError(path, lineno, "empty image id")
            yield image_id, sentence


def prepare_corpus(path, min_len=DEFAULT_MIN_LEN,
                   overlap_threshold=DEFAULT_OVERLAP_THRESHOLD):
    """Read, normalize, and filter a corpus file.

    Returns a list of (image_id, tokens), images in first-appearance order
    and sentences in file order within each image.  Deduplication is scoped
    per image, so vocabulary building and training see exactly the same
    sentences.
    """
    groups = {}
    for image_id, sentence in read_corpus(path):
        groups.setdefault(image_id, []).append(normalize(sentence))
    records = []
    for image_id, group in groups.items():
        for tokens in filter_sentences(group, min_len, overlap_threshold):
            records.append((image_id, tokens))
    return records
