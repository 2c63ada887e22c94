"""Per-image binary feature vectors and the synthetic ablation dataset.

Feature file format: ``image_id<TAB>hex_bits`` per line, 4 bits per hex
character, most significant bit first.  A plain 0/1 string of exactly
``dim`` characters is also accepted on input.  All vectors in one file
share the same dimension.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ParseError


class FeatureTable:
    """Immutable map image_id -> binary float64 vector."""

    def __init__(self, dim, vectors):
        self.dim = dim
        self._vectors = vectors

    def __len__(self):
        return len(self._vectors)

    def __contains__(self, image_id):
        return image_id in self._vectors

    def __getitem__(self, image_id):
        try:
            return self._vectors[image_id]
        except KeyError:
            raise DataError(f"no visual feature for image {image_id!r}") from None

    def ids(self):
        return self._vectors.keys()


def _bits_from_hex(field, dim):
    raw = bytes.fromhex(field)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    return bits[:dim]


def _parse_bits(field, dim, path, lineno):
    if dim % 4 == 0 and len(field) == dim // 4:
        try:
            return _bits_from_hex(field, dim)
        except ValueError:
            raise ParseError(path, lineno, f"malformed hex {field[:16]!r}...") from None
    if len(field) == dim and set(field) <= {"0", "1"}:
        return np.frombuffer(field.encode("ascii"), dtype=np.uint8) - ord("0")
    raise ParseError(
        path, lineno,
        f"bit field has wrong length ({len(field)} chars for dimension {dim})",
    )


def load_features(path, dim=None):
    """Load a feature file; the first line fixes ``dim`` unless given."""
    vectors = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected `image_id<TAB>bits`")
            image_id, field = parts
            if dim is None:
                if set(field) <= {"0", "1"}:
                    dim = len(field)
                else:
                    dim = 4 * len(field)
            if image_id in vectors:
                raise ParseError(path, lineno, f"duplicate image id {image_id!r}")
            bits = _parse_bits(field, dim, path, lineno)
            vectors[image_id] = bits.astype(np.float64)
    if dim is None:
        raise DataError(f"feature file {path} is empty")
    return FeatureTable(dim, vectors)


def write_features(path, dim, items):
    """Write (image_id, bits) pairs, hex-packed when ``dim`` allows it."""
    use_hex = dim % 8 == 0
    with open(path, "w", encoding="utf-8") as f:
        for image_id, bits in items:
            bits = np.asarray(bits, dtype=np.uint8)
            if bits.shape != (dim,):
                raise ConfigError(f"feature for {image_id!r} has shape {bits.shape}, want ({dim},)")
            if use_hex:
                field = np.packbits(bits).tobytes().hex()
            else:
                field = "".join("1" if b else "0" for b in bits)
            f.write(f"{image_id}\t{field}\n")


@dataclass
class SyntheticSpec:
    """Knobs for the desk-scale ablation dataset.

    Each concept owns a disjoint word cluster and a block of always-on
    feature bits; images add i.i.d. noise bits, and sentences mix concept
    words with a shared noise vocabulary.  Evaluation triplets pair two
    words of one concept against a word of another.
    """

    num_concepts: int = 10
    images_per_concept: int = 200
    sentences_per_image: int = 10
    words_per_concept: int = 20
    vocab_noise_words: int = 50
    num_triplets: int = 10000
    seed: int = 0
    concept_word_prob: float = 0.6
    min_sentence_len: int = 5
    max_sentence_len: int = 9
    block_bits: int = 12
    noise_bits: int = 64
    feature_dim: int | None = None

    def resolved_dim(self):
        needed = self.num_concepts * self.block_bits + self.noise_bits
        if self.feature_dim is None:
            return needed + (-needed) % 8
        if self.feature_dim < needed:
            raise ConfigError(
                f"feature_dim {self.feature_dim} too small for "
                f"{self.num_concepts} concept blocks of {self.block_bits} bits "
                f"plus {self.noise_bits} noise bits"
            )
        return self.feature_dim


def concept_words(spec):
    """Per-concept word clusters; pairwise disjoint by construction."""
    return [
        [f"c{c:02d}w{i:03d}" for i in range(spec.words_per_concept)]
        for c in range(spec.num_concepts)
    ]


def noise_words(spec):
    return [f"noise{i:03d}" for i in range(spec.vocab_noise_words)]


def generate_synthetic(spec, out_dir):
    """Write corpus.tsv, features.tsv, and triplets.tsv under ``out_dir``.

    Deterministic for a given spec: the same seed yields byte-identical
    files.  Returns the three paths.
    """
    if spec.num_concepts < 2:
        raise ConfigError("need at least 2 concepts to form triplets")
    if spec.words_per_concept < 2:
        raise ConfigError("need at least 2 words per concept to form positive pairs")
    if spec.min_sentence_len < 1 or spec.max_sentence_len < spec.min_sentence_len:
        raise ConfigError("bad sentence length range")
    if not 0.0 <= spec.concept_word_prob <= 1.0:
        raise ConfigError("concept_word_prob must be in [0, 1]")
    if spec.vocab_noise_words == 0 and spec.concept_word_prob < 1.0:
        raise ConfigError("noise words requested by concept_word_prob < 1 but none configured")

    dim = spec.resolved_dim()
    clusters = concept_words(spec)
    noise = noise_words(spec)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))

    os.makedirs(out_dir, exist_ok=True)
    corpus_path = os.path.join(out_dir, "corpus.tsv")
    features_path = os.path.join(out_dir, "features.tsv")
    triplets_path = os.path.join(out_dir, "triplets.tsv")

    feature_items = []
    with open(corpus_path, "w", encoding="utf-8") as corpus:
        for c in range(spec.num_concepts):
            cluster = clusters[c]
            for i in range(spec.images_per_concept):
                image_id = f"img_c{c:02d}_{i:04d}"
                bits = np.zeros(dim, dtype=np.uint8)
                bits[c * spec.block_bits:(c + 1) * spec.block_bits] = 1
                noise_lo = spec.num_concepts * spec.block_bits
                bits[noise_lo:noise_lo + spec.noise_bits] = rng.integers(
                    0, 2, size=spec.noise_bits, dtype=np.uint8)
                feature_items.append((image_id, bits))
                for _ in range(spec.sentences_per_image):
                    length = int(rng.integers(spec.min_sentence_len,
                                              spec.max_sentence_len + 1))
                    words = []
                    for _ in range(length):
                        if spec.concept_word_prob >= 1.0 or rng.random() < spec.concept_word_prob:
                            words.append(cluster[int(rng.integers(len(cluster)))])
                        else:
                            words.append(noise[int(rng.integers(len(noise)))])
                    corpus.write(f"{image_id}\t{' '.join(words)}\n")

    write_features(features_path, dim, feature_items)

    with open(triplets_path, "w", encoding="utf-8") as triplets:
        for i in range(spec.num_triplets):
            c = i % spec.num_concepts
            base, pos = rng.choice(spec.words_per_concept, size=2, replace=False)
            other = int(rng.integers(spec.num_concepts - 1))
            if other >= c:
                other += 1
            neg = int(rng.integers(spec.words_per_concept))
            triplets.write(
                f"{clusters[c][base]}\t{clusters[c][pos]}\t{clusters[other][neg]}\n")

    return corpus_path, features_path, triplets_path
