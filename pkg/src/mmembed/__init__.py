"""mmembed: multimodal word embeddings trained from image-described text.

Trains GRU language models (optionally conditioned on per-image binary
visual features) with a sampled softmax over large vocabularies, mines
evaluation triplets from search clickthrough logs, and scores embedding
tables by triplet-ranking precision.
"""

__version__ = "0.1.0"

from .backends import BACKEND  # noqa: F401  (which kernel implementation is active)
