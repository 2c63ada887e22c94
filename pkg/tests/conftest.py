import numpy as np
import pytest

from mmembed.textpipe import build_vocab


@pytest.fixture
def tiny_vocab():
    """12 real words (w00..w11) plus the reserved tokens; varied counts."""
    words = [f"w{i:02d}" for i in range(12)]
    corpus = [words[:6], words[3:9], words[6:12], words[::2], words[1::3]]
    return build_vocab(corpus, min_count=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
