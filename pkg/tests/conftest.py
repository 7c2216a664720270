import numpy as np
import pytest
import torch

from glyphflow.glyphgen import Alphabet, CorpusConfig

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus() -> CorpusConfig:
    return CorpusConfig(alphabet_size=16, n_styles=8, n_scripts=5, n_slots=3, slot_px=16)


@pytest.fixture(scope="session")
def small_alphabet(small_corpus) -> Alphabet:
    return Alphabet(small_corpus.alphabet_size, small_corpus.glyph_seed)


@pytest.fixture()
def rng(request) -> np.random.Generator:
    # stable per-test stream: nodeid hashes change only if the test moves
    return np.random.default_rng(abs(hash(request.node.nodeid)) % 2**32)
