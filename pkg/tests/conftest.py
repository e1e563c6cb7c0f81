import numpy as np
import pytest

from tagnets._alloc import tune_allocator

tune_allocator()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A featurized 64-clip synthetic corpus shared across test modules."""
    from tagnets.data import default_vocabulary, generate_synthetic
    from tagnets.frontend import MelConfig, featurize_directory

    root = tmp_path_factory.mktemp("corpus64")
    corpus = generate_synthetic(64, default_vocabulary(), np.random.default_rng(404), root)
    written, skipped, failures = featurize_directory(
        corpus.audio_dir, corpus.spectrogram_dir, MelConfig()
    )
    assert written == 64 and not failures
    return corpus
