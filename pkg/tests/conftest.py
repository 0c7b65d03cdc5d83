import numpy as np
import pytest

from wete import ModelConfig, WeTeModel, build_corpus

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def two_sided_lines(n_docs=500, words_per_side=20, doc_len=30, seed=0):
    """Documents drawn from one of two disjoint vocabularies; returns (lines, sides)."""
    rng = np.random.default_rng(seed)
    sides = rng.integers(2, size=n_docs)
    lines = [" ".join(f"{'ab'[s]}{rng.integers(words_per_side)}" for _ in range(doc_len))
             for s in sides]
    return lines, sides


@pytest.fixture
def toy_corpus():
    lines, _ = two_sided_lines(n_docs=60, words_per_side=6, doc_len=12, seed=3)
    return build_corpus(lines)


def random_tiny_model(rng, V=None, H=None, K=None, width=4, mode="scratch", scale=0.6):
    """A small model with every parameter drawn N(0, scale) and a matching corpus."""
    V = V or int(rng.integers(3, 9))
    H = H or int(rng.integers(1, 5))
    K = K or int(rng.integers(1, 4))
    lines = [" ".join(f"w{rng.integers(V)}" for _ in range(rng.integers(1, 8)))
             for _ in range(int(rng.integers(1, 5)))]
    corpus = build_corpus(lines)
    cfg = ModelConfig(n_topics=K, embed_dim=H, mode="scratch", trunk_width=width,
                      seed=int(rng.integers(1000)))
    model = WeTeModel.initialize(corpus.vocab, cfg)
    for name, value in model.params.items():
        model.params[name] = rng.normal(0.0, scale, size=value.shape)
    if mode == "fixed":
        model.config.mode = "fixed"
        model.word_trainable[:] = False
    return corpus, model
