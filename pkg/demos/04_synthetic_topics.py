"""Recover two planted topics from scratch.

Every document draws its tokens from one of two disjoint 20-word
vocabularies; a 2-topic model should find them.

Run: python3 demos/04_synthetic_topics.py
"""
import numpy as np

from wete import ModelConfig, WeTeModel, build_corpus
from wete.corpus import attach_labels
from wete.evaluation import evaluate_model
from wete.metrics import format_report
from wete.model import top_words
from wete.training import TrainConfig, theta_matrix, train

rng = np.random.default_rng(0)
sides = rng.integers(2, size=500)
lines = [" ".join(f"{'ab'[s]}{rng.integers(20)}" for _ in range(30)) for s in sides]
corpus = attach_labels(build_corpus(lines), ["ab"[s] for s in sides])

model = WeTeModel.initialize(corpus.vocab, ModelConfig(n_topics=2, embed_dim=8, mode="scratch"))
_, history = train(corpus, model, TrainConfig(batch_size=25, epochs=50, lr=0.01))
print("loss by epoch:", " ".join(f"{r.loss:.3f}" for r in history[:5]), "...", f"{history[-1].loss:.3f}")

Phi = model.topic_word_dist()
for k in range(2):
    print(f"topic {k}:", " ".join(corpus.vocab.terms[i] for i in top_words(Phi, k, 10)))

theta = theta_matrix(corpus, model)
print("first documents' proportions\n", np.round(theta[:5], 3), "\nsides", sides[:5])

print(format_report(evaluate_model(model, corpus)), end="")
