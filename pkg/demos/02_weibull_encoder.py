"""Weibull draws and the encoder that produces their parameters.

Run: python3 demos/02_weibull_encoder.py
"""
import math

import numpy as np

from wete import ModelConfig, WeTeModel, build_corpus
from wete.model import WeibullParams, encode, infer_theta, normalize_theta, sample_theta

rng = np.random.default_rng(1)

# theta = scale * (-log(1 - u)) ** (1 / shape): a differentiable function of (shape, scale)
for k, lam in [(0.5, 1.0), (1.0, 1.0), (2.0, 3.0)]:
    u = rng.random(100_000)
    draws = sample_theta(WeibullParams(np.full(u.size, k), np.full(u.size, lam)), u)
    print(f"k={k} lam={lam}: sample mean {draws.mean():.4f}, exact {lam * math.gamma(1 + 1 / k):.4f}")

corpus = build_corpus(["apple banana apple", "banana cherry", "cherry cherry date"])
model = WeTeModel.initialize(corpus.vocab, ModelConfig(n_topics=3, embed_dim=4, mode="scratch",
                                                       trunk_width=8))
X = corpus.bow_matrix().toarray()
p = encode(X, model.params)
print("shape\n", np.round(p.shape, 3))
print("scale\n", np.round(p.scale, 3))

# one stochastic draw per document vs the deterministic (mean-based) proportions
print("sampled\n", np.round(normalize_theta(sample_theta(p, rng.random(p.shape.shape))), 3))
print("inferred\n", np.round(np.array([infer_theta(x, model) for x in X]), 3))
