"""Analytic gradients against central differences on a tiny model.

Run: python3 demos/03_gradient_check.py
"""
import numpy as np

from wete import ModelConfig, WeTeModel, build_corpus
from wete.training import finite_diff_check, gradient

rng = np.random.default_rng(2)
corpus = build_corpus(["a b a c", "c d e", "b e e a"])
model = WeTeModel.initialize(corpus.vocab, ModelConfig(n_topics=2, embed_dim=3, mode="scratch",
                                                       trunk_width=4))
# move away from the tiny initial scale so every path carries signal
for name, value in model.params.items():
    model.params[name] = rng.normal(0.0, 0.6, size=value.shape)

docs = list(corpus.documents)
noise = rng.random((len(docs), 2))  # held fixed: the sample is a smooth function of the parameters

report = finite_diff_check(docs, model, noise, h=1e-5, tol=1e-4)
for name, err in report.max_rel_error.items():
    print(f"{name:18s} max rel err {err:.1e}")
print("ok:", report.ok)

# a wrong gradient is caught
doubled = {k: 2 * v for k, v in gradient(docs, model, noise).items()}
print("doubled gradient, worst rel err:", round(finite_diff_check(docs, model, noise, grads=doubled).worst, 3))
