"""Bidirectional conditional transport between a document's words and topics.

A document is a discrete distribution over the embeddings of its distinct
words (mass = count / length); a topic mixture puts mass ``theta_tilde[k]``
on topic embedding ``alpha[k]``. The point cost is ``exp(-<w, a>)``.

Repeated tokens are aggregated into one support point whose mass is the
token count over the document length. Every expression below is the
per-token one summed over duplicates, so the results are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

INNER_CLAMP = 30.0


@dataclass(frozen=True, eq=False)
class DocEmbedding:
    unique_ids: np.ndarray
    weights: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        v = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        ids = np.asarray(self.unique_ids, dtype=np.int64)
        if not (ids.shape[0] == w.shape[0] == v.shape[0]) or w.size == 0:
            raise ValueError("unique_ids, weights and vectors must be aligned and non-empty")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to one")
        object.__setattr__(self, "unique_ids", ids)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def from_document(cls, doc, E):
        """Build from a corpus Document and an embedding table (array or EmbeddingMatrix)."""
        table = getattr(E, "values", E)
        counts = doc.bow_counts.astype(np.float64)
        return cls(doc.bow_ids, counts / counts.sum(), table[doc.bow_ids])


@dataclass(frozen=True, eq=False)
class TopicMixture:
    theta_tilde: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta_tilde, dtype=np.float64)
        a = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        if t.shape[0] != a.shape[0]:
            raise ValueError("theta_tilde and alpha disagree on the number of topics")
        if np.any(t < 0) or not np.all(np.isfinite(t)) or not np.all(np.isfinite(a)):
            raise ValueError("theta_tilde must be finite and nonnegative")
        if abs(t.sum() - 1.0) > 1e-9:
            raise ValueError("theta_tilde must sum to one")
        object.__setattr__(self, "theta_tilde", t)
        object.__setattr__(self, "alpha", a)


def clamp_scores(s):
    """Inner products clamped to [-30, 30]; every CT quantity uses these."""
    return np.clip(s, -INNER_CLAMP, INNER_CLAMP)


def point_cost(w, a):
    """exp(-<w, a>), with the inner product clamped to [-30, 30]."""
    return float(np.exp(-clamp_scores(float(np.dot(w, a)))))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def topic_to_word_probs(doc: DocEmbedding, a):
    """Distribution over the document's distinct words given topic embedding ``a``."""
    return softmax(clamp_scores(doc.vectors @ np.asarray(a, dtype=np.float64))
                   + np.log(doc.weights))


def word_to_topic_probs(w, mix: TopicMixture):
    """Distribution over topics given word embedding ``w``, weighted by the mixture."""
    if not np.any(mix.theta_tilde > 0):
        raise ValueError("topic mixture has no mass")
    return softmax(clamp_scores(mix.alpha @ np.asarray(w, dtype=np.float64))
                   + _log(mix.theta_tilde))


def ct_cost_naive(doc: DocEmbedding, mix: TopicMixture) -> float:
    """Both transport directions by explicit summation over (word, topic) pairs."""
    N, K = len(doc.weights), len(mix.theta_tilde)
    cost = np.array([[point_cost(doc.vectors[i], mix.alpha[k]) for k in range(K)]
                     for i in range(N)])
    topic_to_doc = 0.0
    for k in range(K):
        pi = topic_to_word_probs(doc, mix.alpha[k])
        for i in range(N):
            topic_to_doc += mix.theta_tilde[k] * cost[i, k] * pi[i]
    doc_to_topic = 0.0
    for i in range(N):
        pi = word_to_topic_probs(doc.vectors[i], mix)
        for k in range(K):
            doc_to_topic += doc.weights[i] * cost[i, k] * pi[k]
    return float(topic_to_doc + doc_to_topic)


def ct_terms_from_scores(scores, log_weights, log_theta):
    """Closed-form CT pieces from an N x K matrix of inner products.

    Returns ``(topic_to_doc, doc_to_topic, A, B)`` where
    ``A[k] = logsumexp_i(scores[i, k] + log_weights[i])`` and
    ``B[i] = logsumexp_k(scores[i, k] + log_theta[k])``; the two
    directions are ``sum_k exp(log_theta[k] - A[k])`` and
    ``sum_i exp(log_weights[i] - B[i])``.
    """
    A = logsumexp(scores + log_weights[:, None], axis=0)
    B = logsumexp(scores + log_theta[None, :], axis=1)
    return float(np.exp(log_theta - A).sum()), float(np.exp(log_weights - B).sum()), A, B


def ct_cost_closed(doc: DocEmbedding, mix: TopicMixture) -> float:
    """The same cost as :func:`ct_cost_naive`, evaluated in log space."""
    scores = clamp_scores(doc.vectors @ mix.alpha.T)
    t2d, d2t, _, _ = ct_terms_from_scores(scores, np.log(doc.weights), _log(mix.theta_tilde))
    return t2d + d2t


def batch_ct_cost(docs, mixes) -> float:
    if len(docs) != len(mixes):
        raise ValueError("docs and mixes must be aligned")
    if not docs:
        raise ValueError("empty batch")
    # fsum is exactly rounded, so the mean does not depend on evaluation order
    return math.fsum(ct_cost_closed(d, m) for d, m in zip(docs, mixes)) / len(docs)
