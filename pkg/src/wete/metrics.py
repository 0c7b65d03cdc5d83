"""Topic-quality and clustering metrics.

NPMI uses document-level co-occurrence counted on a reference corpus, with
additive smoothing gamma = 1/D on the joint probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp


@dataclass
class CooccurrenceStats:
    doc_freq: np.ndarray
    pair_doc_freq: sp.csr_matrix
    n_docs: int

    @classmethod
    def from_corpus(cls, corpus, terms=None):
        """Document and pair document frequencies.

        Pair counts cover all term pairs, or only pairs within ``terms`` when
        given (enough for coherence of a fixed set of top words).
        """
        X = corpus.bow_matrix() if hasattr(corpus, "bow_matrix") else sp.csr_matrix(corpus)
        B = (X > 0).astype(np.float64).tocsc()
        V = B.shape[1]
        if terms is not None:
            keep = np.unique(np.asarray(list(terms), dtype=np.int64))
            S = sp.csc_matrix((np.ones(keep.size), (keep, np.arange(keep.size))),
                              shape=(V, keep.size))
            Bk = B @ S
            inner = (Bk.T @ Bk).tocoo()
            pairs = sp.csr_matrix((inner.data, (keep[inner.row], keep[inner.col])), shape=(V, V))
        else:
            pairs = (B.T @ B).tocsr()
        doc_freq = np.asarray(B.sum(axis=0)).ravel()
        return cls(doc_freq, pairs, B.shape[0])

    def pair(self, a, b):
        return float(self.pair_doc_freq[a, b])


def npmi_pair(stats: CooccurrenceStats, a, b, smoothing=None):
    """Normalized PMI of terms ``a`` and ``b``, clipped to [-1, 1].

    ``smoothing`` defaults to 1/D. When the smoothed joint probability
    reaches 1 the pair is uninformative and 0 is returned.
    """
    D = stats.n_docs
    fa, fb = stats.doc_freq[a], stats.doc_freq[b]
    if fa <= 0 or fb <= 0:
        raise ValueError(f"terms {a} and {b} must both occur in the reference corpus")
    gamma = 1.0 / D if smoothing is None else smoothing
    joint = stats.pair(a, b) / D + gamma
    if joint >= 1.0:
        return 0.0
    if joint <= 0.0:
        return -1.0
    value = math.log(joint / ((fa / D) * (fb / D))) / -math.log(joint)
    return min(1.0, max(-1.0, value))


def topic_npmi(words, stats, smoothing=None):
    """Mean NPMI over all unordered pairs of ``words``."""
    words = list(words)
    pairs = list(combinations(words, 2))
    if not pairs:
        raise ValueError("a topic needs at least two words")
    return math.fsum(npmi_pair(stats, a, b, smoothing) for a, b in pairs) / len(pairs)


def topic_coherence(topics, stats, smoothing=None):
    if len(topics) == 0:
        raise ValueError("no topics given")
    return math.fsum(topic_npmi(t, stats, smoothing) for t in topics) / len(topics)


def _n_selected(p, K):
    if not 0 < p <= 1:
        raise ValueError("proportion must lie in (0, 1]")
    # guard against 0.3 * 10 == 3.0000000000000004
    return max(1, math.ceil(p * K - 1e-9))


def select_topics_by_npmi(scores, p):
    """Indices of the ceil(p*K) topics with highest score; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = _n_selected(p, scores.size)
    order = np.lexsort((np.arange(scores.size), -scores))
    return [int(i) for i in order[:n]]


def topic_diversity(topics, n_words=25):
    """Fraction of distinct words among the first ``n_words`` of every topic."""
    if len(topics) == 0:
        raise ValueError("no topics given")
    lists = [list(t)[:n_words] for t in topics]
    per_topic = min(n_words, max(len(l) for l in lists))
    unique = set().union(*map(set, lists))
    return len(unique) / (per_topic * len(lists))


def topic_quality(tc, td):
    return tc * td


def topic_specificity(Phi, p_w, floor=1e-12):
    """Mean over topics of KL(phi_k || p_w), natural log."""
    Phi = np.asarray(Phi, dtype=np.float64)
    p = np.maximum(np.asarray(p_w, dtype=np.float64), floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Phi > 0, Phi * (np.log(Phi) - np.log(p)[:, None]), 0.0)
    return float(terms.sum(axis=0).mean())


# ---------------------------------------------------------------------------
# clustering


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _sq_dists(X, C):
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, n, rng):
    J = X.shape[0]
    centers = [X[rng.integers(J)]]
    closest = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, n):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(J)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total))
            idx = min(idx, J - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(X, C, max_iters, tol):
    n = C.shape[0]
    prev = np.inf
    for _ in range(max_iters):
        d = _sq_dists(X, C)
        labels = d.argmin(axis=1)
        counts = np.bincount(labels, minlength=n)
        for empty in np.flatnonzero(counts == 0):
            # move the worst-served point (from a cluster that can spare it) into the empty one
            cost = d[np.arange(len(X)), labels]
            cost[counts[labels] <= 1] = -np.inf
            far = int(cost.argmax())
            counts[labels[far]] -= 1
            counts[empty] += 1
            labels[far] = empty
            d[far, empty] = 0.0
        C = np.vstack([X[labels == k].mean(axis=0) for k in range(n)])
        inertia = float(_sq_dists(X, C)[np.arange(len(X)), labels].sum())
        if np.isfinite(prev) and prev - inertia <= tol * prev:
            break
        prev = inertia
    return labels, C, inertia


def kmeans(points, n_clusters, seed=0, restarts=10, max_iters=300, tol=1e-6):
    """Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-d array")
    if X.shape[0] < n_clusters:
        raise ValueError(f"{X.shape[0]} points cannot form {n_clusters} clusters")
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, C, inertia = _lloyd(X, _kmeanspp(X, n_clusters, rng), max_iters, tol)
        if best is None or inertia < best.inertia:
            best = ClusterResult(labels, C, inertia)
    return best


def _contingency(assignments, labels):
    a = np.asarray(assignments)
    b = np.asarray(labels)
    if a.shape != b.shape:
        raise ValueError("assignments and labels differ in length")
    if a.size == 0:
        raise ValueError("empty input")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def purity(assignments, labels):
    table = _contingency(assignments, labels)
    return table.max(axis=1).sum() / table.sum()


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(assignments, labels):
    """Mutual information over the arithmetic mean of the two entropies."""
    table = _contingency(assignments, labels)
    n = table.sum()
    hc = _entropy(table.sum(axis=1), n)
    hl = _entropy(table.sum(axis=0), n)
    if hc == 0 and hl == 0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    return max(0.0, mi / ((hc + hl) / 2))


# ---------------------------------------------------------------------------
# reports


def format_report(report: dict) -> str:
    """``key=value`` lines; floats use 6 significant digits."""
    lines = []
    for key, value in report.items():
        text = f"{value:.6g}" if isinstance(value, float) else str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = float(value)
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"
