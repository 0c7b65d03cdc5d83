"""Full evaluation of a trained model: topic quality on a reference corpus, clustering on θ̃."""

from __future__ import annotations

import numpy as np

from .metrics import (
    CooccurrenceStats,
    kmeans,
    nmi,
    purity,
    select_topics_by_npmi,
    topic_diversity,
    topic_npmi,
    topic_specificity,
)
from .model import WeTeModel, top_words
from .training import theta_matrix

PROPORTIONS = tuple(range(10, 101, 10))


def evaluate_model(model: WeTeModel, reference, test=None, n_clusters=None, restarts=10,
                   seed=0, coherence_words=10, diversity_words=25):
    """Metric report as an ordered dict of floats.

    Coherence and specificity use ``reference`` (the training corpus).
    ``tc_pXX``/``td_pXX`` are computed on the XX% of topics with the highest
    NPMI; ``td`` and ``tq`` refer to all topics. Clustering keys appear only
    when the clustered corpus (``test``, else ``reference``) carries labels;
    ``n_clusters`` defaults to the number of label classes.
    """
    Phi = model.topic_word_dist()
    V, K = Phi.shape
    n_tc, n_td = min(coherence_words, V), min(diversity_words, V)
    tc_lists = [top_words(Phi, k, n_tc) for k in range(K)]
    td_lists = [top_words(Phi, k, n_td) for k in range(K)]
    stats = CooccurrenceStats.from_corpus(reference, terms={w for t in tc_lists for w in t})
    scores = np.array([topic_npmi(t, stats) for t in tc_lists])

    report = {}
    for pct in PROPORTIONS:
        chosen = select_topics_by_npmi(scores, pct / 100)
        report[f"tc_p{pct}"] = float(np.mean(scores[chosen]))
    for pct in PROPORTIONS:
        chosen = select_topics_by_npmi(scores, pct / 100)
        report[f"td_p{pct}"] = float(topic_diversity([td_lists[k] for k in chosen], n_td))
    report["td"] = report["td_p100"]
    report["tq"] = report["tc_p100"] * report["td"]
    report["ts"] = topic_specificity(Phi, reference.term_frequencies())

    target = reference if test is None else test
    labels = target.labels
    if labels is not None:
        theta = theta_matrix(target, model)
        n = n_clusters or len(target.label_names or np.unique(labels))
        result = kmeans(theta, n, seed=seed, restarts=restarts)
        report["km_purity"] = float(purity(result.assignments, labels))
        report["km_nmi"] = float(nmi(result.assignments, labels))
    return report
