"""Transport cost between a document's words and a topic mixture.

Run: python3 demos/01_transport_cost.py
"""
import numpy as np

from wete.transport import (
    DocEmbedding,
    TopicMixture,
    ct_cost_closed,
    ct_cost_naive,
    topic_to_word_probs,
    word_to_topic_probs,
)

rng = np.random.default_rng(0)

# a document with 4 distinct words (weights = token frequencies) in 3 dims
doc = DocEmbedding(np.arange(4), np.array([0.4, 0.3, 0.2, 0.1]), rng.uniform(-1, 1, (4, 3)))
# two topics with proportions 0.7 / 0.3
mix = TopicMixture(np.array([0.7, 0.3]), rng.uniform(-1, 1, (2, 3)))

# where does each topic send its mass among the document's words?
for k in range(2):
    print(f"topic {k} -> words:", np.round(topic_to_word_probs(doc, mix.alpha[k]), 3))
# and each word among the topics
for i in range(4):
    print(f"word {i} -> topics:", np.round(word_to_topic_probs(doc.vectors[i], mix), 3))

# double loop and log-space closed form agree
print("naive  ", ct_cost_naive(doc, mix))
print("closed ", ct_cost_closed(doc, mix))

# pulling the topics towards the words lowers the cost
closer = TopicMixture(mix.theta_tilde, mix.alpha + doc.vectors.mean(axis=0))
print("closer ", ct_cost_closed(doc, closer))
