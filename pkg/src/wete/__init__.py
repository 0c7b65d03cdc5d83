"""Topic models built from word and topic embeddings, trained by conditional transport."""

from .corpus import (
    Corpus,
    Document,
    EmptyCorpusError,
    Vocabulary,
    attach_labels,
    build_corpus,
    encode_with_vocab,
    load_corpus,
    split_corpus,
)
from .embeddings import CoverageReport, EmbeddingMatrix, load_text_embeddings, nearest_words, random_init
from .evaluation import evaluate_model
from .model import (
    ModelConfig,
    WeibullParams,
    WeTeModel,
    encode,
    infer_theta,
    load_checkpoint,
    normalize_theta,
    objective,
    poisson_loglik,
    sample_theta,
    save_checkpoint,
    top_words,
    topic_word_dist,
)
from .training import AdamState, TrainConfig, adam_step, finite_diff_check, gradient, theta_matrix, train
from .transport import (
    DocEmbedding,
    TopicMixture,
    batch_ct_cost,
    ct_cost_closed,
    ct_cost_naive,
    point_cost,
    topic_to_word_probs,
    word_to_topic_probs,
)

__version__ = "0.1.0"
