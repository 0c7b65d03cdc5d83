"""Word-embedding tables: loading, random initialization, nearest words."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary


class DegenerateVectorError(ValueError):
    pass


@dataclass
class EmbeddingMatrix:
    """V x H table, one row per vocabulary term.

    ``trainable_mask`` flags rows the optimizer may update.
    """

    values: np.ndarray
    trainable_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1 or self.values.shape[0] < 1:
            raise ValueError("embedding table must be a non-empty V x H matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding table has non-finite entries")
        self.trainable_mask = np.asarray(self.trainable_mask, dtype=bool)
        if self.trainable_mask.shape != (self.values.shape[0],):
            raise ValueError("trainable_mask needs one flag per row")

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def frozen(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.values, np.zeros(len(self), dtype=bool))

    def trainable(self) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.values, np.ones(len(self), dtype=bool))


@dataclass(frozen=True)
class CoverageReport:
    found: int
    missing: tuple[int, ...]


def load_text_embeddings(path, vocab: Vocabulary, oov_stddev=0.02, seed=0):
    """Read a GloVe-style text file (``word f1 ... fH`` per line).

    Rows of terms present in the file are copied verbatim; missing terms get
    N(0, oov_stddev) rows drawn from ``seed``. Lines for words outside the
    vocabulary are still checked for a consistent dimension. If a word occurs
    more than once, the first occurrence wins.

    Returns ``(EmbeddingMatrix, CoverageReport)``. Every row is marked
    trainable; callers freeze the table for fixed-embedding training.
    """
    dim = None
    rows: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) == 1 and not parts[0].strip():
                continue
            word, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
                if dim < 1:
                    raise ValueError(f"{path}:{lineno}: no vector components")
            elif len(fields) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} components, got {len(fields)}")
            try:
                vec = np.array([float(f) for f in fields])
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
            i = vocab.index.get(word)
            if i is not None and i not in rows:
                rows[i] = vec
    if dim is None:
        raise ValueError(f"{path}: no usable lines")

    values = np.random.default_rng(seed).normal(0.0, oov_stddev, size=(len(vocab), dim))
    for i, vec in rows.items():
        values[i] = vec
    missing = tuple(i for i in range(len(vocab)) if i not in rows)
    return (EmbeddingMatrix(values, np.ones(len(vocab), dtype=bool)),
            CoverageReport(len(rows), missing))


def save_text_embeddings(path, E: EmbeddingMatrix, vocab: Vocabulary):
    # repr() gives the shortest string that round-trips a float64 exactly
    with open(path, "w", encoding="utf-8") as fh:
        for term, row in zip(vocab.terms, E.values):
            fh.write(term + " " + " ".join(repr(float(v)) for v in row) + "\n")


def random_init(V, H, stddev=0.02, seed=0) -> EmbeddingMatrix:
    if V < 1 or H < 1:
        raise ValueError("V and H must be positive")
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    values = np.random.default_rng(seed).normal(0.0, stddev, size=(V, H))
    return EmbeddingMatrix(values, np.ones(V, dtype=bool))


def nearest_words(E, query_id, k, metric="cosine"):
    """The ``k`` terms most cosine-similar to ``query_id``.

    Returns ``[(term_id, similarity), ...]`` sorted by descending similarity,
    ties by ascending term id. The query itself is always first.
    """
    if metric != "cosine":
        raise ValueError(f"unsupported metric {metric!r}")
    values = E.values if isinstance(E, EmbeddingMatrix) else np.asarray(E, dtype=np.float64)
    V = values.shape[0]
    if not 0 <= query_id < V:
        raise IndexError(f"query id {query_id} outside vocabulary of size {V}")
    if not 1 <= k <= V:
        raise ValueError(f"k must be between 1 and {V}")
    norms = np.linalg.norm(values, axis=1)
    if norms[query_id] == 0:
        raise DegenerateVectorError(f"term {query_id} has a zero embedding")
    q = values[query_id] / norms[query_id]
    safe = np.where(norms > 0, norms, 1.0)
    sims = np.clip((values @ q) / safe, -1.0, 1.0)
    sims[norms == 0] = 0.0
    sims[query_id] = 1.0
    # query first, then by similarity and id
    key_primary = -sims
    order = np.lexsort((np.arange(V), key_primary, np.arange(V) != query_id))
    return [(int(i), float(sims[i])) for i in order[:k]]
