"""Tokenized corpora, vocabularies and bag-of-words counts.

Input is pre-tokenized text: one document per line, tokens separated by
ASCII whitespace. Filters apply in a fixed order (stopwords, then document
frequency, then document length) so vocabulary sizes are reproducible.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class EmptyCorpusError(ValueError):
    """Raised when filtering leaves no documents."""


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("vocabulary must contain at least one term")
        if any(t == "" for t in terms):
            raise ValueError("vocabulary terms must be non-empty")
        index = {t: i for i, t in enumerate(terms)}
        if len(index) != len(terms):
            raise ValueError("vocabulary terms must be unique")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.index

    def __getitem__(self, term):
        return self.index[term]


@dataclass(frozen=True, eq=False)
class Document:
    """One document: its token ids in order, and their aggregated counts.

    ``bow_ids`` is sorted ascending and ``bow_counts`` is aligned with it.
    """

    word_ids: np.ndarray
    bow_ids: np.ndarray
    bow_counts: np.ndarray
    label: int | None = None
    source_index: int = 0

    @classmethod
    def from_ids(cls, word_ids, label=None, source_index=0):
        word_ids = np.asarray(word_ids, dtype=np.int64)
        if word_ids.size == 0:
            raise ValueError("a document needs at least one token")
        ids, counts = np.unique(word_ids, return_counts=True)
        return cls(_frozen(word_ids), _frozen(ids), _frozen(counts.astype(np.int64)),
                   label, source_index)

    def __len__(self):
        return int(self.word_ids.size)

    @property
    def bow(self) -> dict[int, int]:
        return {int(i): int(c) for i, c in zip(self.bow_ids, self.bow_counts)}

    def with_label(self, label):
        return Document(self.word_ids, self.bow_ids, self.bow_counts, label, self.source_index)

    def __eq__(self, other):
        if not isinstance(other, Document):
            return NotImplemented
        return (np.array_equal(self.word_ids, other.word_ids)
                and self.label == other.label
                and self.source_index == other.source_index)


@dataclass(frozen=True, eq=False)
class Corpus:
    vocab: Vocabulary
    documents: tuple[Document, ...]
    label_names: tuple[str, ...] | None = None
    n_lines: int = 0

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        V = len(self.vocab)
        for doc in self.documents:
            if doc.bow_ids.size and doc.bow_ids[-1] >= V:
                raise ValueError("document references a term outside the vocabulary")
        labels = [d.label for d in self.documents]
        if any(lab is not None for lab in labels):
            n_classes = len(self.label_names) if self.label_names is not None else None
            for lab in labels:
                if lab is None or lab < 0 or (n_classes is not None and lab >= n_classes):
                    raise ValueError("labels must be present on every document and in range")

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (self.vocab.terms == other.vocab.terms
                and self.documents == other.documents
                and self.label_names == other.label_names)

    @property
    def labels(self) -> np.ndarray | None:
        if not self.documents or self.documents[0].label is None:
            return None
        return np.array([d.label for d in self.documents], dtype=np.int64)

    def bow_matrix(self) -> sp.csr_matrix:
        """J x V sparse count matrix."""
        indptr = np.zeros(len(self.documents) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([d.bow_ids.size for d in self.documents])
        if self.documents:
            indices = np.concatenate([d.bow_ids for d in self.documents])
            data = np.concatenate([d.bow_counts for d in self.documents]).astype(np.float64)
        else:
            indices = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        return sp.csr_matrix((data, indices, indptr), shape=(len(self.documents), len(self.vocab)))

    def term_frequencies(self) -> np.ndarray:
        """Fraction of all tokens that are each term."""
        counts = np.zeros(len(self.vocab))
        for d in self.documents:
            counts[d.bow_ids] += d.bow_counts
        return counts / counts.sum()

    def subset(self, indices) -> "Corpus":
        return Corpus(self.vocab, tuple(self.documents[i] for i in indices),
                      self.label_names, self.n_lines)


def tokenize(line: str) -> list[str]:
    return line.split()


def build_corpus(lines: Sequence[str] | Sequence[Sequence[str]], min_doc_len=1,
                 min_term_doc_freq=1, stopwords: Iterable[str] = ()) -> Corpus:
    """Build a vocabulary and documents from raw lines.

    Each line is either a string (split on whitespace) or an already split
    token list. Terms are ordered by first occurrence among surviving tokens.
    Documents with fewer than ``min_doc_len`` tokens after filtering are
    dropped; the remaining ones keep their input order.
    """
    if len(lines) == 0:
        raise ValueError("no input lines")
    stop = set(stopwords)
    docs = [[t for t in (tokenize(l) if isinstance(l, str) else list(l)) if t not in stop]
            for l in lines]

    if min_term_doc_freq > 1:
        df = Counter()
        for toks in docs:
            df.update(set(toks))
        keep = {t for t, c in df.items() if c >= min_term_doc_freq}
        docs = [[t for t in toks if t in keep] for toks in docs]

    survivors = [(i, toks) for i, toks in enumerate(docs)
                 if len(toks) >= max(min_doc_len, 1)]
    if not survivors:
        raise EmptyCorpusError("every document was removed by filtering")

    index: dict[str, int] = {}
    for _, toks in survivors:
        for t in toks:
            if t not in index:
                index[t] = len(index)
    vocab = Vocabulary(tuple(index))
    documents = tuple(Document.from_ids([index[t] for t in toks], source_index=i)
                      for i, toks in survivors)
    return Corpus(vocab, documents, None, len(lines))


def encode_with_vocab(lines, vocab: Vocabulary, min_doc_len=1) -> Corpus:
    """Map lines onto an existing vocabulary, dropping unknown tokens."""
    if len(lines) == 0:
        raise ValueError("no input lines")
    documents = []
    for i, line in enumerate(lines):
        toks = tokenize(line) if isinstance(line, str) else list(line)
        ids = [vocab.index[t] for t in toks if t in vocab.index]
        if len(ids) >= max(min_doc_len, 1):
            documents.append(Document.from_ids(ids, source_index=i))
    if not documents:
        raise EmptyCorpusError("no document has an in-vocabulary token")
    return Corpus(vocab, tuple(documents), None, len(lines))


def attach_labels(corpus: Corpus, labels: Sequence[str]) -> Corpus:
    """Attach one label per original input line.

    Labels of dropped lines are discarded. ``label_names`` lists the label
    strings of the surviving documents in first-seen order.
    """
    if len(labels) != corpus.n_lines:
        raise ValueError(f"got {len(labels)} labels for {corpus.n_lines} input lines")
    names: dict[str, int] = {}
    documents = []
    for doc in corpus.documents:
        name = labels[doc.source_index]
        if name not in names:
            names[name] = len(names)
        documents.append(doc.with_label(names[name]))
    return Corpus(corpus.vocab, tuple(documents), tuple(names), corpus.n_lines)


def split_corpus(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Random train/test partition.

    The test size is ``test_fraction * J`` rounded half up. Both sides keep
    the original document order and share the vocabulary.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    J = len(corpus)
    n_test = int(np.floor(test_fraction * J + 0.5))
    if n_test == 0 or n_test == J:
        raise ValueError(f"splitting {J} documents at {test_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(J)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return corpus.subset(train_idx), corpus.subset(test_idx)


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").rstrip("\r") for line in fh]


def read_stopwords(path) -> set[str]:
    return {w for line in read_lines(path) for w in line.split()}


def load_corpus(path, labels_path=None, stopwords_path=None, min_doc_len=1,
                min_term_doc_freq=1) -> Corpus:
    stop = read_stopwords(stopwords_path) if stopwords_path else ()
    corpus = build_corpus(read_lines(path), min_doc_len, min_term_doc_freq, stop)
    if labels_path:
        corpus = attach_labels(corpus, read_lines(Path(labels_path)))
    return corpus
