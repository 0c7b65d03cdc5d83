"""Model state, Weibull encoder, topic-word distributions and the training objective.

Parameters live in a flat dict of float64 arrays:

==================  =========  ==========================================
name                shape      role
==================  =========  ==========================================
word_embeddings     V x H      one row per vocabulary term
topic_embeddings    K x H      one row per topic
trunk_weight        V x F      encoder input layer (ReLU)
trunk_bias          F
head_shape_weight   F x K      Weibull shape head (softplus)
head_shape_bias     K
head_scale_weight   F x K      Weibull scale head (softplus)
head_scale_bias     K
==================  =========  ==========================================
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, logsumexp

from .corpus import Vocabulary
from .embeddings import EmbeddingMatrix, random_init
from .transport import INNER_CLAMP

MODES = ("fixed", "finetune", "scratch")
INPUT_TRANSFORMS = ("identity", "log1p")

SHAPE_MIN, SHAPE_MAX = 1e-2, 50.0
SCALE_MIN, SCALE_MAX = 1e-4, 1e4
NOISE_EPS = 1e-6
THETA_FLOOR = 1e-10
RATE_FLOOR = 1e-10

PARAM_NAMES = (
    "word_embeddings",
    "topic_embeddings",
    "trunk_weight",
    "trunk_bias",
    "head_shape_weight",
    "head_shape_bias",
    "head_scale_weight",
    "head_scale_bias",
)
ENCODER_NAMES = PARAM_NAMES[2:]


@dataclass
class ModelConfig:
    n_topics: int = 100
    embed_dim: int = 100
    epsilon: float = 1.0
    mode: str = "fixed"
    trunk_width: int = 256
    input_transform: str = "log1p"
    seed: int = 0

    def __post_init__(self):
        if self.n_topics < 1 or self.embed_dim < 1 or self.trunk_width < 1:
            raise ValueError("n_topics, embed_dim and trunk_width must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.input_transform not in INPUT_TRANSFORMS:
            raise ValueError(f"input_transform must be one of {INPUT_TRANSFORMS}")


@dataclass
class WeibullParams:
    shape: np.ndarray
    scale: np.ndarray


@dataclass
class WeTeModel:
    vocab: Vocabulary
    config: ModelConfig
    params: dict[str, np.ndarray]
    word_trainable: np.ndarray = field(default=None)
    frozen: frozenset = frozenset()

    def __post_init__(self):
        V = len(self.vocab)
        if self.word_trainable is None:
            self.word_trainable = np.full(V, self.config.mode != "fixed")
        self.word_trainable = np.asarray(self.word_trainable, dtype=bool)
        self.frozen = frozenset(self.frozen)
        unknown = self.frozen - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown tensors: {sorted(unknown)}")
        expected = {
            "word_embeddings": (V, self.config.embed_dim),
            "topic_embeddings": (self.config.n_topics, self.config.embed_dim),
            "trunk_weight": (V, self.config.trunk_width),
            "trunk_bias": (self.config.trunk_width,),
            "head_shape_weight": (self.config.trunk_width, self.config.n_topics),
            "head_shape_bias": (self.config.n_topics,),
            "head_scale_weight": (self.config.trunk_width, self.config.n_topics),
            "head_scale_bias": (self.config.n_topics,),
        }
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            self.params[name] = arr

    @classmethod
    def initialize(cls, vocab, config: ModelConfig, embeddings: EmbeddingMatrix | None = None):
        """Fresh model.

        ``fixed`` and ``finetune`` need a pretrained table (whose width sets
        ``embed_dim``); ``scratch`` draws N(0, 0.02) word embeddings.
        Topic embeddings are N(0, 0.02). Encoder layers use He-scaled
        Gaussian weights and zero biases.
        """
        rng = np.random.default_rng(config.seed)
        V = len(vocab)
        if config.mode == "scratch":
            emb_seed = int(rng.integers(2**63))
            E = random_init(V, config.embed_dim, 0.02, emb_seed).values
            trainable = np.ones(V, dtype=bool)
        else:
            if embeddings is None:
                raise ValueError(f"mode {config.mode!r} needs pretrained word embeddings")
            if len(embeddings) != V:
                raise ValueError("embedding table does not match the vocabulary size")
            E = embeddings.values.copy()
            config.embed_dim = E.shape[1]
            trainable = (np.zeros(V, dtype=bool) if config.mode == "fixed"
                         else np.ones(V, dtype=bool))
        H, K, F = config.embed_dim, config.n_topics, config.trunk_width
        params = {
            "word_embeddings": E,
            "topic_embeddings": rng.normal(0.0, 0.02, size=(K, H)),
            "trunk_weight": rng.normal(0.0, np.sqrt(2.0 / V), size=(V, F)),
            "trunk_bias": np.zeros(F),
            "head_shape_weight": rng.normal(0.0, np.sqrt(1.0 / F), size=(F, K)),
            "head_shape_bias": np.zeros(K),
            "head_scale_weight": rng.normal(0.0, np.sqrt(1.0 / F), size=(F, K)),
            "head_scale_bias": np.zeros(K),
        }
        return cls(vocab, config, params, trainable)

    @property
    def trainable_names(self) -> tuple[str, ...]:
        """Tensors that receive gradients: everything outside ``frozen``, and
        the word embeddings only when some row is trainable."""
        names = [n for n in PARAM_NAMES if n != "word_embeddings"]
        if self.word_trainable.any():
            names.insert(0, "word_embeddings")
        return tuple(n for n in names if n not in self.frozen)

    def copy(self) -> "WeTeModel":
        return WeTeModel(self.vocab, ModelConfig(**vars(self.config)),
                         {k: v.copy() for k, v in self.params.items()},
                         self.word_trainable.copy(), self.frozen)

    def topic_word_dist(self):
        return topic_word_dist(self.params["word_embeddings"], self.params["topic_embeddings"])


# ---------------------------------------------------------------------------
# encoder and Weibull sampling


def softplus(x):
    return np.logaddexp(0.0, x)


def transform_input(x, kind="log1p"):
    if kind == "identity":
        return x
    if kind == "log1p":
        if sp.issparse(x):
            x = x.copy()
            x.data = np.log1p(x.data)
            return x
        return np.log1p(x)
    raise ValueError(f"unknown input transform {kind!r}")


def encode(x, params, input_transform="log1p") -> WeibullParams:
    """Weibull shape and scale for one count vector (length V) or a batch (B x V)."""
    W = params["trunk_weight"]
    single = not sp.issparse(x) and np.ndim(x) == 1
    X = np.atleast_2d(x) if not sp.issparse(x) else x
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"input has {X.shape[1]} terms, encoder expects {W.shape[0]}")
    if not sp.issparse(X) and np.any(X < 0):
        raise ValueError("counts must be nonnegative")
    U = transform_input(X if sp.issparse(X) else np.asarray(X, dtype=np.float64), input_transform)
    hidden = np.maximum(U @ W + params["trunk_bias"], 0.0)
    hidden = np.asarray(hidden)
    shape = np.clip(softplus(hidden @ params["head_shape_weight"] + params["head_shape_bias"]),
                    SHAPE_MIN, SHAPE_MAX)
    scale = np.clip(softplus(hidden @ params["head_scale_weight"] + params["head_scale_bias"]),
                    SCALE_MIN, SCALE_MAX)
    if single:
        return WeibullParams(shape[0], scale[0])
    return WeibullParams(shape, scale)


def clamp_noise(noise):
    return np.clip(noise, NOISE_EPS, 1.0 - NOISE_EPS)


def sample_theta(p: WeibullParams, noise):
    """Reparameterized Weibull draw: scale * (-log(1 - u)) ** (1 / shape)."""
    u = clamp_noise(np.asarray(noise, dtype=np.float64))
    return p.scale * (-np.log1p(-u)) ** (1.0 / p.shape)


def weibull_mean(shape, scale):
    return scale * np.exp(gammaln(1.0 + 1.0 / np.asarray(shape)))


def normalize_theta(theta):
    """Project nonnegative weights onto the simplex (after a 1e-10 floor) along the last axis."""
    t = np.asarray(theta, dtype=np.float64) + THETA_FLOOR
    if np.any(t < 0):
        raise ValueError("theta must be nonnegative")
    return t / t.sum(axis=-1, keepdims=True)


def infer_theta(x, model: WeTeModel):
    """Deterministic topic proportions: normalized Weibull means."""
    p = encode(x, model.params, model.config.input_transform)
    return normalize_theta(weibull_mean(p.shape, p.scale))


# ---------------------------------------------------------------------------
# topics and likelihood


def topic_word_dist(E, alpha):
    """V x K matrix whose column k is softmax over words of <word_v, alpha_k>."""
    E = getattr(E, "values", E)
    logits = np.asarray(E) @ np.asarray(alpha).T
    return np.exp(logits - logsumexp(logits, axis=0, keepdims=True))


def poisson_loglik(x, Phi, theta):
    """sum_v x_v log r_v - r_v with r = Phi @ theta floored at 1e-10.

    The constant -log(x_v!) is left out.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.maximum(Phi @ np.asarray(theta, dtype=np.float64), RATE_FLOOR)
    return float(np.sum(x * np.log(r)) - np.sum(r))


def top_words(Phi, k, n):
    """Ids of the ``n`` largest entries of column ``k``; ties go to the lower id."""
    col = Phi[:, k]
    if not 1 <= n <= col.size:
        raise ValueError(f"n must be between 1 and {col.size}")
    return [int(i) for i in np.lexsort((np.arange(col.size), -col))[:n]]


# ---------------------------------------------------------------------------
# batched objective


@dataclass
class Batch:
    """Flattened view of a list of documents for vectorized evaluation."""

    X: sp.csr_matrix
    ids: np.ndarray
    log_weights: np.ndarray
    doc_of: np.ndarray
    starts: np.ndarray

    @property
    def scatter(self) -> sp.csr_matrix:
        """V x M one-hot map summing per-entry rows into per-term rows."""
        M = self.ids.size
        return sp.csr_matrix((np.ones(M), (self.ids, np.arange(M))), shape=(self.X.shape[1], M))

    @classmethod
    def from_documents(cls, docs, V):
        if len(docs) == 0:
            raise ValueError("empty batch")
        ids = np.concatenate([d.bow_ids for d in docs])
        counts = np.concatenate([d.bow_counts for d in docs]).astype(np.float64)
        lengths = np.array([d.bow_ids.size for d in docs])
        totals = np.array([float(d.bow_counts.sum()) for d in docs])
        doc_of = np.repeat(np.arange(len(docs)), lengths)
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        X = sp.csr_matrix((counts, ids, indptr), shape=(len(docs), V))
        return cls(X, ids, np.log(counts / totals[doc_of]), doc_of, indptr[:-1])

    def __len__(self):
        return self.X.shape[0]


def _segment_logsumexp(values, starts, doc_of):
    """Column-wise logsumexp of ``values`` (M x K) within document segments."""
    peak = np.maximum.reduceat(values, starts, axis=0)
    shifted = values - peak[doc_of]
    np.exp(shifted, out=shifted)
    return peak + np.log(np.add.reduceat(shifted, starts, axis=0))


def _row_logsumexp_(values):
    """Row-wise logsumexp of finite ``values``; overwrites its argument."""
    peak = values.max(axis=1)
    values -= peak[:, None]
    np.exp(values, out=values)
    return peak + np.log(values.sum(axis=1))


def forward(params, batch: Batch, noise, epsilon, input_transform="log1p"):
    """Evaluate the objective; returns ``(loss, parts, cache)``.

    ``parts`` holds the batch means ``ct`` and ``nll`` (negative Poisson
    log-likelihood), so ``loss = ct + epsilon * nll``. ``cache`` keeps the
    intermediates needed for backpropagation.
    """
    E = params["word_embeddings"]
    alpha = params["topic_embeddings"]
    B = len(batch)
    U = transform_input(batch.X, input_transform)
    pre = np.asarray(U @ params["trunk_weight"]) + params["trunk_bias"]
    hidden = np.maximum(pre, 0.0)
    shape_pre = hidden @ params["head_shape_weight"] + params["head_shape_bias"]
    scale_pre = hidden @ params["head_scale_weight"] + params["head_scale_bias"]
    shape_raw, scale_raw = softplus(shape_pre), softplus(scale_pre)
    shape = np.clip(shape_raw, SHAPE_MIN, SHAPE_MAX)
    scale = np.clip(scale_raw, SCALE_MIN, SCALE_MAX)
    base = -np.log1p(-clamp_noise(np.asarray(noise, dtype=np.float64)))
    if base.shape != shape.shape:
        raise ValueError(f"noise must have shape {shape.shape}")
    root = base ** (1.0 / shape)
    theta = scale * root
    t = theta + THETA_FLOOR
    total = t.sum(axis=1, keepdims=True)
    tt = t / total
    log_tt = np.log(tt)

    # conditional transport on the flattened (doc, distinct word) entries,
    # inner products clamped so exp(-A) and exp(-B) stay finite
    Ew = E[batch.ids]
    scores = Ew @ alpha.T
    scores_free = np.abs(scores) < INNER_CLAMP
    np.clip(scores, -INNER_CLAMP, INNER_CLAMP, out=scores)
    A = _segment_logsumexp(scores + batch.log_weights[:, None], batch.starts, batch.doc_of)
    Bw = _row_logsumexp_(scores + log_tt[batch.doc_of])
    T1 = np.exp(log_tt - A)
    T2 = np.exp(batch.log_weights - Bw)
    ct = T1.sum(axis=1) + np.add.reduceat(T2, batch.starts)

    # Poisson likelihood of the counts under rates Phi @ theta
    logits = E @ alpha.T
    Phi = np.exp(logits - logsumexp(logits, axis=0, keepdims=True))
    R = theta @ Phi.T
    rows = batch.doc_of
    R_obs = R[rows, batch.ids]
    Rf_obs = np.maximum(R_obs, RATE_FLOOR)
    xlogr = np.add.reduceat(batch.X.data * np.log(Rf_obs), batch.starts)
    loglik = xlogr - np.maximum(R, RATE_FLOOR).sum(axis=1)
    # rates on the floor get no gradient; usually there are none
    floored = sp.csr_matrix(R <= RATE_FLOOR, dtype=R.dtype)

    # stay in the working dtype; float() would truncate extended-precision checks
    mean_ct, mean_nll = np.mean(ct), -np.mean(loglik)
    loss = mean_ct + epsilon * mean_nll
    cache = dict(U=U, pre=pre, hidden=hidden, shape_pre=shape_pre, scale_pre=scale_pre,
                 shape_raw=shape_raw, scale_raw=scale_raw, shape=shape, scale=scale,
                 base=base, root=root, theta=theta, total=total, tt=tt, Ew=Ew, scores=scores,
                 scores_free=scores_free,
                 A=A, Bw=Bw, T1=T1, T2=T2, Phi=Phi, R_obs=R_obs, Rf_obs=Rf_obs,
                 floored=floored, ct=ct, loglik=loglik)
    return loss, {"ct": float(mean_ct), "nll": float(mean_nll)}, cache


def objective(docs, model: WeTeModel, noise, epsilon=None):
    """Mean CT cost minus ``epsilon`` times mean Poisson log-likelihood over ``docs``.

    ``noise`` is a ``len(docs) x K`` array of uniforms, one Weibull draw per
    document shared by both terms. Returns ``(loss, {"ct": ..., "nll": ...})``.
    """
    eps = model.config.epsilon if epsilon is None else epsilon
    batch = docs if isinstance(docs, Batch) else Batch.from_documents(docs, len(model.vocab))
    loss, parts, _ = forward(model.params, batch, noise, eps, model.config.input_transform)
    return loss, parts


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"WETE1"


def _write_checkpoint(fh, model: WeTeModel):
    cfg = model.config
    V = len(model.vocab)
    fh.write(MAGIC)
    fh.write(struct.pack("<4I", V, cfg.embed_dim, cfg.n_topics, cfg.trunk_width))
    fh.write(struct.pack("<BB", MODES.index(cfg.mode), INPUT_TRANSFORMS.index(cfg.input_transform)))
    for term in model.vocab.terms:
        raw = term.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
    fh.write(struct.pack("<I", len(PARAM_NAMES)))
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        raw = name.encode("ascii")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def checkpoint_bytes(model: WeTeModel) -> bytes:
    buf = io.BytesIO()
    _write_checkpoint(buf, model)
    return buf.getvalue()


def save_checkpoint(path, model: WeTeModel):
    """Write atomically: a temp file in the target directory, then rename."""
    data = checkpoint_bytes(model)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wete-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class CheckpointError(ValueError):
    pass


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(data: bytes) -> WeTeModel:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a WETE1 checkpoint")
    V, H, K, F = r.unpack("<4I")
    mode, transform = r.unpack("<BB")
    if mode >= len(MODES) or transform >= len(INPUT_TRANSFORMS):
        raise CheckpointError("bad mode or input-transform flag")
    try:
        terms = tuple(r.take(r.unpack("<I")[0]).decode("utf-8") for _ in range(V))
    except UnicodeDecodeError as err:
        raise CheckpointError(f"bad vocabulary entry: {err}") from None
    params = {}
    (count,) = r.unpack("<I")
    for _ in range(count):
        name = r.take(r.unpack("<H")[0]).decode("ascii", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last array")
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise CheckpointError(f"missing arrays: {sorted(missing)}")
    config = ModelConfig(n_topics=K, embed_dim=H, mode=MODES[mode], trunk_width=F,
                         input_transform=INPUT_TRANSFORMS[transform])
    try:
        return WeTeModel(Vocabulary(terms), config, params)
    except ValueError as err:
        raise CheckpointError(str(err)) from None


def load_checkpoint(path) -> WeTeModel:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
