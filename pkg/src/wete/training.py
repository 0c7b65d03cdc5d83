"""Exact gradients of the objective, Adam, a finite-difference checker, and the trainer."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .model import (
    SCALE_MAX,
    SCALE_MIN,
    SHAPE_MAX,
    SHAPE_MIN,
    RATE_FLOOR,
    Batch,
    WeTeModel,
    encode,
    forward,
    normalize_theta,
    weibull_mean,
)

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    """Training stopped; ``last_good`` holds the model after the last healthy epoch."""

    def __init__(self, message, last_good, history):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


def _backward(params, batch: Batch, cache, epsilon, trainable, word_mask=None):
    """Reverse pass through :func:`wete.model.forward`."""
    E = params["word_embeddings"]
    alpha = params["topic_embeddings"]
    B = len(batch)
    c = cache
    want_E = "word_embeddings" in trainable
    grads = {}

    d_ct = 1.0 / B
    d_ll = -epsilon / B

    # topic-to-doc term: sum_k tt_k exp(-A_k)
    d_tt = np.exp(-c["A"]) * d_ct
    # (the M x K work below is done in place; it dominates the step)
    doc_of = batch.doc_of
    d_A = -c["T1"] * d_ct
    d_scores = c["scores"] + batch.log_weights[:, None]
    d_scores -= c["A"][doc_of]
    np.exp(d_scores, out=d_scores)  # topic-to-word conditional
    d_scores *= d_A[doc_of]
    # doc-to-topic term: sum_i w_i exp(-B_i)
    d_Bw = -c["T2"] * d_ct
    Q = c["scores"] - c["Bw"][:, None]
    np.exp(Q, out=Q)  # word-to-topic conditional divided by tt
    Q *= d_Bw[:, None]
    d_tt += np.add.reduceat(Q, batch.starts, axis=0)
    Q *= c["tt"][doc_of]
    d_scores += Q
    d_scores *= c["scores_free"]

    d_alpha = d_scores.T @ c["Ew"]
    d_E = None
    if want_E:
        d_E = np.asarray(batch.scatter @ (d_scores @ alpha))

    # Poisson term; no gradient where the rate sits on its floor
    # d loglik / d rate is x / r - 1 at every (doc, word), except on the floor
    # where it is 0: (sparse observed part) - 1 + (sparse floored part)
    Phi, theta = c["Phi"], c["theta"]
    g_obs = np.where(c["R_obs"] > RATE_FLOOR, batch.X.data / c["Rf_obs"], 0.0)
    S = sp.csr_matrix((g_obs, batch.ids, np.append(batch.starts, g_obs.size)),
                      shape=batch.X.shape) + c["floored"]
    d_theta = d_ll * (np.asarray(S @ Phi) - Phi.sum(axis=0))
    d_Phi = d_ll * (np.asarray(S.T @ theta) - theta.sum(axis=0))
    d_logits = Phi * (d_Phi - np.sum(Phi * d_Phi, axis=0, keepdims=True))
    d_alpha += d_logits.T @ E
    if want_E:
        d_E += d_logits @ alpha
        if word_mask is not None:
            d_E[~word_mask] = 0.0
        grads["word_embeddings"] = d_E
    grads["topic_embeddings"] = d_alpha

    # simplex normalization tt = (theta + floor) / total
    tt = c["tt"]
    d_theta += (d_tt - np.sum(d_tt * tt, axis=1, keepdims=True)) / c["total"]

    # Weibull reparameterization theta = scale * base ** (1 / shape)
    d_scale = d_theta * c["root"]
    d_shape = d_theta * c["theta"] * np.log(c["base"]) * (-1.0 / c["shape"] ** 2)
    d_scale *= (c["scale_raw"] > SCALE_MIN) & (c["scale_raw"] < SCALE_MAX)
    d_shape *= (c["shape_raw"] > SHAPE_MIN) & (c["shape_raw"] < SHAPE_MAX)
    d_scale_pre = d_scale * expit(c["scale_pre"])
    d_shape_pre = d_shape * expit(c["shape_pre"])

    hidden = c["hidden"]
    grads["head_shape_weight"] = hidden.T @ d_shape_pre
    grads["head_shape_bias"] = d_shape_pre.sum(axis=0)
    grads["head_scale_weight"] = hidden.T @ d_scale_pre
    grads["head_scale_bias"] = d_scale_pre.sum(axis=0)
    d_hidden = d_shape_pre @ params["head_shape_weight"].T + d_scale_pre @ params["head_scale_weight"].T
    d_pre = d_hidden * (c["pre"] > 0)
    grads["trunk_weight"] = np.asarray(c["U"].T @ d_pre)
    grads["trunk_bias"] = d_pre.sum(axis=0)
    return {name: grads[name] for name in trainable}


def loss_and_gradient(model: WeTeModel, batch, noise, epsilon=None):
    """Objective value, its parts, and gradients for every trainable tensor."""
    eps = model.config.epsilon if epsilon is None else epsilon
    if not isinstance(batch, Batch):
        batch = Batch.from_documents(batch, len(model.vocab))
    loss, parts, cache = forward(model.params, batch, noise, eps, model.config.input_transform)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"objective is {loss}")
    trainable = model.trainable_names
    grads = _backward(model.params, batch, cache, eps, trainable, model.word_trainable)
    return loss, parts, grads


def gradient(batch, model: WeTeModel, noise, epsilon=None):
    """Gradients of the single-sample objective at fixed ``noise``, keyed by tensor name."""
    return loss_and_gradient(model, batch, noise, epsilon)[2]


# ---------------------------------------------------------------------------
# finite differences


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_difference(f, x, h=1e-5, indices=None):
    """Central-difference gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def ok(self):
        return self.worst < self.tol


def finite_diff_check(batch, model: WeTeModel, noise, h=1e-5, tol=1e-4, max_coords=None,
                      seed=0, grads=None, epsilon=None, dtype=np.longdouble):
    """Compare analytic gradients to central differences at fixed noise.

    Every coordinate is checked unless ``max_coords`` is given, in which case
    that many are sampled per tensor. ``grads`` overrides the analytic
    gradients (used to test the harness itself).

    The objective is re-evaluated in ``dtype`` (extended precision by
    default): with float64, round-off of order eps * |loss| / h swamps
    gradient entries many orders of magnitude below the loss.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    eps = model.config.epsilon if epsilon is None else epsilon
    if not isinstance(batch, Batch):
        batch = Batch.from_documents(batch, len(model.vocab))
    if grads is None:
        grads = gradient(batch, model, noise, eps)
    rng = np.random.default_rng(seed)
    wide = Batch(batch.X.astype(dtype), batch.ids, batch.log_weights.astype(dtype),
                 batch.doc_of, batch.starts)
    params = {k: v.astype(dtype) for k, v in model.params.items()}
    eps_wide = dtype(eps)

    def f():
        return forward(params, wide, noise, eps_wide, model.config.input_transform)[0]

    worst = {}
    for name, g in grads.items():
        x = params[name]
        idx = None
        if max_coords is not None and x.size > max_coords:
            idx = rng.choice(x.size, size=max_coords, replace=False)
        numeric = central_difference(f, x, dtype(h), idx).astype(np.float64)
        sel = slice(None) if idx is None else idx
        err = relative_error(g.reshape(-1)[sel], numeric.reshape(-1)[sel])
        worst[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(worst, tol)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, row_masks=None):
    """One bias-corrected Adam update, in place, for the tensors named in ``grads``.

    ``row_masks`` maps a tensor name to a boolean row mask; unmasked rows keep
    their values.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, "
                             f"parameter has {params[name].shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps_hat)
        mask = None if row_masks is None else row_masks.get(name)
        if mask is not None:
            update[~mask] = 0.0
        params[name] -= update
    return params, state


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    batch_size: int = 200
    epochs: int = 50
    lr: float = 0.001
    epsilon: float | None = None
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    ct: float
    nll: float
    seconds: float

    def csv(self):
        return f"{self.epoch},{self.loss:.6g},{self.ct:.6g},{self.nll:.6g},{self.seconds:.6g}"


def train(corpus, model: WeTeModel, cfg: TrainConfig, on_epoch=None):
    """Mini-batch Adam on the regularized CT objective.

    Each epoch shuffles the whole corpus with the run seed and walks it in
    batches (the last one may be short). Every document gets one fresh
    Weibull noise draw per step. Returns ``(model, history)``; ``model`` is
    updated in place. ``on_epoch(record, model)`` runs after every epoch.

    Raises :class:`TrainingDiverged` if the loss becomes non-finite, or
    exceeds ten times the first epoch's magnitude for three epochs running.
    """
    docs = corpus.documents if hasattr(corpus, "documents") else list(corpus)
    if not docs:
        raise ValueError("cannot train on an empty corpus")
    eps = model.config.epsilon if cfg.epsilon is None else cfg.epsilon
    V, K = len(model.vocab), model.config.n_topics
    rng = np.random.default_rng(cfg.seed)
    state = AdamState(lr=cfg.lr)
    masks = {"word_embeddings": model.word_trainable}
    history: list[EpochRecord] = []
    last_good = model.copy()
    first_loss = None
    strikes = 0

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(docs))
        sums = np.zeros(3)
        for lo in range(0, len(docs), cfg.batch_size):
            batch = Batch.from_documents([docs[i] for i in order[lo:lo + cfg.batch_size]], V)
            noise = rng.random((len(batch), K))
            try:
                loss, parts, grads = loss_and_gradient(model, batch, noise, eps)
            except NonFiniteLossError as err:
                raise TrainingDiverged(f"epoch {epoch}: {err}", last_good, history) from None
            sums += len(batch) * np.array([loss, parts["ct"], parts["nll"]])
            adam_step(model.params, grads, state, masks)
        mean = sums / len(docs)
        rec = EpochRecord(epoch, *map(float, mean), time.perf_counter() - start)
        history.append(rec)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.6g ct %.6g nll %.6g (%.2fs)", *vars(rec).values())
        if on_epoch is not None:
            on_epoch(rec, model)

        if not all(math.isfinite(p.sum()) for p in model.params.values()):
            raise TrainingDiverged(f"epoch {epoch}: parameters became non-finite",
                                   last_good, history)
        if first_loss is None:
            first_loss = rec.loss
        strikes = strikes + 1 if rec.loss > 10 * abs(first_loss) else 0
        if strikes >= 3:
            raise TrainingDiverged(f"epoch {epoch}: loss above 10x its initial value "
                                   "for 3 epochs", last_good, history)
        if strikes == 0:
            last_good = model.copy()
    return model, history


def theta_matrix(corpus, model: WeTeModel, batch_size=1000):
    """Inferred topic proportions for every document, J x K."""
    docs = corpus.documents if hasattr(corpus, "documents") else list(corpus)
    out = []
    for lo in range(0, len(docs), batch_size):
        b = Batch.from_documents(docs[lo:lo + batch_size], len(model.vocab))
        p = encode(b.X, model.params, model.config.input_transform)
        out.append(normalize_theta(weibull_mean(p.shape, p.scale)))
    return np.vstack(out)
