"""Latent Dirichlet Allocation over bags-of-sounds, trained by variational EM.

Per-document inference runs the standard coordinate-ascent updates on the
variational parameters (gamma, phi):

    phi_{wk}  proportional to  beta_{kw} * exp(digamma(gamma_k))
    gamma_k   =  alpha_k + sum_w count_w * phi_{wk}

The M-step re-estimates each topic row from the phi-weighted symbol counts,
with optional additive smoothing. ``log_beta`` stores K rows of length V
(log-probability of each symbol given the latent domain).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .corpus import BagOfSounds

__all__ = ["LdaConfig", "LdaModel", "VariationalState", "digamma",
           "e_step_document", "elbo", "fit", "infer_theta",
           "save_lda", "load_lda"]


def digamma(x):
    """Digamma via the asymptotic series with a recurrence shift below 10.

    Accurate to about 1e-12 for positive arguments; vectorized over arrays.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    if np.any(x <= 0):
        raise ValueError("digamma requires positive arguments")
    out = np.zeros_like(x)
    small = x < 10.0
    while np.any(small):
        out[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10.0
    inv2 = 1.0 / (x * x)
    # Bernoulli-number series: psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^2n)
    series = inv2 * (1 / 12.0 - inv2 * (1 / 120.0 - inv2 * (
        1 / 252.0 - inv2 * (1 / 240.0 - inv2 * (1 / 132.0)))))
    out += np.log(x) - 0.5 / x - series
    return out[0] if scalar else out


@dataclass
class LdaConfig:
    gamma_tol: float = 1e-5      # max relative gamma change to stop the E-step
    max_e_iters: int = 100
    em_tol: float = 1e-4         # relative corpus-ELBO change to stop EM
    max_em_iters: int = 50
    smoothing: float = 1e-3      # additive pseudo-count per (k, w) cell; 0 disables
    alpha: Optional[float] = None  # symmetric Dirichlet scale; None means 1/K
    seed: int = 0
    subtract_prior: bool = False  # theta = (gamma - alpha)/sum if True


@dataclass(frozen=True)
class LdaModel:
    """Topic-symbol matrix in the log domain plus the Dirichlet scale."""

    alpha: np.ndarray      # (K,) positive
    log_beta: np.ndarray   # (K, V), each row normalized in probability space
    elbo_history: Optional[list] = None   # per-EM-iteration corpus ELBO; not serialized

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        log_beta = np.asarray(self.log_beta, dtype=float)
        if alpha.shape != (log_beta.shape[0],):
            raise ValueError("alpha length must equal the number of rows of log_beta")
        if np.any(alpha <= 0):
            raise ValueError("alpha entries must be positive")
        row_mass = np.exp(logsumexp(log_beta, axis=1))
        if not np.all(np.abs(row_mass - 1.0) < 1e-8):
            raise ValueError("each exp(log_beta) row must sum to 1")
        alpha.setflags(write=False)
        log_beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "log_beta", log_beta)

    @property
    def num_domains(self) -> int:
        return self.log_beta.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.log_beta.shape[1]


@dataclass(frozen=True)
class VariationalState:
    """Per-document variational posterior: Dirichlet gamma and one phi row
    per distinct symbol present in the document."""

    gamma: np.ndarray      # (K,)
    phi: np.ndarray        # (U, K), row-stochastic
    word_ids: np.ndarray   # (U,) the distinct symbols, aligned with phi rows
    counts: np.ndarray     # (U,) occurrence counts of each distinct symbol


def _doc_support(doc: BagOfSounds):
    word_ids = np.flatnonzero(doc.counts)
    return word_ids, doc.counts[word_ids].astype(float)


def _coordinate_ascent(log_beta_doc, alpha, counts, gamma_tol, max_iters,
                       elbo_terms=None):
    """Iterate the (phi, gamma) updates to a fixed point.

    ``log_beta_doc`` is (U, K): model log-probabilities restricted to the
    document's distinct symbols. When ``elbo_terms`` is given (a callable
    computing the bound from (gamma, phi)), appends the bound after every
    iteration to its list argument.
    """
    k = log_beta_doc.shape[1]
    total = counts.sum()
    gamma = alpha + total / k
    phi = np.full(log_beta_doc.shape, 1.0 / k)
    for _ in range(max_iters):
        log_phi = log_beta_doc + digamma(gamma)[None, :]
        log_phi -= logsumexp(log_phi, axis=1, keepdims=True)
        phi = np.exp(log_phi)
        new_gamma = alpha + counts @ phi
        if elbo_terms is not None:
            elbo_terms[0].append(elbo_terms[1](new_gamma, phi))
        delta = np.max(np.abs(new_gamma - gamma) / gamma)
        gamma = new_gamma
        if delta < gamma_tol:
            break
    return gamma, phi


def e_step_document(
    model: LdaModel,
    doc: BagOfSounds,
    config: Optional[LdaConfig] = None,
    track_elbo: bool = False,
):
    """Variational inference for one document.

    Returns a :class:`VariationalState`; with ``track_elbo=True`` returns
    ``(state, elbo_per_iteration)`` instead, for monotonicity checks.
    """
    config = config or LdaConfig()
    if doc.vocab_size != model.vocab_size:
        raise ValueError(
            f"document {doc.id!r} has V={doc.vocab_size}, model has V={model.vocab_size}"
        )
    if doc.total < 1:
        raise ValueError(f"document {doc.id!r} is empty")
    word_ids, counts = _doc_support(doc)
    log_beta_doc = model.log_beta[:, word_ids].T     # (U, K)
    if np.any(np.isinf(log_beta_doc).all(axis=1)):
        raise FloatingPointError(
            f"document {doc.id!r}: observed symbol has zero mass in every topic"
        )

    terms = None
    if track_elbo:
        history: list[float] = []
        terms = (history, lambda g, p: _elbo_arrays(
            model.alpha, log_beta_doc, counts, g, p))
    gamma, phi = _coordinate_ascent(
        log_beta_doc, model.alpha, counts, config.gamma_tol, config.max_e_iters,
        elbo_terms=terms,
    )
    if not np.all(np.isfinite(gamma)):
        raise FloatingPointError(f"document {doc.id!r}: non-finite gamma")
    state = VariationalState(gamma=gamma, phi=phi, word_ids=word_ids, counts=counts)
    if track_elbo:
        return state, terms[0]
    return state


def _elbo_arrays(alpha, log_beta_doc, counts, gamma, phi):
    """Evidence lower bound from raw arrays (log_beta_doc is (U, K))."""
    dig = digamma(gamma) - digamma(gamma.sum())      # E_q[log theta_k]
    bound = gammaln(alpha.sum()) - gammaln(alpha).sum() + (alpha - 1) @ dig
    bound += counts @ (phi @ dig)                     # E_q[log p(z | theta)]
    with np.errstate(invalid="ignore"):
        beta_term = np.where(phi > 0, phi * log_beta_doc, 0.0)
        ent_term = np.where(phi > 0, phi * np.log(phi), 0.0)
    bound += counts @ beta_term.sum(axis=1)           # E_q[log p(w | z, beta)]
    bound -= gammaln(gamma.sum()) - gammaln(gamma).sum() + (gamma - 1) @ dig
    bound -= counts @ ent_term.sum(axis=1)            # -E_q[log q(z)]
    return float(bound)


def elbo(model: LdaModel, doc: BagOfSounds, state: VariationalState) -> float:
    """Evidence lower bound for one document under the given variational state."""
    if state.gamma.shape != (model.num_domains,):
        raise ValueError("gamma length does not match the model")
    if state.phi.shape != (state.word_ids.shape[0], model.num_domains):
        raise ValueError("phi shape does not match the state's word ids")
    log_beta_doc = model.log_beta[:, state.word_ids].T
    return _elbo_arrays(model.alpha, log_beta_doc, state.counts, state.gamma, state.phi)


def _e_step_batch(log_beta, alpha, word_ids, counts, gamma_tol, max_iters):
    """Coordinate ascent over every document at once.

    ``word_ids`` and ``counts`` are (M, U) padded arrays; padded slots have
    count 0. Same updates and convergence criterion as the per-document
    E-step, iterated until the worst per-document relative gamma change falls
    below ``gamma_tol``. Returns (gamma (M, K), phi (M, U, K), corpus ELBO).
    """
    m, u = word_ids.shape
    k = log_beta.shape[0]
    lb = np.swapaxes(log_beta[:, word_ids], 0, 1).swapaxes(1, 2)   # (M, U, K)
    totals = counts.sum(axis=1)
    gamma = alpha[None, :] + (totals / k)[:, None]
    phi = np.full((m, u, k), 1.0 / k)
    for _ in range(max_iters):
        log_phi = lb + digamma(gamma)[:, None, :]
        log_phi -= logsumexp(log_phi, axis=2, keepdims=True)
        phi = np.exp(log_phi)
        new_gamma = alpha[None, :] + np.einsum("mu,muk->mk", counts, phi)
        delta = np.max(np.abs(new_gamma - gamma) / gamma)
        gamma = new_gamma
        if delta < gamma_tol:
            break

    # batched ELBO, summed over documents
    dig = digamma(gamma) - digamma(gamma.sum(axis=1))[:, None]     # (M, K)
    bound = m * (gammaln(alpha.sum()) - gammaln(alpha).sum())
    bound += ((alpha - 1)[None, :] * dig).sum()
    bound += np.einsum("mu,muk,mk->", counts, phi, dig)
    with np.errstate(invalid="ignore", divide="ignore"):
        bound += np.einsum("mu,mu->", counts, np.where(
            phi > 0, phi * lb, 0.0).sum(axis=2))
        bound -= np.einsum("mu,mu->", counts, np.where(
            phi > 0, phi * np.log(phi), 0.0).sum(axis=2))
    bound -= (gammaln(gamma.sum(axis=1)) - gammaln(gamma).sum(axis=1)).sum()
    bound -= ((gamma - 1) * dig).sum()
    return gamma, phi, float(bound)


def _init_log_beta(corpus, k, v, smoothing, rng):
    """Empirical symbol distribution times seeded multiplicative noise."""
    totals = np.zeros(v)
    for doc in corpus:
        totals += doc.counts
    emp = totals + max(smoothing, 1e-3)
    emp /= emp.sum()
    beta = emp[None, :] * rng.uniform(0.5, 1.5, size=(k, v))
    beta /= beta.sum(axis=1, keepdims=True)
    return np.log(beta)


def fit(
    corpus: Sequence[BagOfSounds],
    num_domains: int,
    config: Optional[LdaConfig] = None,
) -> LdaModel:
    """Variational EM over a corpus of bags-of-sounds.

    Alternates the per-document E-step with the topic-row M-step until the
    relative change of the corpus ELBO falls below ``config.em_tol``.
    Deterministic for a fixed ``config.seed``.
    """
    config = config or LdaConfig()
    if not corpus:
        raise ValueError("corpus is empty")
    if num_domains < 1:
        raise ValueError("num_domains must be >= 1")
    v = corpus[0].vocab_size
    for doc in corpus:
        if doc.vocab_size != v:
            raise ValueError(f"document {doc.id!r} has a different vocabulary size")
        if doc.total < 1:
            raise ValueError(f"document {doc.id!r} is empty")

    rng = np.random.default_rng(config.seed)
    alpha_scale = config.alpha if config.alpha is not None else 1.0 / num_domains
    if alpha_scale <= 0:
        raise ValueError("alpha must be positive")
    alpha = np.full(num_domains, alpha_scale)
    log_beta = _init_log_beta(corpus, num_domains, v, config.smoothing, rng)

    # pad per-document supports to a common width so the whole E-step runs as
    # batched array ops; padded slots carry count 0 and contribute nothing
    supports = [_doc_support(doc) for doc in corpus]
    m = len(supports)
    u_max = max(ids.size for ids, _ in supports)
    word_ids = np.zeros((m, u_max), dtype=np.int64)
    counts = np.zeros((m, u_max))
    for i, (ids, cnt) in enumerate(supports):
        word_ids[i, : ids.size] = ids
        word_ids[i, ids.size:] = ids[0]   # keep padded slots on a live symbol
        counts[i, : ids.size] = cnt

    history: list[float] = []
    prev = None
    for _ in range(config.max_em_iters):
        gamma, phi, corpus_elbo = _e_step_batch(
            log_beta, alpha, word_ids, counts, config.gamma_tol, config.max_e_iters
        )
        if not np.isfinite(corpus_elbo):
            raise FloatingPointError("variational EM produced a non-finite ELBO")
        history.append(corpus_elbo)
        stats = np.zeros((num_domains, v))
        weighted = phi * counts[:, :, None]          # (M, U, K)
        np.add.at(stats.T, word_ids.ravel(),
                  weighted.reshape(-1, num_domains))

        stats += config.smoothing
        with np.errstate(divide="ignore"):
            log_beta = np.log(stats) - np.log(stats.sum(axis=1, keepdims=True))

        if prev is not None and abs(corpus_elbo - prev) <= config.em_tol * abs(prev):
            break
        prev = corpus_elbo

    return LdaModel(alpha=alpha, log_beta=log_beta, elbo_history=history)


def infer_theta(
    model: LdaModel,
    doc: BagOfSounds,
    config: Optional[LdaConfig] = None,
) -> np.ndarray:
    """Normalized per-document domain posterior (gamma over its sum).

    An empty document yields the uniform vector with a warning; training-time
    empty documents are rejected by :func:`fit` instead.
    """
    config = config or LdaConfig()
    k = model.num_domains
    if doc.total < 1:
        warnings.warn(f"document {doc.id!r} is empty; returning uniform theta")
        return np.full(k, 1.0 / k)
    state = e_step_document(model, doc, config)
    gamma = state.gamma - model.alpha if config.subtract_prior else state.gamma
    return gamma / gamma.sum()


def save_lda(path, model: LdaModel, seed: Optional[int] = None) -> None:
    obj = {
        "K": model.num_domains,
        "V": model.vocab_size,
        "alpha": model.alpha.tolist(),
        "log_beta": model.log_beta.tolist(),
    }
    if seed is not None:
        obj["seed"] = seed
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_lda(path) -> LdaModel:
    with open(path) as fh:
        obj = json.load(fh)
    model = LdaModel(
        alpha=np.asarray(obj["alpha"], dtype=float),
        log_beta=np.asarray(obj["log_beta"], dtype=float),
    )
    if model.num_domains != obj["K"] or model.vocab_size != obj["V"]:
        raise ValueError(f"{path}: inconsistent model dimensions")
    return model
