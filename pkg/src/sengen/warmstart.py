"""Bag-of-words warm start for the sentence encoder.

A mixture of unigrams over sentences is fit by EM. Its per-word topic log-odds are
written into the first K embedding columns, and the sentence-encoder readout is fit
by ridge regression so that q(z|w_s) starts out close to the mixture's
responsibilities.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .corpus import Corpus
from .encoder import EncoderParams, sentence_state
from .errors import ConfigError, CorpusError, ShapeError
from .numerics import no_grad

logger = logging.getLogger(__name__)

EM_ITERATIONS = 100
EM_TOLERANCE = 1e-6
TOPIC_WORD_SMOOTHING = 0.01
LOGIT_BOUND = 6.0
RIDGE = 1e-6


@dataclass(frozen=True)
class SentenceMixture:
    """Mixture weights, topic-word distributions and per-sentence responsibilities, in log space where noted."""

    log_weights: np.ndarray
    log_topic_word: np.ndarray
    responsibilities: np.ndarray
    log_likelihood: float

    @property
    def n_topics(self) -> int:
        return self.log_weights.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.responsibilities, axis=1)


def sentence_counts(corpus: Corpus) -> sparse.csr_matrix:
    """Sentence-by-word count matrix, sentences in corpus order."""
    rows: list[int] = []
    cols: list[int] = []
    n_sentences = 0
    for doc in corpus.documents:
        for sentence in doc.sentences:
            rows.extend([n_sentences] * len(sentence))
            cols.extend(sentence)
            n_sentences += 1
    data = np.ones(len(rows))
    return sparse.csr_matrix((data, (rows, cols)), shape=(n_sentences, len(corpus.vocabulary)))


def _e_step(counts: sparse.csr_matrix, log_weights: np.ndarray, log_topic_word: np.ndarray) -> tuple[np.ndarray, float]:
    joint = counts @ log_topic_word.T + log_weights
    norm = logsumexp(joint, axis=1, keepdims=True)
    return np.exp(joint - norm), float(norm.sum())


def fit_sentence_mixture(
    corpus: Corpus,
    n_topics: int,
    rng: np.random.Generator,
    iterations: int = EM_ITERATIONS,
    smoothing: float = TOPIC_WORD_SMOOTHING,
) -> SentenceMixture:
    """Fit a K-component mixture of unigrams to the corpus sentences.

    Topic-word statistics start from Gamma(100, 1/100) draws. EM stops after
    `iterations` rounds or once no responsibility moves by more than 1e-6.

    Raises:
        CorpusError: If the corpus has fewer sentences than topics
    """
    counts = sentence_counts(corpus)
    if counts.shape[0] < n_topics:
        raise CorpusError(f"cannot fit {n_topics} topics to {counts.shape[0]} sentences")

    stats = rng.gamma(100.0, 1.0 / 100.0, size=(n_topics, counts.shape[1]))
    log_topic_word = np.log(stats / stats.sum(axis=1, keepdims=True))
    log_weights = np.full(n_topics, -np.log(n_topics))
    responsibilities, log_likelihood = _e_step(counts, log_weights, log_topic_word)

    for iteration in range(1, iterations + 1):
        topic_word = np.asarray(counts.T @ responsibilities).T + smoothing
        log_topic_word = np.log(topic_word / topic_word.sum(axis=1, keepdims=True))
        weights = responsibilities.sum(axis=0) + smoothing
        log_weights = np.log(weights / weights.sum())

        updated, log_likelihood = _e_step(counts, log_weights, log_topic_word)
        shift = float(np.max(np.abs(updated - responsibilities)))
        responsibilities = updated
        logger.debug("EM iteration %d: log-likelihood %.4f, max shift %.2e", iteration, log_likelihood, shift)
        if shift < EM_TOLERANCE:
            break

    logger.info("sentence mixture: %d topics, log-likelihood %.4f", n_topics, log_likelihood)
    return SentenceMixture(
        log_weights=log_weights,
        log_topic_word=log_topic_word,
        responsibilities=responsibilities,
        log_likelihood=log_likelihood,
    )


def topic_features(mixture: SentenceMixture) -> np.ndarray:
    """(V, K) per-word topic log-odds, centered over topics and scaled into [−1, 1]."""
    centered = mixture.log_topic_word - mixture.log_topic_word.mean(axis=0, keepdims=True)
    peak = float(np.abs(centered).max())
    if peak > 0:
        centered = centered / peak
    return centered.T


def warm_start_encoder(encoder: EncoderParams, corpus: Corpus, mixture: SentenceMixture) -> None:
    """Seed the embeddings and the sentence-encoder readout from a fitted mixture, in place.

    Raises:
        ConfigError: If the embeddings have fewer columns than topics
        ShapeError: If the mixture does not match the encoder's topics or vocabulary
    """
    K = mixture.n_topics
    if K != encoder.n_topics:
        raise ShapeError(f"mixture has {K} topics, encoder has {encoder.n_topics}")
    if encoder.emb.shape[0] != mixture.log_topic_word.shape[1]:
        raise ShapeError(
            f"mixture vocabulary {mixture.log_topic_word.shape[1]} does not match embeddings {encoder.emb.shape}"
        )
    if encoder.emb.shape[1] < K:
        raise ConfigError(f"bow_warm_start needs embed_dim >= n_topics, got {encoder.emb.shape[1]} < {K}")

    encoder.emb.value[:, :K] = topic_features(mixture)
    with no_grad():
        states = np.stack([sentence_state(s, encoder).value for doc in corpus.documents for s in doc.sentences])
    if states.shape[0] != mixture.responsibilities.shape[0]:
        raise ShapeError(f"mixture covers {mixture.responsibilities.shape[0]} sentences, corpus has {states.shape[0]}")

    log_resp = np.log(np.maximum(mixture.responsibilities, np.exp(-2 * LOGIT_BOUND)))
    targets = np.clip(log_resp - log_resp.mean(axis=1, keepdims=True), -LOGIT_BOUND, LOGIT_BOUND)
    design = np.hstack([states, np.ones((states.shape[0], 1))])
    gram = design.T @ design + RIDGE * states.shape[0] * np.eye(design.shape[1])
    solution = np.linalg.solve(gram, design.T @ targets)
    encoder["w_enc"].value[...] = solution[:-1].T
    encoder["b_enc"].value[...] = solution[-1]
    logger.info("warm-started the sentence encoder on %d sentences", states.shape[0])
