"""Evidence lower bound, its four terms, and bound-based perplexity."""

import logging
import math
import zlib
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Document
from .encoder import DocumentPosterior, EncoderParams, SentencePosterior, encode_document, encode_sentence
from .errors import CorpusError, DataError
from .model import ModelParams, normalize_support, sentence_log_likelihood
from .numerics import (
    Node,
    add,
    as_node,
    constant,
    dot,
    entropy_sum,
    hadamard,
    log_elem,
    log_softmax,
    neg,
    no_grad,
    scale,
    stack,
    sub,
    sum_elems,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElboBreakdown:
    kl: float
    expected_log_prior: float
    entropy: float
    expected_reconstruction: float
    elbo: float
    objective: Node
    document_posterior: DocumentPosterior
    sentence_posteriors: list[SentencePosterior]


def kl_gaussian(mu: Node | np.ndarray, sigma: Node | np.ndarray) -> Node:
    """KL(N(μ, diag σ²) ‖ N(0, I)) = −½ Σ (1 + log σ² − μ² − σ²)."""
    mu, sigma = as_node(mu), as_node(sigma)
    if np.any(sigma.value <= 0):
        raise DataError("kl_gaussian needs strictly positive sigma")
    squares = add(hadamard(mu, mu), hadamard(sigma, sigma))
    inner = sum_elems(sub(squares, scale(log_elem(sigma), 2.0)))
    return add(scale(inner, 0.5), constant(-0.5 * mu.value.size))


def expected_log_prior(q_s: SentencePosterior, theta_hat: Node | np.ndarray) -> Node:
    """Single-sample estimate Σ_k q(k|w_s) log softmax(θ̂)_k."""
    return dot(q_s.q, log_softmax(as_node(theta_hat)))


def entropy(q_s: SentencePosterior) -> Node:
    return entropy_sum(q_s.q)


def expected_reconstruction(
    q_s: SentencePosterior,
    sentence: Sequence[int],
    params: ModelParams,
    support: np.ndarray | None = None,
) -> Node:
    """Exact Σ_k q(k|w_s) log P(w_s | k) over all topics."""
    log_likelihoods = stack([sentence_log_likelihood(params, sentence, k, support) for k in range(params.n_topics)])
    return dot(q_s.q, log_likelihoods)


def document_elbo(
    doc: Document,
    model: ModelParams,
    encoder: EncoderParams,
    epsilon: np.ndarray,
    support: Sequence[int] | np.ndarray | None = None,
) -> ElboBreakdown:
    """ELBO of one document with a single θ̂ sample shared by all of its sentences."""
    if not doc.sentences:
        raise CorpusError(f"document {doc.id!r} has no sentences")
    support = normalize_support(support, model.vocab_size)

    posterior = encode_document(doc.word_ids, encoder, epsilon)
    kl = kl_gaussian(posterior.mu, posterior.sigma)
    log_mixture = log_softmax(posterior.theta_hat)

    sentence_posteriors, priors, entropies, reconstructions = [], [], [], []
    for sentence in doc.sentences:
        q_s = encode_sentence(sentence, encoder)
        sentence_posteriors.append(q_s)
        priors.append(dot(q_s.q, log_mixture))
        entropies.append(entropy(q_s))
        reconstructions.append(expected_reconstruction(q_s, sentence, model, support))

    prior_total, entropy_total, reconstruction_total = add(*priors), add(*entropies), add(*reconstructions)
    elbo = add(neg(kl), prior_total, entropy_total, reconstruction_total)
    return ElboBreakdown(
        kl=float(kl),
        expected_log_prior=float(prior_total),
        entropy=float(entropy_total),
        expected_reconstruction=float(reconstruction_total),
        elbo=float(elbo),
        objective=elbo,
        document_posterior=posterior,
        sentence_posteriors=sentence_posteriors,
    )


@dataclass(frozen=True)
class DocumentBound:
    doc_id: str
    elbo: float
    n_words: int

    @property
    def per_word_bound(self) -> float:
        return self.elbo / self.n_words


@dataclass(frozen=True)
class EvaluationReport:
    rows: list[DocumentBound]
    perplexity: float

    @property
    def mean_negative_per_word_bound(self) -> float:
        return -math.fsum(row.per_word_bound for row in self.rows) / len(self.rows)


def document_rng(seed: int, doc_id: str) -> np.random.Generator:
    """Noise stream keyed by document id so results do not depend on corpus order."""
    return np.random.default_rng([seed, zlib.crc32(doc_id.encode("utf-8"))])


def _bound_document(
    doc: Document, model: ModelParams, encoder: EncoderParams, n_eps_samples: int, seed: int
) -> DocumentBound:
    rng = document_rng(seed, doc.id)
    with no_grad():
        elbos = [
            document_elbo(doc, model, encoder, rng.standard_normal(model.n_topics)).elbo for _ in range(n_eps_samples)
        ]
    return DocumentBound(doc_id=doc.id, elbo=math.fsum(elbos) / n_eps_samples, n_words=doc.n_words)


def evaluate(
    corpus: Corpus,
    model: ModelParams,
    encoder: EncoderParams,
    n_eps_samples: int = 1,
    seed: int = 0,
    threads: int = 1,
) -> EvaluationReport:
    """Per-document ELBO with full-vocabulary support, and perplexity mean_d exp(−elbo_d / N_d).

    N_d counts every token of the document, `<eos>` included.
    """
    if not corpus.documents:
        raise CorpusError("cannot evaluate an empty corpus")
    if n_eps_samples < 1:
        raise DataError(f"n_eps_samples must be at least 1, got {n_eps_samples}")

    def bound(doc: Document) -> DocumentBound:
        return _bound_document(doc, model, encoder, n_eps_samples, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(bound, corpus.documents))
    else:
        rows = [bound(doc) for doc in corpus.documents]

    perplexity = math.fsum(math.exp(-row.per_word_bound) for row in rows) / len(rows)
    logger.info("%s: %.4f perplexity over %d documents", corpus.split, perplexity, len(rows))
    return EvaluationReport(rows=rows, perplexity=perplexity)


def perplexity(
    corpus: Corpus,
    model: ModelParams,
    encoder: EncoderParams,
    n_eps_samples: int = 1,
    seed: int = 0,
    threads: int = 1,
) -> float:
    return evaluate(corpus, model, encoder, n_eps_samples, seed, threads).perplexity


def format_report(report: EvaluationReport) -> str:
    lines = [f"{row.doc_id}\t{row.elbo:.6f}\t{row.n_words}\t{row.per_word_bound:.6f}" for row in report.rows]
    lines.append(f"PERPLEXITY\t{report.perplexity:.6f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DocumentAnnotation:
    """Per-sentence topic posteriors of a document and the resulting topic switches."""

    doc_id: str
    posteriors: list[np.ndarray]
    topics: list[int]

    @property
    def switches(self) -> int:
        return sum(a != b for a, b in zip(self.topics, self.topics[1:]))


def annotate_document(doc: Document, encoder: EncoderParams) -> DocumentAnnotation:
    with no_grad():
        posteriors = [encode_sentence(sentence, encoder).probs.copy() for sentence in doc.sentences]
    return DocumentAnnotation(
        doc_id=doc.id,
        posteriors=posteriors,
        topics=[int(np.argmax(q)) for q in posteriors],
    )


def format_annotation(annotation: DocumentAnnotation) -> str:
    lines = []
    for i, (q, topic) in enumerate(zip(annotation.posteriors, annotation.topics)):
        probs = "\t".join(f"{p:.4f}" for p in q)
        lines.append(f"{annotation.doc_id}\t{i}\t{topic}\t{probs}")
    lines.append(f"{annotation.doc_id}\tSWITCHES\t{annotation.switches}")
    return "\n".join(lines) + "\n"
