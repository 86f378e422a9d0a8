"""Brute-force reference computations and synthetic corpora with known sentence topics."""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .config import SyntheticSpec
from .corpus import EOS, UNK, Corpus, Document, Vocabulary
from .errors import CorpusError, DataError
from .model import ModelParams, decoder_shapes, sample_document, sentence_log_likelihood
from .numerics import DTYPE, Parameter, no_grad

logger = logging.getLogger(__name__)

MAX_ORACLE_TOPICS = 16
MAX_RECOVERY_TOPICS = 8
_THETA_CHUNK = 8192
_READOUT_SATURATION = 10.0


def oracle_log_likelihood(
    doc: Document, params: ModelParams, n_theta_samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Monte-Carlo estimate of log P(w_d): exact over sentence topics, sampled over θ.

    Args:
        doc: Document to score
        params: Decoder parameters
        n_theta_samples: Number of θ ~ N(0, I) draws
        rng: Source of the θ draws

    Returns:
        (log-mean-exp estimate, delta-method standard error of that estimate)

    Raises:
        DataError: If the model has more than 16 topics or n_theta_samples < 1
    """
    n_topics = params.n_topics
    if n_topics > MAX_ORACLE_TOPICS:
        raise DataError(f"oracle likelihood enumerates topics; {n_topics} > {MAX_ORACLE_TOPICS}")
    if n_theta_samples < 1:
        raise DataError(f"n_theta_samples must be at least 1, got {n_theta_samples}")

    with no_grad():
        # (sentences, topics)
        sentence_ll = np.array(
            [[float(sentence_log_likelihood(params, s, k)) for k in range(n_topics)] for s in doc.sentences]
        )

    log_weights = np.empty(n_theta_samples, dtype=DTYPE)
    for start in range(0, n_theta_samples, _THETA_CHUNK):
        theta = rng.standard_normal((min(_THETA_CHUNK, n_theta_samples - start), n_topics))
        log_mixture = theta - logsumexp(theta, axis=1, keepdims=True)
        per_sentence = logsumexp(log_mixture[:, None, :] + sentence_ll[None, :, :], axis=2)
        log_weights[start : start + len(theta)] = per_sentence.sum(axis=1)

    estimate = float(logsumexp(log_weights) - math.log(n_theta_samples))
    if n_theta_samples == 1:
        return estimate, math.inf
    weights = np.exp(log_weights - log_weights.max())
    stderr = float(np.std(weights, ddof=1) / (math.sqrt(n_theta_samples) * weights.mean()))
    return estimate, stderr


@dataclass
class SyntheticCorpus:
    train: Corpus
    valid: Corpus
    test: Corpus
    labels: dict[str, list[int]]
    vocabulary: Vocabulary
    params: ModelParams
    thetas: dict[str, np.ndarray]


def block_tokens(n_topics: int, block_size: int) -> list[str]:
    return [f"t{k}_{j}" for k in range(n_topics) for j in range(block_size)]


def block_of(word: int, block_size: int) -> int:
    """Topic whose block holds the given (non-reserved) word id."""
    return (word - 2) // block_size


def synthetic_model(spec: SyntheticSpec) -> ModelParams:
    """Decoder whose topic-k softmax puts nearly all mass uniformly on block k.

    Recurrent weights are zero and the readout saturates at 1, so every position emits
    from the same per-topic distribution.
    """
    vocab_size = 2 + spec.n_topics * spec.block_size
    shapes = decoder_shapes(
        spec.n_topics, vocab_size, spec.embed_dim, spec.embed_dim, spec.hidden_dim, spec.readout_dim
    )
    tensors = {name: np.zeros(shape, dtype=DTYPE) for name, shape in shapes.items()}
    tensors["ro_b"][:] = _READOUT_SATURATION
    per_unit = spec.peak_logit / (spec.readout_dim * math.tanh(_READOUT_SATURATION))
    for k in range(spec.n_topics):
        start = 2 + k * spec.block_size
        tensors[f"w_v.{k}"][start : start + spec.block_size, :] = per_unit
    return ModelParams({name: Parameter(value, name=name) for name, value in tensors.items()})


def make_synthetic_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    """Sample train/valid/test corpora from a hand-set model with disjoint topic blocks.

    θ_d is concentration · N(0, I); each sentence has exactly words_per_sentence
    words followed by `<eos>`. Deterministic for a given spec.
    """
    params = synthetic_model(spec)
    rng = np.random.default_rng(spec.seed)
    sizes = {"train": spec.n_docs, "valid": spec.n_valid_docs, "test": spec.n_test_docs}

    documents: dict[str, list[Document]] = {}
    labels: dict[str, list[int]] = {}
    thetas: dict[str, np.ndarray] = {}
    for split, n_docs in sizes.items():
        documents[split] = []
        for i in range(n_docs):
            doc_id = f"synth-{split}-{i:05d}"
            theta = spec.concentration * rng.standard_normal(spec.n_topics)
            sampled = sample_document(
                params,
                n_sentences=spec.sentences_per_doc,
                max_len=spec.words_per_sentence + 1,
                rng=rng,
                theta=theta,
                sentence_length=spec.words_per_sentence,
                doc_id=doc_id,
            )
            documents[split].append(sampled.document)
            labels[doc_id] = sampled.topics
            thetas[doc_id] = theta

    tokens = [UNK, EOS] + block_tokens(spec.n_topics, spec.block_size)
    train_ids = np.concatenate([np.asarray(doc.word_ids) for doc in documents["train"]])
    vocabulary = Vocabulary(tokens=tokens, counts=np.bincount(train_ids, minlength=len(tokens)))
    corpora = {split: Corpus(documents=docs, split=split, vocabulary=vocabulary) for split, docs in documents.items()}
    logger.info(
        "synthetic corpus: %d topics, %d tokens, %d/%d/%d documents",
        spec.n_topics,
        len(vocabulary),
        spec.n_docs,
        spec.n_valid_docs,
        spec.n_test_docs,
    )
    return SyntheticCorpus(
        train=corpora["train"],
        valid=corpora["valid"],
        test=corpora["test"],
        labels=labels,
        vocabulary=vocabulary,
        params=params,
        thetas=thetas,
    )


def topic_recovery_score(predicted: Sequence[int], truth: Sequence[int]) -> float:
    """Accuracy of predicted sentence topics under the best one-to-one relabeling.

    Raises:
        DataError: On length mismatch, empty input or more than 8 topics
    """
    if len(predicted) != len(truth):
        raise DataError(f"{len(predicted)} predicted labels but {len(truth)} true labels")
    if len(truth) == 0:
        raise DataError("cannot score an empty labelling")
    pred, true = np.asarray(predicted, dtype=np.intp), np.asarray(truth, dtype=np.intp)
    if min(pred.min(), true.min()) < 0:
        raise DataError("topic labels must be non-negative")
    n_topics = int(max(pred.max(), true.max())) + 1
    if n_topics > MAX_RECOVERY_TOPICS:
        raise DataError(f"recovery scoring supports at most {MAX_RECOVERY_TOPICS} topics, got {n_topics}")

    confusion = np.zeros((n_topics, n_topics), dtype=np.int64)
    np.add.at(confusion, (pred, true), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum()) / len(truth)


def write_labels(path: str | Path, labels: Mapping[str, Sequence[int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc_id, topics in labels.items():
            for i, topic in enumerate(topics):
                f.write(f"{doc_id}\t{i}\t{topic}\n")


def read_labels(path: str | Path) -> dict[str, list[int]]:
    labels: dict[str, list[int]] = {}
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected doc_id, sentence index and topic")
                try:
                    index, topic = int(parts[1]), int(parts[2])
                except ValueError as e:
                    raise CorpusError(f"{path}:{lineno}: malformed sentence index or topic ({e})") from e
                doc_id = parts[0]
                topics = labels.setdefault(doc_id, [])
                if index != len(topics):
                    raise CorpusError(f"{path}:{lineno}: sentence index {index} out of order for {doc_id!r}")
                topics.append(topic)
    except OSError as e:
        raise CorpusError(f"Failed to read labels: {e}") from e
    return labels
