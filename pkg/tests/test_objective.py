"""Test the ELBO terms, evaluation report and sentence annotation."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from sengen.corpus import EOS, UNK, Corpus, Document, Vocabulary
from sengen.encoder import EncoderParams, SentencePosterior
from sengen.errors import CorpusError, DataError, SupportError
from sengen.gradcheck import TOY_DOCUMENT, TOY_EPSILON, toy_parameters
from sengen.model import ModelParams, sentence_log_likelihood
from sengen.numerics import backward, constant
from sengen.objective import (
    annotate_document,
    document_elbo,
    entropy,
    evaluate,
    expected_log_prior,
    expected_reconstruction,
    format_annotation,
    format_report,
    kl_gaussian,
    perplexity,
)


def _vocabulary(size):
    tokens = [UNK, EOS] + [f"w{i}" for i in range(size - 2)]
    return Vocabulary(tokens=tokens, counts=np.ones(size, dtype=np.int64))


def _zero(*param_sets):
    for params in param_sets:
        for _, p in params.named_parameters():
            p.value[...] = 0.0


def _corpus(docs, vocab_size=6):
    return Corpus(documents=docs, split="test", vocabulary=_vocabulary(vocab_size))


DOCS = [
    TOY_DOCUMENT,
    Document("second", [[4, 4, 1]]),
    Document("third", [[2, 1], [3, 5, 5, 1], [1]]),
]


def test_kl_of_standard_normal_is_zero():
    assert abs(float(kl_gaussian(np.zeros(3), np.ones(3)))) < 1e-12


def test_kl_is_never_negative():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        mu = rng.normal(0, 2, size=k)
        sigma = np.exp(rng.normal(0, 1, size=k))
        assert float(kl_gaussian(mu, sigma)) >= -1e-12


def test_kl_closed_form():
    mu, sigma = np.array([1.0, -2.0]), np.array([0.5, 2.0])
    expected = 0.5 * np.sum(mu**2 + sigma**2 - 1 - np.log(sigma**2))
    assert float(kl_gaussian(mu, sigma)) == pytest.approx(expected, abs=1e-12)


def test_kl_rejects_non_positive_sigma():
    with pytest.raises(DataError, match="positive sigma"):
        kl_gaussian(np.zeros(2), np.array([1.0, 0.0]))


@pytest.mark.slow
def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(11)
    n = 1_000_000
    for _ in range(10):
        k = int(rng.integers(1, 4))
        mu = rng.normal(0, 1, size=k)
        sigma = rng.uniform(0.3, 2.0, size=k)
        x = mu + sigma * rng.standard_normal((n, k))
        log_ratio = (norm.logpdf(x, mu, sigma) - norm.logpdf(x)).sum(axis=1)
        stderr = log_ratio.std(ddof=1) / math.sqrt(n)
        assert abs(log_ratio.mean() - float(kl_gaussian(mu, sigma))) <= 3 * stderr


def test_entropy_of_uniform_posterior():
    q = SentencePosterior.from_probs(np.full(4, 0.25))
    assert float(entropy(q)) == pytest.approx(math.log(4))
    assert float(entropy(SentencePosterior.from_probs([1.0, 0.0]))) == 0.0


def test_expected_log_prior():
    q = SentencePosterior.from_probs([0.2, 0.8])
    theta = np.array([1.0, -1.0])
    log_mix = theta - np.log(np.exp(theta).sum())
    assert float(expected_log_prior(q, theta)) == pytest.approx(0.2 * log_mix[0] + 0.8 * log_mix[1])


def test_expected_reconstruction_mixes_topics():
    model, _ = toy_parameters(np.random.default_rng(1))
    sentence = [2, 3, 1]
    q = SentencePosterior.from_probs([0.3, 0.7])
    lls = [float(sentence_log_likelihood(model, sentence, k)) for k in range(2)]
    assert float(expected_reconstruction(q, sentence, model)) == pytest.approx(0.3 * lls[0] + 0.7 * lls[1])


def test_elbo_is_the_sum_of_its_terms():
    model, encoder = toy_parameters(np.random.default_rng(0))
    parts = document_elbo(TOY_DOCUMENT, model, encoder, TOY_EPSILON)
    total = -parts.kl + parts.expected_log_prior + parts.entropy + parts.expected_reconstruction
    assert parts.elbo == pytest.approx(total, abs=1e-12)
    assert parts.elbo == float(parts.objective)
    assert len(parts.sentence_posteriors) == 2


def test_elbo_backward_reaches_every_tensor():
    model, encoder = toy_parameters(np.random.default_rng(0), share_embeddings=False)
    backward(document_elbo(TOY_DOCUMENT, model, encoder, TOY_EPSILON).objective)
    for name, p in list(model.named_parameters()) + list(encoder.named_parameters()):
        assert np.any(p.dense_grad()), name


def test_sampled_support_must_cover_targets():
    model, encoder = toy_parameters(np.random.default_rng(0))
    with pytest.raises(SupportError):
        document_elbo(TOY_DOCUMENT, model, encoder, TOY_EPSILON, support=[1, 2, 3])


def test_document_without_sentences():
    model, encoder = toy_parameters(np.random.default_rng(0))
    with pytest.raises(CorpusError, match="no sentences"):
        document_elbo(Document("empty", []), model, encoder, TOY_EPSILON)


def test_uniform_single_topic_model_has_perplexity_vocab_size():
    rng = np.random.default_rng(0)
    model = ModelParams.initialize(1, 6, 4, 3, 3, rng)
    encoder = EncoderParams.initialize(1, 3, 3, rng, shared_emb=model["emb"])
    _zero(model, encoder)
    report = evaluate(_corpus(DOCS), model, encoder, n_eps_samples=2)
    assert report.perplexity == pytest.approx(6.0, rel=1e-3)
    for row, doc in zip(report.rows, DOCS):
        assert row.n_words == doc.n_words
        assert row.per_word_bound == pytest.approx(math.log(1 / 6), abs=1e-9)


def test_evaluation_is_seeded_and_thread_independent():
    model, encoder = toy_parameters(np.random.default_rng(4))
    corpus = _corpus(DOCS)
    serial = evaluate(corpus, model, encoder, n_eps_samples=3, seed=5)
    threaded = evaluate(corpus, model, encoder, n_eps_samples=3, seed=5, threads=3)
    assert serial == threaded
    assert perplexity(corpus, model, encoder, 3, 5) == serial.perplexity
    assert evaluate(corpus, model, encoder, n_eps_samples=3, seed=6) != serial


def test_evaluation_does_not_depend_on_document_order():
    model, encoder = toy_parameters(np.random.default_rng(4))
    forward = evaluate(_corpus(DOCS), model, encoder)
    reverse = evaluate(_corpus(DOCS[::-1]), model, encoder)
    assert {r.doc_id: r.elbo for r in forward.rows} == {r.doc_id: r.elbo for r in reverse.rows}


def test_format_report():
    model, encoder = toy_parameters(np.random.default_rng(4))
    report = evaluate(_corpus(DOCS), model, encoder)
    lines = format_report(report).splitlines()
    assert len(lines) == len(DOCS) + 1
    doc_id, elbo, n_words, per_word = lines[0].split("\t")
    assert doc_id == "toy" and int(n_words) == TOY_DOCUMENT.n_words
    assert float(per_word) == pytest.approx(float(elbo) / int(n_words), abs=1e-5)
    assert lines[-1] == f"PERPLEXITY\t{report.perplexity:.6f}"


def test_evaluate_validates_samples():
    model, encoder = toy_parameters(np.random.default_rng(4))
    with pytest.raises(DataError, match="n_eps_samples"):
        evaluate(_corpus(DOCS), model, encoder, n_eps_samples=0)


def test_annotation_counts_switches():
    _, encoder = toy_parameters(np.random.default_rng(0))
    annotation = annotate_document(DOCS[2], encoder)
    assert len(annotation.posteriors) == 3
    assert annotation.topics == [int(np.argmax(q)) for q in annotation.posteriors]
    assert annotation.switches == sum(a != b for a, b in zip(annotation.topics, annotation.topics[1:]))
    lines = format_annotation(annotation).splitlines()
    assert lines[0].split("\t")[:3] == ["third", "0", str(annotation.topics[0])]
    assert lines[-1] == f"third\tSWITCHES\t{annotation.switches}"


def test_posterior_constants_have_no_gradient():
    q = SentencePosterior.from_probs([0.5, 0.5])
    assert backward(entropy(q)) == {}
    assert not constant([1.0]).requires_grad


def test_topic_without_posterior_mass_gets_no_softmax_gradient():
    model, encoder = toy_parameters(np.random.default_rng(3), share_embeddings=False)
    encoder["b_enc"].value[:] = [0.0, -1e4]
    parts = document_elbo(TOY_DOCUMENT, model, encoder, TOY_EPSILON)
    assert all(q.probs[1] == 0.0 for q in parts.sentence_posteriors)
    backward(parts.objective)
    assert not np.any(model["w_v.1"].dense_grad())
    assert np.any(model["w_v.0"].dense_grad())
    assert np.all(np.isfinite(encoder["w_enc"].dense_grad()))


def test_perplexity_is_unchanged_by_duplicating_documents():
    model, encoder = toy_parameters(np.random.default_rng(4))
    once = perplexity(_corpus(DOCS), model, encoder, n_eps_samples=2, seed=1)
    twice = perplexity(_corpus(DOCS + DOCS), model, encoder, n_eps_samples=2, seed=1)
    assert twice == pytest.approx(once, rel=1e-12)
