"""Test the document and sentence encoders."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from sengen.corpus import EOS_ID, Document
from sengen.encoder import LOG_SIGMA_BOUND, EncoderParams, SentencePosterior, encode_document, encode_sentence
from sengen.errors import CorpusError, ShapeError
from sengen.gradcheck import toy_parameters
from sengen.objective import document_elbo


@pytest.fixture
def params():
    return toy_parameters(np.random.default_rng(0))


def test_shared_embeddings_are_the_decoder_table(params):
    model, encoder = params
    assert encoder.shares_embeddings
    assert encoder.emb is model["emb"]
    assert "emb" not in dict(encoder.named_parameters())


def test_unshared_embeddings_are_trainable():
    model, encoder = toy_parameters(np.random.default_rng(0), share_embeddings=False)
    assert not encoder.shares_embeddings
    assert encoder.emb is not model["emb"]
    assert dict(encoder.named_parameters())["emb"].shape == (6, 4)


def test_unshared_initialization_needs_sizes():
    with pytest.raises(ShapeError, match="vocab_size and embed_dim"):
        EncoderParams.initialize(2, 3, 3, np.random.default_rng(0))


def test_document_posterior(params):
    _, encoder = params
    epsilon = np.array([0.5, -1.5])
    posterior = encode_document([2, 3, EOS_ID, 4, EOS_ID], encoder, epsilon)
    assert posterior.mu.shape == (2,)
    assert np.all(posterior.sigma.value > 0)
    np.testing.assert_allclose(posterior.theta_hat.value, posterior.mu.value + posterior.sigma.value * epsilon)


def test_document_posterior_ignores_word_order(params):
    _, encoder = params
    epsilon = np.zeros(2)
    a = encode_document([2, 3, 4, EOS_ID], encoder, epsilon)
    b = encode_document([4, EOS_ID, 3, 2], encoder, epsilon)
    np.testing.assert_allclose(a.mu.value, b.mu.value)


def test_log_sigma_is_clamped(params):
    _, encoder = params
    encoder["b_sigma"].value[:] = 100.0
    posterior = encode_document([2, EOS_ID], encoder, np.zeros(2))
    np.testing.assert_allclose(posterior.sigma.value, np.exp(LOG_SIGMA_BOUND))


def test_document_errors(params):
    _, encoder = params
    with pytest.raises(CorpusError, match="empty document"):
        encode_document([], encoder, np.zeros(2))
    with pytest.raises(ShapeError, match="epsilon"):
        encode_document([2, EOS_ID], encoder, np.zeros(3))


def test_sentence_posteriors_are_normalized():
    rng = np.random.default_rng(2)
    for seed in range(20):
        _, encoder = toy_parameters(np.random.default_rng(seed))
        for _ in range(50):
            words = list(rng.integers(0, 6, size=rng.integers(1, 8)))
            q = encode_sentence(words, encoder).probs
            assert abs(q.sum() - 1.0) < 1e-9
            assert np.all(q >= 0)


def test_sentence_posterior_depends_on_order(params):
    _, encoder = params
    a = encode_sentence([2, 3, EOS_ID], encoder).probs
    b = encode_sentence([3, 2, EOS_ID], encoder).probs
    assert not np.allclose(a, b)


def test_empty_sentence(params):
    with pytest.raises(CorpusError, match="empty sentence"):
        encode_sentence([], params[1])


def test_posterior_from_probs_validates():
    assert SentencePosterior.from_probs([0.25, 0.75]).probs.tolist() == [0.25, 0.75]
    with pytest.raises(ShapeError, match="probability vector"):
        SentencePosterior.from_probs([0.5, 0.6])


@pytest.mark.parametrize("seed", range(5))
def test_sentence_posterior_follows_topic_permutation(seed):
    _, encoder = toy_parameters(np.random.default_rng(seed))
    rng = np.random.default_rng(seed)
    encoder["b_enc"].value[:] = rng.normal(size=2)
    words = [2, 5, 3, EOS_ID]
    before = encode_sentence(words, encoder).probs.copy()
    perm = [1, 0]
    encoder["w_enc"].value[...] = encoder["w_enc"].value[perm]
    encoder["b_enc"].value[...] = encoder["b_enc"].value[perm]
    np.testing.assert_allclose(encode_sentence(words, encoder).probs, before[perm], atol=1e-15)


def test_sentence_posterior_ignores_the_rest_of_the_document(params):
    model, encoder = params
    doc = Document("d", [[2, 3, EOS_ID], [4, 4, 5, EOS_ID], [3, EOS_ID]])
    together = document_elbo(doc, model, encoder, np.array([0.1, -0.4])).sentence_posteriors
    for sentence, posterior in zip(doc.sentences, together):
        alone = document_elbo(Document("one", [sentence]), model, encoder, np.zeros(2)).sentence_posteriors[0]
        np.testing.assert_array_equal(posterior.probs, alone.probs)
        np.testing.assert_array_equal(posterior.probs, encode_sentence(sentence, encoder).probs)
