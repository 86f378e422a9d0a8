"""Test beam search, stochastic sampling and the topic report block."""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from sengen.corpus import EOS, EOS_ID, UNK, Vocabulary
from sengen.errors import ShapeError, TopicError
from sengen.generation import beam_search, format_topic_block, stochastic_sample, top_words
from sengen.model import ModelParams, decoder_init, decoder_step, sentence_log_likelihood
from sengen.numerics import no_grad

VOCAB_SIZE = 4


def _model(seed, vocab_size=VOCAB_SIZE, n_topics=2):
    return ModelParams.initialize(
        n_topics=n_topics,
        vocab_size=vocab_size,
        embed_dim=3,
        hidden_dim=3,
        readout_dim=3,
        rng=np.random.default_rng(seed),
        init_scale=1.5,
    )


def _score(params, topic, tokens):
    """Sum of full-vocabulary decoder log-probabilities along tokens."""
    total = 0.0
    with no_grad():
        state = decoder_init(params, topic)
        for word in tokens:
            state, dist = decoder_step(params, state, topic)
            total += float(dist.logp.value[word])
            state = state.feed(word)
    return total


def _exhaustive(params, topic, max_len):
    words = [w for w in range(params.vocab_size) if w != EOS_ID]
    candidates = []
    for length in range(max_len):
        candidates.extend(prefix + (EOS_ID,) for prefix in itertools.product(words, repeat=length))
    candidates.extend(itertools.product(words, repeat=max_len))
    return max((_score(params, topic, c), c) for c in candidates)


def _greedy(params, topic, max_len):
    tokens = []
    with no_grad():
        state = decoder_init(params, topic)
        while len(tokens) < max_len:
            state, dist = decoder_step(params, state, topic)
            word = int(np.argmax(dist.logp.value))
            tokens.append(word)
            if word == EOS_ID:
                break
            state = state.feed(word)
    return tokens


@pytest.mark.parametrize("seed", range(20))
def test_wide_beam_finds_the_exhaustive_optimum(seed):
    params = _model(seed)
    max_len = 1 + seed % 3
    topic = seed % 2
    best_score, best_tokens = _exhaustive(params, topic, max_len)
    tokens, score = beam_search(params, topic, width=VOCAB_SIZE**max_len, max_len=max_len)
    assert tuple(tokens) == best_tokens
    assert score == pytest.approx(best_score, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_narrow_beams_never_beat_the_optimum(seed):
    params = _model(seed)
    best_score, _ = _exhaustive(params, 0, 3)
    for width in (1, 2, 3):
        _, score = beam_search(params, 0, width=width, max_len=3)
        assert score <= best_score + 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_wider_beams_never_score_lower(seed):
    params = _model(seed)
    max_len = 2 + seed % 3
    scores = [beam_search(params, seed % 2, width=w, max_len=max_len)[1] for w in range(1, VOCAB_SIZE**max_len + 1)]
    assert all(wide >= narrow - 1e-12 for narrow, wide in zip(scores, scores[1:]))


@pytest.mark.parametrize("seed", range(10))
def test_width_one_is_greedy(seed):
    params = _model(seed, vocab_size=7)
    tokens, score = beam_search(params, 1, width=1, max_len=6)
    assert tokens == _greedy(params, 1, 6)
    assert score == pytest.approx(_score(params, 1, tokens), abs=1e-12)


def test_beam_score_matches_sentence_likelihood():
    for seed in range(10):
        params = _model(seed, vocab_size=8)
        tokens, score = beam_search(params, 0, width=4, max_len=10)
        assert tokens[-1] == EOS_ID or len(tokens) == 10
        assert 1 <= len(tokens) <= 10
        if tokens[-1] == EOS_ID:
            assert float(sentence_log_likelihood(params, tokens, 0)) == pytest.approx(score, abs=1e-9)


def test_beam_search_argument_errors():
    params = _model(0)
    with pytest.raises(ShapeError):
        beam_search(params, 0, width=0)
    with pytest.raises(ShapeError):
        beam_search(params, 0, max_len=0)
    with pytest.raises(TopicError, match="topic 2"):
        beam_search(params, 2)


def test_stochastic_sample_is_seeded():
    params = _model(3, vocab_size=8)
    a = [stochastic_sample(params, 0, 12, np.random.default_rng(4)) for _ in range(3)]
    b = [stochastic_sample(params, 0, 12, np.random.default_rng(4)) for _ in range(3)]
    assert a == b
    for words in a:
        assert len(words) <= 12
        assert EOS_ID not in words[:-1]


def test_stochastic_sample_stops_at_certain_eos():
    params = _model(0)
    params["b_v"].value[EOS_ID] = 100.0
    assert stochastic_sample(params, 1, 5, np.random.default_rng(0)) == [EOS_ID]


def test_stochastic_sample_does_not_force_eos():
    params = _model(0)
    params["b_v"].value[EOS_ID] = -100.0
    words = stochastic_sample(params, 0, 4, np.random.default_rng(0))
    assert len(words) == 4
    assert EOS_ID not in words


@pytest.mark.slow
def test_first_word_frequencies():
    params = _model(5)
    with no_grad():
        _, dist = decoder_step(params, decoder_init(params, 0), 0)
    expected = dist.probs()
    rng = np.random.default_rng(1)
    n = 50_000
    counts = np.bincount([stochastic_sample(params, 0, 1, rng)[0] for _ in range(n)], minlength=VOCAB_SIZE)
    stderr = np.sqrt(expected * (1 - expected) / n)
    assert np.all(np.abs(counts / n - expected) <= 3 * stderr)


def test_top_words_rank_first_step_probabilities():
    params = _model(2, vocab_size=9)
    with no_grad():
        _, dist = decoder_step(params, decoder_init(params, 1), 1)
    ranked = top_words(params, 1, 9)
    assert sorted(ranked) == list(range(9))
    probs = dist.probs()
    assert all(probs[a] >= probs[b] for a, b in zip(ranked, ranked[1:]))
    assert top_words(params, 1, 3) == ranked[:3]


def test_top_words_break_ties_by_id():
    params = _model(0, vocab_size=5)
    for _, p in params.named_parameters():
        p.value[...] = 0.0
    assert top_words(params, 0, 5) == [0, 1, 2, 3, 4]


def test_format_topic_block():
    vocabulary = Vocabulary(tokens=[UNK, EOS, "cats", "purr"], counts=np.ones(4, dtype=np.int64))
    block = format_topic_block(3, ([2, 3, EOS_ID], -1.5), [[3, EOS_ID], [2, 2]], vocabulary, top=[3, 2])
    assert block.splitlines() == [
        "TOPIC 3",
        "BEST\t-1.500000\tcats purr",
        "SAMPLE 0\tpurr",
        "SAMPLE 1\tcats cats",
        "TOP\tpurr cats",
    ]
    lines = format_topic_block(0, ([EOS_ID], 0.0), [], vocabulary).splitlines()
    assert lines[0] == "TOPIC 0" and len(lines) == 2
    assert not any(line.startswith("TOP\t") for line in lines)
