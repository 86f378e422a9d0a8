"""Representative sentences per topic: beam search, stochastic sampling and top words."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, Vocabulary, detokenize
from .errors import ShapeError
from .model import DecoderState, ModelParams, decoder_init, decoder_step, draw_word
from .numerics import no_grad

logger = logging.getLogger(__name__)

DEFAULT_BEAM_WIDTH = 5
DEFAULT_MAX_LEN = 30


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    state: DecoderState

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS_ID

    def sort_key(self) -> tuple[float, tuple[int, ...], int]:
        return (-self.score, self.tokens, len(self.tokens))


@dataclass
class Beam:
    """Live hypotheses of one search, best first, plus the completed ones."""

    width: int
    hypotheses: list[Hypothesis]
    completed: list[Hypothesis]

    def best(self) -> Hypothesis:
        return min(self.completed + self.hypotheses, key=Hypothesis.sort_key)

    def done(self) -> bool:
        if not self.hypotheses:
            return True
        if not self.completed:
            return False
        # extending a hypothesis never raises its score
        best_completed = max(h.score for h in self.completed)
        return all(best_completed >= h.score for h in self.hypotheses)


def _expand(params: ModelParams, hyp: Hypothesis, topic: int, width: int) -> list[Hypothesis]:
    state, dist = decoder_step(params, hyp.state, topic)
    logp = dist.logp.value
    ids = np.arange(logp.shape[0])
    # only the `width` best continuations of one hypothesis can survive the global cut
    keep = np.lexsort((ids, -logp))[:width]
    return [
        Hypothesis(tokens=hyp.tokens + (int(w),), score=hyp.score + float(logp[w]), state=state.feed(int(w)))
        for w in keep
    ]


def beam_search(
    params: ModelParams, topic: int, width: int = DEFAULT_BEAM_WIDTH, max_len: int = DEFAULT_MAX_LEN
) -> tuple[list[int], float]:
    """Length-capped beam search over the topic's full-vocabulary decoder.

    Scores are cumulative log-probabilities without length normalization. Ties are
    broken by smaller token ids, then by shorter length.

    Args:
        params: Decoder parameters
        topic: Topic to decode
        width: Number of hypotheses kept per step
        max_len: Maximum sequence length, `<eos>` included

    Returns:
        (token ids, log-probability) of the best completed hypothesis, or of the best
        hypothesis of length max_len if that scores higher

    Raises:
        TopicError: If topic is out of range
        ShapeError: If width or max_len is smaller than 1
    """
    if width < 1 or max_len < 1:
        raise ShapeError(f"beam search needs width >= 1 and max_len >= 1, got {width} and {max_len}")

    with no_grad():
        beam = Beam(width=width, hypotheses=[Hypothesis((), 0.0, decoder_init(params, topic))], completed=[])
        for _ in range(max_len):
            candidates = [c for hyp in beam.hypotheses for c in _expand(params, hyp, topic, width)]
            candidates.sort(key=Hypothesis.sort_key)
            survivors = candidates[:width]
            beam.completed.extend(h for h in survivors if h.finished)
            beam.hypotheses = [h for h in survivors if not h.finished]
            if beam.done():
                break
        best = beam.best()
    logger.debug("topic %d: beam width %d best score %.4f", topic, width, best.score)
    return list(best.tokens), best.score


def stochastic_sample(params: ModelParams, topic: int, max_len: int, rng: np.random.Generator) -> list[int]:
    """Draw each next word from the full-vocabulary distribution until `<eos>` or max_len words."""
    if max_len < 1:
        raise ShapeError(f"max_len must be at least 1, got {max_len}")
    words: list[int] = []
    with no_grad():
        state = decoder_init(params, topic)
        while len(words) < max_len:
            state, dist = decoder_step(params, state, topic)
            word = draw_word(dist, rng)
            words.append(word)
            if word == EOS_ID:
                break
            state = state.feed(word)
    return words


def top_words(params: ModelParams, topic: int, n: int) -> list[int]:
    """Word ids ranked by the topic's first-step probability (ties by id)."""
    with no_grad():
        _, dist = decoder_step(params, decoder_init(params, topic), topic)
    logp = dist.logp.value
    order = np.lexsort((np.arange(logp.shape[0]), -logp))
    return [int(w) for w in order[:n]]


def format_topic_block(
    topic: int,
    best: tuple[Sequence[int], float],
    samples: Sequence[Sequence[int]],
    vocabulary: Vocabulary,
    top: Sequence[int] | None = None,
) -> str:
    tokens, score = best
    lines = [f"TOPIC {topic}", f"BEST\t{score:.6f}\t{detokenize(vocabulary.decode(tokens))}"]
    lines.extend(f"SAMPLE {i}\t{detokenize(vocabulary.decode(s))}" for i, s in enumerate(samples))
    if top is not None:
        lines.append("TOP\t" + " ".join(vocabulary.decode(top)))
    return "\n".join(lines) + "\n"
