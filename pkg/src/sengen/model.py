"""Generative side of SenGen: topic-conditioned recurrent decoder and ancestral sampling."""

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import softmax

from .corpus import EOS_ID, Document
from .errors import CorpusError, ShapeError, SupportError, TopicError
from .numerics import (
    DTYPE,
    Node,
    Parameter,
    add,
    affine,
    constant,
    embedding_lookup,
    hadamard,
    log_softmax,
    no_grad,
    pick,
    sigmoid_elem,
    sub,
    tanh_elem,
)

logger = logging.getLogger(__name__)

DECODER_CELLS = ("elman", "gru")
DEFAULT_INIT_SCALE = 0.08


class ParameterSet:
    """Ordered collection of named Parameters."""

    def __init__(self, tensors: dict[str, Parameter]):
        self.tensors = tensors

    def __getitem__(self, name: str) -> Parameter:
        return self.tensors[name]

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self.tensors.items())

    def n_weights(self) -> int:
        return sum(p.value.size for p in self.tensors.values())


def init_tensors(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator, scale: float) -> dict[str, Parameter]:
    """Uniform(−scale, scale) weights and zero biases, drawn in `shapes` order."""
    tensors = {}
    for name, shape in shapes.items():
        if _is_bias(name):
            value = np.zeros(shape, dtype=DTYPE)
        else:
            value = rng.uniform(-scale, scale, size=shape).astype(DTYPE)
        tensors[name] = Parameter(value, name=name)
    return tensors


def _is_bias(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf == "b" or leaf.startswith("b_") or leaf.endswith("_b")


def decoder_shapes(
    n_topics: int,
    vocab_size: int,
    embed_dim: int,
    topic_embed_dim: int,
    hidden_dim: int,
    readout_dim: int,
    decoder_cell: str = "elman",
) -> dict[str, tuple[int, ...]]:
    """Tensor names and shapes in checkpoint order.

    Recurrent and readout weights are shared by all topics; only `w_v.<k>` is per topic.
    """
    if decoder_cell not in DECODER_CELLS:
        raise ShapeError(f"unknown decoder_cell {decoder_cell!r}, expected one of {DECODER_CELLS}")
    V, E, Ez, H, R = vocab_size, embed_dim, topic_embed_dim, hidden_dim, readout_dim
    shapes: dict[str, tuple[int, ...]] = {
        "emb": (V, E),
        "emb_z": (n_topics, Ez),
        "w_h": (H, H),
        "w_e": (H, E),
        "w_c": (H, Ez),
        "b": (H,),
    }
    if decoder_cell == "gru":
        for gate in ("gz", "gr"):
            shapes.update({f"{gate}_h": (H, H), f"{gate}_e": (H, E), f"{gate}_c": (H, Ez), f"{gate}_b": (H,)})
    shapes.update({"ro_h": (R, H), "ro_e": (R, E), "ro_c": (R, Ez), "ro_b": (R,)})
    for k in range(n_topics):
        shapes[f"w_v.{k}"] = (V, R)
    shapes["b_v"] = (V,)
    return shapes


class ModelParams(ParameterSet):
    """Decoder weights β plus word and topic embeddings."""

    def __init__(self, tensors: dict[str, Parameter], decoder_cell: str = "elman"):
        super().__init__(tensors)
        self.decoder_cell = decoder_cell
        expected = decoder_shapes(
            self.n_topics,
            self.vocab_size,
            self.embed_dim,
            self.topic_embed_dim,
            self.hidden_dim,
            self.readout_dim,
            decoder_cell,
        )
        actual = {name: p.shape for name, p in tensors.items()}
        if actual != expected:
            raise ShapeError(f"model tensors {actual} do not match expected layout {expected}")

    @classmethod
    def initialize(
        cls,
        n_topics: int,
        vocab_size: int,
        embed_dim: int,
        hidden_dim: int,
        readout_dim: int,
        rng: np.random.Generator,
        topic_embed_dim: int | None = None,
        decoder_cell: str = "elman",
        init_scale: float = DEFAULT_INIT_SCALE,
    ) -> "ModelParams":
        shapes = decoder_shapes(
            n_topics,
            vocab_size,
            embed_dim,
            topic_embed_dim or embed_dim,
            hidden_dim,
            readout_dim,
            decoder_cell,
        )
        return cls(init_tensors(shapes, rng, init_scale), decoder_cell=decoder_cell)

    @property
    def n_topics(self) -> int:
        return self.tensors["emb_z"].shape[0]

    @property
    def vocab_size(self) -> int:
        return self.tensors["emb"].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.tensors["emb"].shape[1]

    @property
    def topic_embed_dim(self) -> int:
        return self.tensors["emb_z"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.tensors["w_h"].shape[0]

    @property
    def readout_dim(self) -> int:
        return self.tensors["ro_h"].shape[0]

    def softmax_weight(self, topic: int) -> Parameter:
        return self.tensors[f"w_v.{topic}"]

    def check_topic(self, topic: int) -> None:
        if not 0 <= topic < self.n_topics:
            raise TopicError(f"topic {topic} out of range 0..{self.n_topics - 1}")


@dataclass(frozen=True)
class DecoderState:
    """Recurrent state h_i, the word to feed next (None for the zeroth word) and c_s."""

    h: Node
    prev_word: int | None
    context: Node
    topic: int

    def feed(self, word: int) -> "DecoderState":
        return replace(self, prev_word=word)


@dataclass(frozen=True)
class WordDistribution:
    """Log-probabilities over `support` (sorted ids), or over the whole vocabulary when support is None."""

    logp: Node
    support: np.ndarray | None

    def position(self, word: int) -> int:
        if self.support is None:
            return word
        pos = int(np.searchsorted(self.support, word))
        if pos >= len(self.support) or self.support[pos] != word:
            raise SupportError(f"word {word} is not in the vocabulary support")
        return pos

    def log_prob(self, word: int) -> Node:
        return pick(self.logp, self.position(word))

    def word_ids(self) -> np.ndarray:
        return np.arange(self.logp.shape[0]) if self.support is None else self.support

    def probs(self) -> np.ndarray:
        p = np.exp(self.logp.value)
        return p / p.sum()


def normalize_support(support: Sequence[int] | np.ndarray | None, vocab_size: int) -> np.ndarray | None:
    """Sorted unique ids, or None when the support is the full vocabulary."""
    if support is None:
        return None
    ids = np.unique(np.asarray(support, dtype=np.intp))
    if ids.size and (ids[0] < 0 or ids[-1] >= vocab_size):
        raise SupportError(f"support ids must lie in 0..{vocab_size - 1}")
    if ids.size == vocab_size:
        return None
    if ids.size == 0:
        raise SupportError("vocabulary support is empty")
    return ids


def decoder_init(params: ModelParams, topic: int) -> DecoderState:
    params.check_topic(topic)
    return DecoderState(
        h=constant(np.zeros(params.hidden_dim)),
        prev_word=None,
        context=embedding_lookup(params["emb_z"], topic),
        topic=topic,
    )


def _recurrent_update(params: ModelParams, h_prev: Node, e: Node, c: Node) -> Node:
    if params.decoder_cell == "elman":
        return tanh_elem(
            add(affine(params["w_h"], h_prev, params["b"]), affine(params["w_e"], e), affine(params["w_c"], c))
        )

    update = sigmoid_elem(
        add(affine(params["gz_h"], h_prev, params["gz_b"]), affine(params["gz_e"], e), affine(params["gz_c"], c))
    )
    reset = sigmoid_elem(
        add(affine(params["gr_h"], h_prev, params["gr_b"]), affine(params["gr_e"], e), affine(params["gr_c"], c))
    )
    candidate = tanh_elem(
        add(
            affine(params["w_h"], hadamard(reset, h_prev), params["b"]),
            affine(params["w_e"], e),
            affine(params["w_c"], c),
        )
    )
    # (1 - z) * n + z * h_prev
    return add(candidate, hadamard(update, sub(h_prev, candidate)))


def decoder_step(
    params: ModelParams,
    state: DecoderState,
    topic: int,
    support: np.ndarray | None = None,
    target: int | None = None,
) -> tuple[DecoderState, WordDistribution]:
    """Advance the decoder one position and return the next-word distribution.

    Args:
        params: Decoder parameters
        state: Current state; its prev_word is fed as w_{i-1}
        topic: Topic whose softmax layer generates the word
        support: Normalized vocabulary support (see normalize_support), None for all words
        target: Word that will be scored; must lie in the support

    Returns:
        (state carrying h_i, distribution over the support)
    """
    params.check_topic(topic)
    if state.topic != topic:
        raise TopicError(f"decoder state was initialized for topic {state.topic}, stepped with topic {topic}")

    if state.prev_word is None:
        e = constant(np.zeros(params.embed_dim))
    else:
        e = embedding_lookup(params["emb"], state.prev_word)
    c = state.context

    h = _recurrent_update(params, state.h, e, c)
    r = tanh_elem(add(affine(params["ro_h"], h, params["ro_b"]), affine(params["ro_e"], e), affine(params["ro_c"], c)))
    logits = affine(params.softmax_weight(topic), r, params["b_v"], rows=support)
    dist = WordDistribution(logp=log_softmax(logits), support=support)
    if target is not None:
        dist.position(target)
    return replace(state, h=h), dist


def sentence_log_likelihood(
    params: ModelParams, words: Sequence[int], topic: int, support: np.ndarray | None = None
) -> Node:
    """log P(w_s | z_s = topic) under teacher forcing."""
    if not words or words[-1] != EOS_ID:
        raise CorpusError("sentence must be non-empty and end with <eos>")
    state = decoder_init(params, topic)
    terms = []
    for word in words:
        state, dist = decoder_step(params, state, topic, support, target=word)
        terms.append(dist.log_prob(word))
        state = state.feed(word)
    return add(*terms)


@dataclass(frozen=True)
class SampledDocument:
    document: Document
    theta: np.ndarray
    topics: list[int]


def draw_word(dist: WordDistribution, rng: np.random.Generator, allow_eos: bool = True) -> int:
    p = dist.probs()
    ids = dist.word_ids()
    if not allow_eos:
        p = np.where(ids == EOS_ID, 0.0, p)
        p = p / p.sum()
    return int(ids[rng.choice(len(p), p=p)])


def sample_sentence(
    params: ModelParams,
    topic: int,
    max_len: int,
    rng: np.random.Generator,
    sentence_length: int | None = None,
) -> list[int]:
    """Draw words until `<eos>`; `<eos>` is forced at position max_len.

    With sentence_length set, exactly that many non-`<eos>` words are drawn before `<eos>`.
    """
    n_free = (max_len - 1) if sentence_length is None else sentence_length
    words = []
    with no_grad():
        state = decoder_init(params, topic)
        for _ in range(n_free):
            state, dist = decoder_step(params, state, topic)
            word = draw_word(dist, rng, allow_eos=sentence_length is None)
            words.append(word)
            if word == EOS_ID:
                return words
            state = state.feed(word)
    return words + [EOS_ID]


def sample_document(
    params: ModelParams,
    n_sentences: int,
    max_len: int,
    rng: np.random.Generator,
    theta: np.ndarray | None = None,
    sentence_length: int | None = None,
    doc_id: str = "sample",
) -> SampledDocument:
    """Ancestral sampling: θ ~ N(0, I), z_s ~ Mult(softmax θ), words from the z_s decoder.

    A given theta replaces the prior draw. Deterministic for a given generator state.
    """
    if n_sentences < 1:
        raise ShapeError(f"n_sentences must be at least 1, got {n_sentences}")
    if max_len < 1:
        raise ShapeError(f"max_len must be at least 1, got {max_len}")

    if theta is None:
        theta = rng.standard_normal(params.n_topics)
    theta = np.asarray(theta, dtype=DTYPE)
    mixture = softmax(theta)

    topics = [int(rng.choice(params.n_topics, p=mixture)) for _ in range(n_sentences)]
    sentences = [sample_sentence(params, z, max_len, rng, sentence_length) for z in topics]
    return SampledDocument(document=Document(id=doc_id, sentences=sentences), theta=theta, topics=topics)
