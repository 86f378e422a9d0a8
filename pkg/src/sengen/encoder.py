"""Variational encoders: Gaussian document posterior q(θ|w_d) and sentence topic posterior q(z|w_s)."""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import CorpusError, ShapeError
from .model import DEFAULT_INIT_SCALE, ParameterSet, init_tensors
from .numerics import (
    DTYPE,
    Node,
    Parameter,
    add,
    affine,
    clamp,
    constant,
    embedding_lookup,
    embedding_sum,
    exp_elem,
    hadamard,
    log_softmax,
    sigmoid_elem,
    sub,
    tanh_elem,
)

LOG_SIGMA_BOUND = 8.0


def encoder_shapes(
    n_topics: int,
    embed_dim: int,
    doc_hidden_dim: int,
    encoder_hidden_dim: int,
    vocab_size: int | None = None,
) -> dict[str, tuple[int, ...]]:
    """Encoder tensor layout; `emb` is present only when the encoders own their embeddings."""
    K, E, Hg, He = n_topics, embed_dim, doc_hidden_dim, encoder_hidden_dim
    shapes: dict[str, tuple[int, ...]] = {}
    if vocab_size is not None:
        shapes["emb"] = (vocab_size, E)
    shapes.update(
        {
            "w_gamma": (Hg, E),
            "b_gamma": (Hg,),
            "w_mu": (K, Hg),
            "b_mu": (K,),
            "w_sigma": (K, Hg),
            "b_sigma": (K,),
        }
    )
    for gate in ("gz", "gr", "gn"):
        shapes.update({f"{gate}_x": (He, E), f"{gate}_h": (He, He), f"{gate}_b": (He,)})
    shapes.update({"w_enc": (K, He), "b_enc": (K,)})
    return shapes


class EncoderParams(ParameterSet):
    """Document and sentence encoder weights.

    With shared embeddings the word table is the decoder's `emb` Parameter and is not
    listed among this set's own tensors.
    """

    def __init__(self, tensors: dict[str, Parameter], shared_emb: Parameter | None = None):
        super().__init__(tensors)
        if shared_emb is None and "emb" not in tensors:
            raise ShapeError("encoder needs either its own 'emb' tensor or the decoder's shared embedding")
        self.emb = shared_emb if shared_emb is not None else tensors["emb"]
        self.shares_embeddings = shared_emb is not None
        expected = encoder_shapes(
            self.n_topics,
            self.emb.shape[1],
            tensors["w_gamma"].shape[0],
            tensors["w_enc"].shape[1],
            None if self.shares_embeddings else self.emb.shape[0],
        )
        actual = {name: p.shape for name, p in tensors.items()}
        if actual != expected:
            raise ShapeError(f"encoder tensors {actual} do not match expected layout {expected}")

    @classmethod
    def initialize(
        cls,
        n_topics: int,
        doc_hidden_dim: int,
        encoder_hidden_dim: int,
        rng: np.random.Generator,
        shared_emb: Parameter | None = None,
        vocab_size: int | None = None,
        embed_dim: int | None = None,
        init_scale: float = DEFAULT_INIT_SCALE,
    ) -> "EncoderParams":
        if shared_emb is not None:
            vocab_size, embed_dim = None, shared_emb.shape[1]
        elif vocab_size is None or embed_dim is None:
            raise ShapeError("unshared encoder embeddings need vocab_size and embed_dim")
        shapes = encoder_shapes(n_topics, embed_dim, doc_hidden_dim, encoder_hidden_dim, vocab_size)
        return cls(init_tensors(shapes, rng, init_scale), shared_emb=shared_emb)

    @property
    def n_topics(self) -> int:
        return self.tensors["w_mu"].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.tensors["w_enc"].shape[1]


@dataclass(frozen=True)
class DocumentPosterior:
    """Gaussian q(θ_d | w_d) parameters and the reparametrized sample θ̂ = μ + σ ⊙ ε."""

    mu: Node
    sigma: Node
    theta_hat: Node
    epsilon: np.ndarray


@dataclass(frozen=True)
class SentencePosterior:
    q: Node

    @classmethod
    def from_probs(cls, probs: Sequence[float] | np.ndarray) -> "SentencePosterior":
        q = np.asarray(probs, dtype=DTYPE)
        if q.ndim != 1 or (q < 0).any() or abs(q.sum() - 1.0) > 1e-6:
            raise ShapeError(f"topic posterior must be a probability vector, got {q}")
        return cls(q=constant(q))

    @property
    def probs(self) -> np.ndarray:
        return self.q.value


def encode_document(word_ids: Sequence[int], params: EncoderParams, epsilon: np.ndarray) -> DocumentPosterior:
    """Bag-of-embeddings feed-forward encoder with reparametrized sampling.

    log σ is clamped to [−8, 8] before exponentiation.
    """
    if len(word_ids) == 0:
        raise CorpusError("cannot encode an empty document")
    epsilon = np.asarray(epsilon, dtype=DTYPE)
    if epsilon.shape != (params.n_topics,):
        raise ShapeError(f"epsilon{epsilon.shape} does not match {params.n_topics} topics")

    gamma = tanh_elem(affine(params["w_gamma"], embedding_sum(params.emb, word_ids), params["b_gamma"]))
    mu = affine(params["w_mu"], gamma, params["b_mu"])
    log_sigma = clamp(affine(params["w_sigma"], gamma, params["b_sigma"]), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
    sigma = exp_elem(log_sigma)
    theta_hat = add(mu, hadamard(sigma, constant(epsilon)))
    return DocumentPosterior(mu=mu, sigma=sigma, theta_hat=theta_hat, epsilon=epsilon)


def _gru_step(params: EncoderParams, h: Node, x: Node) -> Node:
    update = sigmoid_elem(add(affine(params["gz_x"], x, params["gz_b"]), affine(params["gz_h"], h)))
    reset = sigmoid_elem(add(affine(params["gr_x"], x, params["gr_b"]), affine(params["gr_h"], h)))
    candidate = tanh_elem(add(affine(params["gn_x"], x, params["gn_b"]), affine(params["gn_h"], hadamard(reset, h))))
    return add(candidate, hadamard(update, sub(h, candidate)))


def sentence_state(word_ids: Sequence[int], params: EncoderParams) -> Node:
    """Final GRU state over the sentence's word embeddings."""
    if len(word_ids) == 0:
        raise CorpusError("cannot encode an empty sentence")
    h = constant(np.zeros(params.hidden_dim))
    for word in word_ids:
        h = _gru_step(params, h, embedding_lookup(params.emb, word))
    return h


def encode_sentence(word_ids: Sequence[int], params: EncoderParams) -> SentencePosterior:
    """GRU over the sentence's word embeddings; softmax readout at the last step."""
    h = sentence_state(word_ids, params)
    log_q = log_softmax(affine(params["w_enc"], h, params["b_enc"]))
    return SentencePosterior(q=exp_elem(log_q))
