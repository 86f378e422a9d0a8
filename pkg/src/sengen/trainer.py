"""Stochastic ELBO training: sampled vocabulary support, clipping, Adadelta, early stopping."""

import logging
import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import ENCODER_PREFIX, describe, save_checkpoint
from .config import TrainConfig
from .corpus import EOS_ID, Corpus, Document, Vocabulary
from .encoder import EncoderParams
from .errors import ConfigError, DataError, DivergenceError, ShapeError
from .model import ModelParams
from .numerics import Parameter, backward, neg
from .objective import document_elbo, evaluate
from .warmstart import SentenceMixture, fit_sentence_mixture, warm_start_encoder

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.ckpt"
TRAINING_LOG = "training.log"
VOCAB_FILE = "vocab.txt"


@dataclass
class OptimizerState:
    """Adadelta running averages E[g²] and E[Δ²] per parameter."""

    square_grad: dict[str, np.ndarray]
    square_update: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls(
            square_grad={name: np.zeros_like(p) for name, p in params.items()},
            square_update={name: np.zeros_like(p) for name, p in params.items()},
        )


def sample_vocab_support(
    batch_docs: Sequence[Document], vocabulary: Vocabulary, n_extra: int, rng: np.random.Generator
) -> np.ndarray:
    """Batch words ∪ {<eos>} ∪ n_extra unigram draws without replacement, as sorted ids."""
    vocab_size = len(vocabulary)
    if n_extra > vocab_size:
        raise DataError(f"cannot draw {n_extra} extra words from a vocabulary of {vocab_size}")
    if n_extra == vocab_size:
        return np.arange(vocab_size)

    batch_ids = {w for doc in batch_docs for sentence in doc.sentences for w in sentence}
    batch_ids.add(EOS_ID)
    support = np.fromiter(batch_ids, dtype=np.intp, count=len(batch_ids))

    unigram = vocabulary.unigram
    n_draw = min(n_extra, int(np.count_nonzero(unigram)))
    if n_draw:
        support = np.union1d(support, rng.choice(vocab_size, size=n_draw, replace=False, p=unigram))
    return np.unique(support)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))


def clip_gradients(grads: Mapping[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients by clip_norm / g when their global L2 norm g exceeds clip_norm."""
    if clip_norm <= 0:
        raise DataError(f"clip_norm must be positive, got {clip_norm}")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads)
    factor = clip_norm / norm
    return {name: g * factor for name, g in grads.items()}


def adadelta_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    rho: float,
    eps: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One Adadelta update; returns new parameter values and a new state."""
    new_params, square_grad, square_update = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.square_grad[name].shape != p.shape:
            raise ShapeError(f"adadelta: parameter {name}{p.shape} got gradient{g.shape}")
        eg2 = rho * state.square_grad[name] + (1 - rho) * g * g
        delta = -np.sqrt(state.square_update[name] + eps) / np.sqrt(eg2 + eps) * g
        square_grad[name] = eg2
        square_update[name] = rho * state.square_update[name] + (1 - rho) * delta * delta
        new_params[name] = p + delta
    return new_params, OptimizerState(square_grad=square_grad, square_update=square_update)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_objective: float
    valid_objective: float
    seconds: float

    def format(self) -> str:
        return f"{self.epoch}\t{self.train_objective:.6f}\t{self.valid_objective:.6f}\t{self.seconds:.2f}"


@dataclass
class TrainResult:
    checkpoint_path: Path
    best_epoch: int
    best_valid_objective: float
    log: list[EpochRecord] = field(default_factory=list)


def build_parameters(
    config: TrainConfig, vocab_size: int, rng: np.random.Generator
) -> tuple[ModelParams, EncoderParams]:
    model = ModelParams.initialize(
        n_topics=config.n_topics,
        vocab_size=vocab_size,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        readout_dim=config.readout_dim,
        rng=rng,
        topic_embed_dim=config.resolved_topic_embed_dim,
        decoder_cell=config.decoder_cell,
        init_scale=config.init_scale,
    )
    encoder = EncoderParams.initialize(
        n_topics=config.n_topics,
        doc_hidden_dim=config.doc_hidden_dim,
        encoder_hidden_dim=config.encoder_hidden_dim,
        rng=rng,
        shared_emb=model["emb"] if config.share_embeddings else None,
        vocab_size=vocab_size,
        embed_dim=config.embed_dim,
        init_scale=config.init_scale,
    )
    return model, encoder


class Trainer:
    """Single-writer training loop over one model/encoder pair."""

    def __init__(self, config: TrainConfig, vocabulary: Vocabulary):
        if config.sampled_vocab_size > len(vocabulary):
            raise ConfigError(
                f"sampled_vocab_size={config.sampled_vocab_size} exceeds the vocabulary size {len(vocabulary)}"
            )
        self.config = config
        self.vocabulary = vocabulary
        self.rng = np.random.default_rng(config.seed)
        self.model, self.encoder = build_parameters(config, len(vocabulary), self.rng)
        self.parameters: dict[str, Parameter] = dict(self.model.named_parameters())
        self.parameters.update({ENCODER_PREFIX + name: p for name, p in self.encoder.named_parameters()})
        self.optimizer = OptimizerState.zeros_like({name: p.value for name, p in self.parameters.items()})
        self.step_count = 0

    def warm_start(self, corpus: Corpus) -> SentenceMixture:
        """Seed the sentence encoder from a mixture of unigrams fit to the training sentences."""
        mixture = fit_sentence_mixture(corpus, self.config.n_topics, self.rng)
        warm_start_encoder(self.encoder, corpus, mixture)
        return mixture

    def _zero_grad(self) -> None:
        for p in self.parameters.values():
            p.zero_grad()

    def step(self, batch: Sequence[Document], epoch: int) -> float:
        """Accumulate −ELBO gradients over the batch, clip, and apply Adadelta."""
        support = sample_vocab_support(batch, self.vocabulary, self.config.sampled_vocab_size, self.rng)
        self._zero_grad()
        loss_total = 0.0
        for doc in batch:
            epsilon = self.rng.standard_normal(self.config.n_topics)
            breakdown = document_elbo(doc, self.model, self.encoder, epsilon, support)
            if not math.isfinite(breakdown.elbo):
                raise DivergenceError(
                    f"objective became non-finite at epoch {epoch}, step {self.step_count}, document {doc.id!r}"
                )
            backward(neg(breakdown.objective))
            loss_total -= breakdown.elbo
            logger.debug("epoch %d step %d %s: -elbo %.4f", epoch, self.step_count, doc.id, -breakdown.elbo)

        grads = {name: p.dense_grad() for name, p in self.parameters.items()}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(
                f"non-finite gradient at epoch {epoch}, step {self.step_count}, batch starting with {batch[0].id!r}"
            )
        grads = clip_gradients(grads, self.config.clip_norm)
        values = {name: p.value for name, p in self.parameters.items()}
        new_values, self.optimizer = adadelta_step(
            values, grads, self.optimizer, self.config.adadelta_rho, self.config.adadelta_eps
        )
        for name, p in self.parameters.items():
            p.value = new_values[name]
        self._zero_grad()
        self.step_count += 1
        return loss_total

    def train_epoch(self, corpus: Corpus, epoch: int) -> float:
        """One seeded-shuffle pass; returns the mean per-document −ELBO."""
        order = self.rng.permutation(len(corpus.documents))
        total = 0.0
        size = self.config.batch_size
        for start in range(0, len(order), size):
            batch = [corpus.documents[i] for i in order[start : start + size]]
            total += self.step(batch, epoch)
        return total / len(corpus.documents)

    def validate(self, corpus: Corpus) -> float:
        """Mean per-word −ELBO with full-vocabulary support."""
        report = evaluate(
            corpus,
            self.model,
            self.encoder,
            n_eps_samples=self.config.eval_eps_samples,
            seed=self.config.seed,
            threads=self.config.threads,
        )
        return report.mean_negative_per_word_bound

    def save(self, path: Path, epoch: int) -> None:
        config = self.config
        metadata = describe(
            self.model,
            self.encoder,
            init=_describe_init(config),
            epoch=epoch,
            seed=config.seed,
            clip_norm=config.clip_norm,
            adadelta_rho=config.adadelta_rho,
            adadelta_eps=config.adadelta_eps,
            patience=config.patience,
            sampled_vocab_size=config.sampled_vocab_size,
            batch_size=config.batch_size,
        )
        save_checkpoint(path, self.model, self.encoder, metadata)


def _describe_init(config: TrainConfig) -> str:
    init = f"uniform(-{config.init_scale},{config.init_scale});biases=zeros"
    return init + ";bow_warm_start" if config.bow_warm_start else init


def _write_log(path: Path, records: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(record.format() + "\n")


def train(train_corpus: Corpus, valid_corpus: Corpus, config: TrainConfig, out_dir: str | Path) -> TrainResult:
    """Train until `patience` epochs pass without validation improvement or max_epochs is reached.

    The best checkpoint (lowest validation objective, epoch 0 being the initialization)
    is kept in out_dir together with the training log and the vocabulary.

    Raises:
        DataError: If the corpora do not share a vocabulary
        DivergenceError: If the objective or a gradient becomes non-finite
    """
    if train_corpus.vocabulary.tokens != valid_corpus.vocabulary.tokens:
        raise DataError("training and validation corpora must share one vocabulary")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(config, train_corpus.vocabulary)
    train_corpus.vocabulary.save(out_dir / VOCAB_FILE)
    checkpoint_path = out_dir / BEST_CHECKPOINT
    log_path = out_dir / TRAINING_LOG
    logger.info(
        "training %d topics, %d weights on %d documents",
        config.n_topics,
        trainer.model.n_weights() + trainer.encoder.n_weights(),
        len(train_corpus),
    )

    if config.bow_warm_start:
        trainer.warm_start(train_corpus)

    started = time.perf_counter()
    best = trainer.validate(valid_corpus)
    records = [EpochRecord(0, math.nan, best, time.perf_counter() - started)]
    best_epoch = 0
    trainer.save(checkpoint_path, 0)
    _write_log(log_path, records)

    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        train_objective = trainer.train_epoch(train_corpus, epoch)
        valid_objective = trainer.validate(valid_corpus)
        records.append(EpochRecord(epoch, train_objective, valid_objective, time.perf_counter() - started))
        _write_log(log_path, records)
        logger.info("epoch %d: train %.4f valid %.4f", epoch, train_objective, valid_objective)

        if valid_objective < best:
            best, best_epoch, stale = valid_objective, epoch, 0
            trainer.save(checkpoint_path, epoch)
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stopping after epoch %d; best epoch %d", epoch, best_epoch)
                break

    return TrainResult(checkpoint_path=checkpoint_path, best_epoch=best_epoch, best_valid_objective=best, log=records)
