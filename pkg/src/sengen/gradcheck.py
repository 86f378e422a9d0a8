"""Finite-difference check of every ELBO gradient on a small fixed configuration."""

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import EOS_ID, Document
from .encoder import EncoderParams
from .model import ModelParams
from .numerics import Parameter, check_gradients
from .objective import document_elbo

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
# relative errors are taken against a gradient magnitude of at least this; central
# differences at h=1e-5 on the toy ELBO carry rounding noise near 1e-10
GRADIENT_FLOOR = 1e-4
TOY_INIT_SCALE = 0.5
TOY_DOCUMENT = Document(id="toy", sentences=[[2, 3, 4, EOS_ID], [5, 3, EOS_ID]])
TOY_EPSILON = np.array([0.3, -0.7])
# sampled-support variant: every target word plus one word absent from the document
TOY_SUPPORT = np.array([EOS_ID, 2, 3, 4, 5])


@dataclass(frozen=True)
class GradientReport:
    """Max relative error per `<variant>/<tensor>` name."""

    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE

    def format(self) -> str:
        lines = [f"{name}\t{err:.3e}" for name, err in self.errors.items()]
        lines.append(f"MAX\t{self.max_error:.3e}\t{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def toy_parameters(
    rng: np.random.Generator, decoder_cell: str = "elman", share_embeddings: bool = True
) -> tuple[ModelParams, EncoderParams]:
    """K=2, |V|=6, E=4, H=3, R=3 decoder with 3-unit encoders."""
    model = ModelParams.initialize(
        n_topics=2,
        vocab_size=6,
        embed_dim=4,
        hidden_dim=3,
        readout_dim=3,
        rng=rng,
        decoder_cell=decoder_cell,
        init_scale=TOY_INIT_SCALE,
    )
    encoder = EncoderParams.initialize(
        n_topics=2,
        doc_hidden_dim=3,
        encoder_hidden_dim=3,
        rng=rng,
        shared_emb=model["emb"] if share_embeddings else None,
        vocab_size=6,
        embed_dim=4,
        init_scale=TOY_INIT_SCALE,
    )
    return model, encoder


def _check_variant(
    seed: int, decoder_cell: str, share_embeddings: bool, support: np.ndarray | None
) -> dict[str, float]:
    model, encoder = toy_parameters(np.random.default_rng(seed), decoder_cell, share_embeddings)
    params: dict[str, Parameter] = dict(model.named_parameters())
    params.update({f"encoder.{name}": p for name, p in encoder.named_parameters()})

    def elbo():
        return document_elbo(TOY_DOCUMENT, model, encoder, TOY_EPSILON, support).objective

    return check_gradients(elbo, params, floor=GRADIENT_FLOOR)


def run_gradient_suite(seed: int = 0) -> GradientReport:
    """Check the document ELBO gradient of every tensor in three decoder/encoder variants."""
    variants = {
        "elman": ("elman", True, None),
        "gru-unshared": ("gru", False, None),
        "elman-sampled": ("elman", True, TOY_SUPPORT),
    }
    errors = {}
    for label, (cell, shared, support) in variants.items():
        for name, err in _check_variant(seed, cell, shared, support).items():
            errors[f"{label}/{name}"] = err
        logger.info("gradient check %s done", label)
    return GradientReport(errors=errors)
