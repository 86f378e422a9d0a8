"""Validated configuration models and the key=value file loader."""

from pathlib import Path
from typing import Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class TrainConfig(BaseModel):
    """Model dimensions and optimization settings for one training run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_topics: int = Field(25, gt=0, description="Number of topics K")
    embed_dim: int = Field(100, gt=0, description="Word embedding size |Emb|")
    topic_embed_dim: int | None = Field(None, gt=0, description="Topic embedding size; defaults to embed_dim")
    hidden_dim: int = Field(200, gt=0, description="Decoder hidden size |h|")
    readout_dim: int = Field(100, gt=0, description="Readout layer size |r|")
    encoder_hidden_dim: int = Field(200, gt=0, description="Sentence-encoder GRU hidden size")
    doc_hidden_dim: int = Field(200, gt=0, description="Document-encoder hidden size of γ_d")
    decoder_cell: Literal["elman", "gru"] = "elman"
    share_embeddings: bool = True
    init_scale: float = Field(0.08, gt=0)
    bow_warm_start: bool = Field(False, description="Seed the sentence encoder from a mixture of unigrams fit by EM")
    sampled_vocab_size: int = Field(4000, gt=0, description="Unigram-sampled words added to each batch's support")
    batch_size: int = Field(1, gt=0)
    clip_norm: float = Field(5.0, gt=0)
    adadelta_rho: float = Field(0.95, gt=0, lt=1)
    adadelta_eps: float = Field(1e-6, gt=0)
    patience: int = Field(3, gt=0, description="Epochs without validation improvement before stopping")
    max_epochs: int = Field(30, ge=0)
    eval_eps_samples: int = Field(1, gt=0)
    threads: int = Field(1, gt=0)
    seed: int = Field(0, ge=0)

    @property
    def resolved_topic_embed_dim(self) -> int:
        return self.topic_embed_dim or self.embed_dim


class SyntheticSpec(BaseModel):
    """Known-structure corpus: one disjoint token block per topic."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_topics: int = Field(2, gt=0)
    block_size: int = Field(20, gt=0, description="Tokens per topic block")
    concentration: float = Field(3.0, gt=0, description="Scale applied to θ ~ N(0, I)")
    n_docs: int = Field(500, gt=0, description="Training documents")
    n_valid_docs: int = Field(50, gt=0)
    n_test_docs: int = Field(50, gt=0)
    sentences_per_doc: int = Field(8, gt=0)
    words_per_sentence: int = Field(6, gt=0)
    peak_logit: float = Field(30.0, gt=0, description="Logit gap between in-block and out-of-block tokens")
    embed_dim: int = Field(4, gt=0)
    hidden_dim: int = Field(4, gt=0)
    readout_dim: int = Field(4, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _enumerable(self) -> "SyntheticSpec":
        if self.n_topics > 16:
            raise ValueError("synthetic corpora support at most 16 topics")
        return self


Model = TypeVar("Model", bound=BaseModel)


def parse_key_values(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse `key=value` lines; blank lines and `#` comments are skipped."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def build_config(model: type[Model], values: dict[str, str], source: str = "<config>") -> Model:
    try:
        return model.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"{source}: {problems}") from e


def load_config(model: type[Model], path: str | Path) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Failed to read config: {e}") from e
    return build_config(model, parse_key_values(text, str(path)), str(path))
