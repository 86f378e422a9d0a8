"""Self-describing checkpoint container for decoder and encoder parameters.

Layout::

    sengen-ckpt v1
    key=value            (metadata, one per line)
    <blank line>
    name                 (per tensor, decoder tensors first, then encoder.*)
    d1 d2 ...            (shape)
    <raw little-endian float64 bytes, row-major>
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .encoder import EncoderParams
from .errors import CheckpointError, SenGenError
from .model import ModelParams
from .numerics import Parameter

logger = logging.getLogger(__name__)

MAGIC = b"sengen-ckpt v1\n"
ENCODER_PREFIX = "encoder."
_WIRE_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    model: ModelParams
    encoder: EncoderParams
    metadata: dict[str, str]


def describe(model: ModelParams, encoder: EncoderParams, **extra: object) -> dict[str, str]:
    """Metadata block: dimensions first, then caller-supplied training settings."""
    metadata = {
        "K": model.n_topics,
        "V": model.vocab_size,
        "E": model.embed_dim,
        "E_z": model.topic_embed_dim,
        "H": model.hidden_dim,
        "R": model.readout_dim,
        "H_enc": encoder.hidden_dim,
        "H_gamma": encoder["w_gamma"].shape[0],
        "decoder_cell": model.decoder_cell,
        "share_embeddings": encoder.shares_embeddings,
    }
    metadata.update(extra)
    return {key: str(value) for key, value in metadata.items()}


def _write_tensor(f: BinaryIO, name: str, value: np.ndarray) -> None:
    f.write(f"{name}\n".encode())
    f.write((" ".join(str(d) for d in value.shape) + "\n").encode())
    f.write(np.ascontiguousarray(value, dtype=_WIRE_DTYPE).tobytes())


def save_checkpoint(path: str | Path, model: ModelParams, encoder: EncoderParams, metadata: dict[str, str]) -> None:
    """Write atomically; identical parameters and metadata give identical bytes."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            for key, value in metadata.items():
                if "=" in key or "\n" in key + value:
                    raise CheckpointError(f"metadata entry {key!r} cannot be written as key=value")
                f.write(f"{key}={value}\n".encode())
            f.write(b"\n")
            for name, p in model.named_parameters():
                _write_tensor(f, name, p.value)
            for name, p in encoder.named_parameters():
                _write_tensor(f, ENCODER_PREFIX + name, p.value)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"Failed to write checkpoint: {e}") from e
    logger.info("wrote checkpoint %s", path)


def _read_line(f: BinaryIO) -> str:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError("truncated checkpoint")
    return line[:-1].decode()


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            if f.readline() != MAGIC:
                raise CheckpointError(f"{path} is not a sengen v1 checkpoint")
            metadata: dict[str, str] = {}
            while line := _read_line(f):
                key, sep, value = line.partition("=")
                if not sep:
                    raise CheckpointError(f"malformed metadata line {line!r}")
                metadata[key] = value

            model_tensors: dict[str, Parameter] = {}
            encoder_tensors: dict[str, Parameter] = {}
            while name_line := f.readline():
                name = name_line.decode().rstrip("\n")
                shape = tuple(int(d) for d in _read_line(f).split())
                count = int(np.prod(shape, dtype=np.int64))
                raw = f.read(count * _WIRE_DTYPE.itemsize)
                if len(raw) != count * _WIRE_DTYPE.itemsize:
                    raise CheckpointError(f"truncated tensor {name!r}")
                value = np.frombuffer(raw, dtype=_WIRE_DTYPE).astype(np.float64).reshape(shape)
                if name.startswith(ENCODER_PREFIX):
                    short = name[len(ENCODER_PREFIX) :]
                    encoder_tensors[short] = Parameter(value, name=short)
                else:
                    model_tensors[name] = Parameter(value, name=name)
    except OSError as e:
        raise CheckpointError(f"Failed to read checkpoint: {e}") from e
    except (UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    try:
        model = ModelParams(model_tensors, decoder_cell=metadata.get("decoder_cell", "elman"))
        shared = metadata.get("share_embeddings", "True") == "True"
        encoder = EncoderParams(encoder_tensors, shared_emb=model["emb"] if shared else None)
    except (KeyError, SenGenError) as e:
        raise CheckpointError(f"Inconsistent checkpoint {path}: {e}") from e
    if metadata.get("K") not in (None, str(model.n_topics)) or metadata.get("V") not in (None, str(model.vocab_size)):
        raise CheckpointError(f"checkpoint metadata K/V disagree with tensor shapes in {path}")
    return Checkpoint(model=model, encoder=encoder, metadata=metadata)
