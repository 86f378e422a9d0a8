"""Command-line entry point: preprocess, train, eval, generate, synth, gradcheck, annotate."""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import NoReturn

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .config import SyntheticSpec, TrainConfig, load_config
from .corpus import (
    DEFAULT_MAX_SENTENCE_LEN,
    SPLITS,
    Corpus,
    Vocabulary,
    build_vocabulary,
    corpus_stats,
    encode_corpus,
    load_corpus_dir,
    read_raw_documents,
    split_documents,
    tokenize_document,
    write_corpus,
)
from .errors import EXIT_NUMERICAL, EXIT_OK, CorpusError, DataError, SenGenError, UsageError
from .generation import (
    DEFAULT_BEAM_WIDTH,
    DEFAULT_MAX_LEN,
    beam_search,
    format_topic_block,
    stochastic_sample,
    top_words,
)
from .gradcheck import run_gradient_suite
from .objective import annotate_document, evaluate, format_annotation, format_report
from .oracle import make_synthetic_corpus, read_labels, topic_recovery_score, write_labels
from .trainer import VOCAB_FILE, train

logger = logging.getLogger(__name__)

DEFAULT_LOG_LEVEL = "WARNING"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _env_log_level() -> str:
    level = os.environ.get("SENGEN_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    if level not in LOG_LEVELS:
        raise UsageError(f"SENGEN_LOG_LEVEL must be one of {'/'.join(LOG_LEVELS)}, got {level!r}")
    return level


def _env_threads() -> int:
    value = os.environ.get("SENGEN_THREADS", "1")
    try:
        threads = int(value)
    except ValueError as e:
        raise UsageError(f"SENGEN_THREADS must be a positive integer, got {value!r}") from e
    if threads < 1:
        raise UsageError(f"SENGEN_THREADS must be a positive integer, got {value!r}")
    return threads


def _split_ratios(text: str) -> list[int]:
    parts = text.split(":")
    if len(parts) != len(SPLITS) or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected train:valid:test integers, got {text!r}")
    return [int(p) for p in parts]


def _topic_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated topic ids, got {text!r}") from e


def _format_stats(split: str, corpus: Corpus) -> str:
    return "".join(f"{split}\t{line}\n" for line in corpus_stats(corpus).format().splitlines())


def _load_vocabulary_for(checkpoint: Checkpoint, path: Path) -> Vocabulary:
    vocabulary = Vocabulary.load(path)
    if len(vocabulary) != checkpoint.model.vocab_size:
        raise DataError(
            f"vocabulary {path} has {len(vocabulary)} tokens, checkpoint expects {checkpoint.model.vocab_size}"
        )
    return vocabulary


def _load_corpus_for(checkpoint: Checkpoint, directory: str, split: str) -> Corpus:
    corpus = load_corpus_dir(directory, split)
    if len(corpus.vocabulary) != checkpoint.model.vocab_size:
        raise DataError(
            f"corpus vocabulary has {len(corpus.vocabulary)} tokens, checkpoint expects {checkpoint.model.vocab_size}"
        )
    return corpus


def cmd_preprocess(args: argparse.Namespace) -> int:
    raw = read_raw_documents(args.input)
    parts = split_documents(raw, args.split, args.seed)
    tokenized = {split: [tokenize_document(doc_id, text) for doc_id, text in docs] for split, docs in parts.items()}
    vocabulary = build_vocabulary(tokenized["train"], args.vocab_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocabulary.save(out / VOCAB_FILE)
    for split in SPLITS:
        try:
            corpus = encode_corpus(tokenized[split], vocabulary, split, args.max_sentence_len)
        except CorpusError:
            if split == "train":
                raise
            logger.warning("%s split is empty; no %s.txt written", split, split)
            continue
        write_corpus(corpus, out / f"{split}.txt")
        sys.stdout.write(_format_stats(split, corpus))
    sys.stdout.write(f"vocabulary\t{len(vocabulary)}\n")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(TrainConfig, args.config)
    train_corpus = load_corpus_dir(args.corpus, "train")
    valid_corpus = load_corpus_dir(args.corpus, "valid")
    result = train(train_corpus, valid_corpus, config, args.out)
    sys.stdout.write(f"CHECKPOINT\t{result.checkpoint_path}\n")
    sys.stdout.write(f"BEST_EPOCH\t{result.best_epoch}\t{result.best_valid_objective:.6f}\n")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = _load_corpus_for(checkpoint, args.corpus, args.split)
    report = evaluate(corpus, checkpoint.model, checkpoint.encoder, args.eps_samples, args.seed, args.threads)
    sys.stdout.write(format_report(report))
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).parent / VOCAB_FILE
    vocabulary = _load_vocabulary_for(checkpoint, vocab_path)
    model = checkpoint.model
    topics = args.topics if args.topics is not None else list(range(model.n_topics))

    rng = np.random.default_rng(args.seed)
    blocks = []
    for topic in topics:
        best = beam_search(model, topic, args.beam, args.max_len)
        samples = [stochastic_sample(model, topic, args.max_len, rng) for _ in range(args.samples)]
        top = top_words(model, topic, args.top_words) if args.top_words else None
        blocks.append(format_topic_block(topic, best, samples, vocabulary, top))
    sys.stdout.write("\n".join(blocks))
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_config(SyntheticSpec, args.spec) if args.spec else SyntheticSpec()
    synthetic = make_synthetic_corpus(spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synthetic.vocabulary.save(out / VOCAB_FILE)
    for corpus in (synthetic.train, synthetic.valid, synthetic.test):
        write_corpus(corpus, out / f"{corpus.split}.txt")
        sys.stdout.write(_format_stats(corpus.split, corpus))
    write_labels(out / "labels.txt", synthetic.labels)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    report = run_gradient_suite(args.seed)
    sys.stdout.write(report.format())
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_annotate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    corpus = _load_corpus_for(checkpoint, args.corpus, args.split)
    annotations = [annotate_document(doc, checkpoint.encoder) for doc in corpus.documents]
    for annotation in annotations:
        sys.stdout.write(format_annotation(annotation))

    if args.labels:
        labels = read_labels(args.labels)
        predicted, truth = [], []
        for annotation in annotations:
            if annotation.doc_id not in labels:
                raise DataError(f"no labels for document {annotation.doc_id!r}")
            predicted.extend(annotation.topics)
            truth.extend(labels[annotation.doc_id])
        sys.stdout.write(f"RECOVERY\t{topic_recovery_score(predicted, truth):.6f}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sengen", description="Sentence-level neural topic model toolkit")
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default=_env_log_level(),
        help="Logging level on stderr (default: WARNING)",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    threads_default = _env_threads()

    p = commands.add_parser("preprocess", help="Segment, tokenize, split and encode raw text")
    p.add_argument("--input", required=True, help="Document directory or separator-delimited file")
    p.add_argument("--out", required=True, help="Output corpus directory")
    p.add_argument("--vocab-size", type=int, required=True, help="Vocabulary size including <unk> and <eos>")
    p.add_argument("--split", type=_split_ratios, default=[8, 1, 1], help="train:valid:test ratios (default: 8:1:1)")
    p.add_argument("--max-sentence-len", type=int, default=DEFAULT_MAX_SENTENCE_LEN)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_preprocess)

    p = commands.add_parser("train", help="Train a model with early stopping")
    p.add_argument("--config", required=True, help="key=value training configuration")
    p.add_argument("--corpus", required=True, help="Corpus directory with vocab.txt, train.txt, valid.txt")
    p.add_argument("--out", required=True, help="Output directory for best.ckpt and training.log")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("eval", help="Per-document bounds and perplexity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--eps-samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=threads_default)
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("generate", help="Beam-search and sampled sentences per topic")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="Vocabulary file (default: vocab.txt next to the checkpoint)")
    p.add_argument("--topics", type=_topic_list, help="Comma-separated topic ids (default: all)")
    p.add_argument("--beam", type=int, default=DEFAULT_BEAM_WIDTH)
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    p.add_argument("--top-words", type=int, default=0, help="Also list the N most probable first words")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_generate)

    p = commands.add_parser("synth", help="Write a synthetic corpus with known sentence topics")
    p.add_argument("--spec", help="key=value synthetic corpus settings (default: built-in)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("gradcheck", help="Finite-difference check of all ELBO gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_gradcheck)

    p = commands.add_parser("annotate", help="Per-sentence topic posteriors and topic switches")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--labels", help="labels.txt from synth; prints the recovery accuracy")
    p.set_defaults(handler=cmd_annotate)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=getattr(logging, args.log_level),
            stream=sys.stderr,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        return args.handler(args)
    except SenGenError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


def main() -> None:
    sys.exit(run(sys.argv[1:]))
