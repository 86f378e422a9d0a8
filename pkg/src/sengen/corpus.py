"""Corpus ingestion: sentence segmentation, tokenization, vocabulary and integer encoding."""

import logging
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusError

logger = logging.getLogger(__name__)

UNK = "<unk>"
EOS = "<eos>"
UNK_ID = 0
EOS_ID = 1
RESERVED = (UNK, EOS)

DEFAULT_MAX_SENTENCE_LEN = 40
DOCUMENT_SEPARATOR = "%%%%"
SPLITS = ("train", "valid", "test")

ABBREVIATIONS = frozenset(
    {
        "mr.",
        "mrs.",
        "ms.",
        "dr.",
        "st.",
        "jr.",
        "sr.",
        "prof.",
        "vs.",
        "etc.",
        "u.s.",
        "u.k.",
        "e.g.",
        "i.e.",
    }
)

_TERMINAL = re.compile(r"[.!?]\s+")
_PUNCTUATION = re.compile(r'([.,!?;:"()])')
_LEADING_OPENERS = "\"'(["


@dataclass(frozen=True)
class TokenizedDocument:
    """A document as lists of token strings, one list per sentence."""

    id: str
    sentences: list[list[str]]


@dataclass
class Vocabulary:
    """Pruned token space with reserved `<unk>`/`<eos>` ids 0 and 1."""

    tokens: list[str]
    counts: np.ndarray
    ids: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[:2]) != RESERVED:
            raise CorpusError(f"vocabulary must start with {UNK} and {EOS}, got {self.tokens[:2]}")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (len(self.tokens),):
            raise CorpusError(f"{len(self.tokens)} tokens but {self.counts.shape[0]} counts")
        if (self.counts < 0).any():
            raise CorpusError("vocabulary counts must be non-negative")
        self.ids = {token: i for i, token in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise CorpusError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def unigram(self) -> np.ndarray:
        total = self.counts.sum()
        if total == 0:
            return np.full(len(self), 1.0 / len(self))
        return self.counts / total

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.ids.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for token, count in zip(self.tokens, self.counts):
                f.write(f"{token}\t{int(count)}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens: list[str] = []
        counts: list[int] = []
        try:
            with open(path, encoding="utf-8") as f:
                for lineno, line in enumerate(f, 1):
                    line = line.rstrip("\n")
                    token, sep, count = line.rpartition("\t")
                    if not sep or not count.isdigit():
                        raise CorpusError(f"{path}:{lineno}: expected 'token<TAB>count', got {line!r}")
                    tokens.append(token)
                    counts.append(int(count))
        except OSError as e:
            raise CorpusError(f"Failed to read vocabulary: {e}") from e
        return cls(tokens=tokens, counts=np.array(counts, dtype=np.int64))


@dataclass(frozen=True)
class Document:
    """An encoded document; every sentence ends with `<eos>`."""

    id: str
    sentences: list[list[int]]

    @property
    def word_ids(self) -> list[int]:
        return [w for sentence in self.sentences for w in sentence]

    @property
    def n_words(self) -> int:
        return sum(len(sentence) for sentence in self.sentences)

    def validate(self, vocab_size: int) -> None:
        if not self.sentences:
            raise CorpusError(f"document {self.id!r} has no sentences")
        for i, sentence in enumerate(self.sentences):
            if not sentence or sentence[-1] != EOS_ID:
                raise CorpusError(f"document {self.id!r} sentence {i} does not end with {EOS}")
            if max(sentence) >= vocab_size or min(sentence) < 0:
                raise CorpusError(f"document {self.id!r} sentence {i} has a token id outside 0..{vocab_size - 1}")


@dataclass(frozen=True)
class Corpus:
    documents: list[Document]
    split: str
    vocabulary: Vocabulary

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise CorpusError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        if not self.documents:
            raise CorpusError(f"{self.split} corpus is empty")

    def __len__(self) -> int:
        return len(self.documents)


@dataclass(frozen=True)
class CorpusStats:
    documents: int
    sentences: int
    words: int
    mean_sentences_per_doc: float
    mean_words_per_sentence: float

    def format(self) -> str:
        return "\n".join(
            [
                f"documents\t{self.documents}",
                f"sentences\t{self.sentences}",
                f"words\t{self.words}",
                f"mean_sentences_per_doc\t{self.mean_sentences_per_doc:.4f}",
                f"mean_words_per_sentence\t{self.mean_words_per_sentence:.4f}",
            ]
        )


def _is_abbreviation(text: str, end: int) -> bool:
    """Check whether the whitespace-delimited word ending at `end` is a known abbreviation."""
    window = text[max(0, end - 32) : end].split()
    return bool(window) and window[-1].lstrip(_LEADING_OPENERS).lower() in ABBREVIATIONS


def segment_sentences(text: str) -> list[str]:
    """Split text into sentences.

    A boundary follows `.`, `!` or `?` when whitespace and an uppercase letter come next,
    unless the word carrying the terminal is in ABBREVIATIONS.

    Args:
        text: Raw Unicode text

    Returns:
        Trimmed, non-empty sentence strings (empty list for blank input)
    """
    if not text.strip():
        return []

    sentences = []
    start = 0
    for match in _TERMINAL.finditer(text):
        after = match.end()
        if after >= len(text) or not text[after].isupper():
            continue
        end = match.start() + 1
        if _is_abbreviation(text, end):
            continue
        segment = text[start:end].strip()
        if segment:
            sentences.append(segment)
        start = after

    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def tokenize(sentence: str) -> list[str]:
    """Lowercase, detach `.,!?;:"()` and split on whitespace. Stop words are kept."""
    return _PUNCTUATION.sub(r" \1 ", sentence.lower()).split()


def tokenize_document(doc_id: str, text: str) -> TokenizedDocument:
    sentences = [tokens for tokens in (tokenize(s) for s in segment_sentences(text)) if tokens]
    return TokenizedDocument(id=doc_id, sentences=sentences)


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(token for token in tokens if token != EOS)


def build_vocabulary(train_docs: Sequence[TokenizedDocument], max_size: int) -> Vocabulary:
    """Keep the (max_size - 2) most frequent training tokens after the reserved ones.

    Ties are broken by lexicographic token order, so identical corpora give identical files.

    Raises:
        CorpusError: If max_size < 2 or there is no training text
    """
    if max_size < 2:
        raise CorpusError(f"max_size must leave room for {UNK} and {EOS}, got {max_size}")

    counter: Counter[str] = Counter()
    n_sentences = 0
    for doc in train_docs:
        for sentence in doc.sentences:
            if not sentence:
                continue
            n_sentences += 1
            counter.update(sentence)

    if n_sentences == 0:
        raise CorpusError("no training data: the training corpus has no sentences")

    for reserved in RESERVED:
        counter.pop(reserved, None)

    ranked = sorted(counter.items(), key=lambda item: (-item[1], item[0]))
    kept = ranked[: max_size - 2]
    unk_count = sum(counter.values()) - sum(count for _, count in kept)

    tokens = [UNK, EOS] + [token for token, _ in kept]
    counts = [unk_count, n_sentences] + [count for _, count in kept]
    logger.info("vocabulary: kept %d of %d distinct tokens", len(kept), len(counter))
    return Vocabulary(tokens=tokens, counts=np.array(counts, dtype=np.int64))


def encode_corpus(
    docs: Sequence[TokenizedDocument],
    vocabulary: Vocabulary,
    split: str = "train",
    max_sentence_len: int = DEFAULT_MAX_SENTENCE_LEN,
) -> Corpus:
    """Map tokens to ids, append `<eos>`, truncate long sentences and drop empty documents.

    Sentences longer than max_sentence_len become max_sentence_len - 1 tokens plus `<eos>`.
    """
    if max_sentence_len < 2:
        raise CorpusError(f"max_sentence_len must be at least 2, got {max_sentence_len}")

    documents = []
    truncated = 0
    for doc in docs:
        sentences = []
        for tokens in doc.sentences:
            if not tokens:
                continue
            ids = vocabulary.encode(tokens)
            if len(ids) >= max_sentence_len:
                ids = ids[: max_sentence_len - 1]
                truncated += 1
            sentences.append(ids + [EOS_ID])
        if not sentences:
            logger.warning("dropping empty document %r from %s split", doc.id, split)
            continue
        documents.append(Document(id=doc.id, sentences=sentences))

    if truncated:
        logger.warning("truncated %d sentences to %d tokens in %s split", truncated, max_sentence_len, split)
    return Corpus(documents=documents, split=split, vocabulary=vocabulary)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Count documents, sentences and words; words exclude `<eos>`."""
    n_docs = len(corpus.documents)
    n_sentences = sum(len(doc.sentences) for doc in corpus.documents)
    n_words = sum(len(sentence) - 1 for doc in corpus.documents for sentence in doc.sentences)
    return CorpusStats(
        documents=n_docs,
        sentences=n_sentences,
        words=n_words,
        mean_sentences_per_doc=n_sentences / n_docs,
        mean_words_per_sentence=n_words / n_sentences,
    )


def _safe_id(doc_id: str) -> str:
    return re.sub(r"\s", "_", doc_id)


def read_raw_documents(path: str | Path) -> list[tuple[str, str]]:
    """Read raw documents from a directory (one per file) or a `%%%%`-separated file.

    Args:
        path: Directory or single text file

    Returns:
        List of (document id, text) in a deterministic order
    """
    path = Path(path)
    try:
        if path.is_dir():
            return [
                (_safe_id(p.stem), p.read_text(encoding="utf-8"))
                for p in sorted(path.iterdir())
                if p.is_file() and not p.name.startswith(".")
            ]

        docs: list[tuple[str, str]] = []
        current: list[str] = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip() == DOCUMENT_SEPARATOR:
                    docs.append((f"doc-{len(docs):05d}", "".join(current)))
                    current = []
                else:
                    current.append(line)
        docs.append((f"doc-{len(docs):05d}", "".join(current)))
        return docs
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"Failed to read raw documents from {path}: {e}") from e


def split_documents(docs: Sequence[tuple[str, str]], ratios: Sequence[int], seed: int) -> dict[str, list]:
    """Shuffle with a seeded generator and cut into train/valid/test by integer ratios."""
    if len(ratios) != len(SPLITS) or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise CorpusError(f"split ratios must be three non-negative integers, got {list(ratios)}")

    order = np.random.default_rng(seed).permutation(len(docs))
    shuffled = [docs[i] for i in order]
    total = sum(ratios)
    n_train = len(docs) * ratios[0] // total
    n_valid = len(docs) * ratios[1] // total
    return {
        "train": shuffled[:n_train],
        "valid": shuffled[n_train : n_train + n_valid],
        "test": shuffled[n_train + n_valid :],
    }


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write one document per line: id, then one tab-separated field per sentence."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in corpus.documents:
            fields = [doc.id] + [" ".join(str(w) for w in sentence) for sentence in doc.sentences]
            f.write("\t".join(fields) + "\n")


def read_corpus(path: str | Path, vocabulary: Vocabulary, split: str) -> Corpus:
    documents = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                doc_id, *fields = line.split("\t")
                try:
                    sentences = [[int(w) for w in sentence.split(" ")] for sentence in fields]
                except ValueError as e:
                    raise CorpusError(f"{path}:{lineno}: malformed token id ({e})") from e
                doc = Document(id=doc_id, sentences=sentences)
                doc.validate(len(vocabulary))
                documents.append(doc)
    except OSError as e:
        raise CorpusError(f"Failed to read corpus: {e}") from e
    return Corpus(documents=documents, split=split, vocabulary=vocabulary)


def load_corpus_dir(directory: str | Path, split: str) -> Corpus:
    """Load `<split>.txt` and `vocab.txt` written by the preprocess or synth commands."""
    directory = Path(directory)
    vocabulary = Vocabulary.load(directory / "vocab.txt")
    return read_corpus(directory / f"{split}.txt", vocabulary, split)
