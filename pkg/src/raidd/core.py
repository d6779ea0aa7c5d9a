"""Domain types, tokenization, chunking and vector math shared by the engine."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Tuple

Vector = Sequence[float]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class ConfigError(ValueError):
    """Invalid retrieval or run configuration."""


class DataError(ValueError):
    """Malformed input data (corpus, dataset or raw records)."""


class VectorError(ValueError):
    """Vector shape or value problem (dimension mismatch, zero norm, non-finite)."""


class Flavor(str, Enum):
    BASELINE = "baseline"
    S = "s"
    S_PLUS = "s_plus"
    Q = "q"
    Q_PLUS = "q_plus"
    U = "u"
    S_ICL = "s_icl"

    @classmethod
    def parse(cls, value: "str | Flavor") -> "Flavor":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise ConfigError(f"unknown flavor {value!r}; expected one of: {names}") from None


RAW = "raw"
SUMMARY = "summary"
QUESTION = "question"
KINDS = (RAW, SUMMARY, QUESTION)

# Which derived-document kinds each flavor indexes and searches over.
FLAVOR_KINDS = {
    Flavor.BASELINE: frozenset({RAW}),
    Flavor.S: frozenset({SUMMARY}),
    Flavor.S_PLUS: frozenset({SUMMARY, RAW}),
    Flavor.Q: frozenset({QUESTION}),
    Flavor.Q_PLUS: frozenset({QUESTION, RAW}),
    Flavor.U: frozenset({RAW, SUMMARY, QUESTION}),
    Flavor.S_ICL: frozenset({SUMMARY}),
}


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[str, ...]
    offsets: Tuple[Tuple[int, int], ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.offsets):
            raise ValueError("tokens and offsets must be the same length")
        prev_end = 0
        for start, end in self.offsets:
            if start < prev_end or end <= start:
                raise ValueError(f"offsets must be increasing and non-overlapping, got {(start, end)}")
            prev_end = end

    def __len__(self) -> int:
        return len(self.tokens)

    def span_text(self, source: str, start: int, end: int) -> str:
        """Source substring covering tokens ``[start, end)``."""
        if start >= end:
            return ""
        return source[self.offsets[start][0] : self.offsets[end - 1][1]]


class Tokenizer(Protocol):
    name: str

    def __call__(self, text: str) -> TokenSequence: ...


class RegexTokenizer:
    """Lowercasing word/punctuation splitter; the offline default."""

    name = "regex-word-punct"

    def __call__(self, text: str) -> TokenSequence:
        tokens = []
        offsets = []
        for m in _TOKEN_RE.finditer(text):
            tokens.append(m.group().lower())
            offsets.append(m.span())
        return TokenSequence(tuple(tokens), tuple(offsets))


class PieceTokenizer:
    """Adapter for external tokenizers that split text into substrings.

    ``split`` returns token strings in order (e.g. a provider tokenizer's decoded
    pieces). Each piece is located in the source to recover offsets; whitespace-only
    pieces are dropped.
    """

    def __init__(self, split: Callable[[str], Iterable[str]], name: str = "pieces"):
        self._split = split
        self.name = name

    def __call__(self, text: str) -> TokenSequence:
        tokens = []
        offsets = []
        pos = 0
        for piece in self._split(text):
            stripped = piece.strip()
            if not stripped:
                continue
            start = text.find(stripped, pos)
            if start < 0:
                raise ValueError(f"tokenizer piece {piece!r} not found in source after offset {pos}")
            end = start + len(stripped)
            tokens.append(stripped)
            offsets.append((start, end))
            pos = end
        return TokenSequence(tuple(tokens), tuple(offsets))


DEFAULT_TOKENIZER: Tokenizer = RegexTokenizer()


def tokenize(text: str, tokenizer: Optional[Tokenizer] = None) -> TokenSequence:
    return (tokenizer or DEFAULT_TOKENIZER)(text)


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_span: Tuple[int, int]

    @property
    def token_count(self) -> int:
        return self.token_span[1] - self.token_span[0]

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "text": self.text,
            "token_span": list(self.token_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        start, end = d["token_span"]
        return cls(chunk_id=d["chunk_id"], doc_id=d["doc_id"], text=d["text"], token_span=(int(start), int(end)))


@dataclass(frozen=True)
class DerivedDocument:
    """A retrieval handle (raw alias, summary or generated question) for one chunk."""

    derived_id: str
    kind: str
    text: str
    source_chunk_id: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown derived-document kind {self.kind!r}")
        if not self.text:
            raise ValueError(f"derived document {self.derived_id!r} has empty text")


def make_chunk_id(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal:04d}"


def check_window(chunk_size: int, overlap: int) -> None:
    if chunk_size < 1:
        raise ConfigError(f"chunk_size must be >= 1, got {chunk_size}")
    if overlap < 0 or overlap >= chunk_size:
        raise ConfigError(f"overlap must satisfy 0 <= overlap < chunk_size, got overlap={overlap}, chunk_size={chunk_size}")


def chunk_spans(n_tokens: int, chunk_size: int, overlap: int) -> List[Tuple[int, int]]:
    """Sliding-window token spans over a sequence of ``n_tokens`` tokens.

    Windows advance by ``chunk_size - overlap``; the last window is the first one
    whose end reaches ``n_tokens`` (it may be shorter than ``chunk_size``).
    """
    check_window(chunk_size, overlap)
    stride = chunk_size - overlap
    spans = []
    start = 0
    while start < n_tokens:
        end = min(start + chunk_size, n_tokens)
        spans.append((start, end))
        if end == n_tokens:
            break
        start += stride
    return spans


def chunk(
    text: str,
    chunk_size: int,
    overlap: int,
    doc_id: str = "doc",
    tokenizer: Optional[Tokenizer] = None,
) -> List[Chunk]:
    """Split ``text`` into overlapping token windows.

    Chunk text is the exact source substring from the first token's start to the
    last token's end, so whitespace and casing are preserved.
    """
    seq = tokenize(text, tokenizer)
    return [
        Chunk(
            chunk_id=make_chunk_id(doc_id, i),
            doc_id=doc_id,
            text=seq.span_text(text, start, end),
            token_span=(start, end),
        )
        for i, (start, end) in enumerate(chunk_spans(len(seq), chunk_size, overlap))
    ]


def check_vector(v: Vector, name: str = "vector") -> None:
    if len(v) == 0:
        raise VectorError(f"{name} is empty")
    for x in v:
        if not math.isfinite(x):
            raise VectorError(f"{name} has a non-finite component: {x!r}")


def norm(v: Vector) -> float:
    return math.sqrt(math.fsum(x * x for x in v))


def cosine(a: Vector, b: Vector) -> float:
    if len(a) != len(b):
        raise VectorError(f"dimension mismatch: {len(a)} != {len(b)}")
    check_vector(a, "a")
    check_vector(b, "b")
    na, nb = norm(a), norm(b)
    if na == 0.0 or nb == 0.0:
        raise VectorError("cosine undefined for a zero-norm vector")
    sim = math.fsum(x * y for x, y in zip(a, b)) / (na * nb)
    return max(-1.0, min(1.0, sim))


@dataclass(frozen=True)
class RetrievalConfig:
    chunk_size: int = 256
    overlap: int = 50
    top_k: int = 8
    flavor: Flavor = Flavor.BASELINE

    def __post_init__(self) -> None:
        object.__setattr__(self, "flavor", Flavor.parse(self.flavor))
        check_window(self.chunk_size, self.overlap)
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")

    @property
    def kinds(self) -> frozenset:
        return FLAVOR_KINDS[self.flavor]

    def to_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "overlap": self.overlap,
            "top_k": self.top_k,
            "flavor": self.flavor.value,
        }
