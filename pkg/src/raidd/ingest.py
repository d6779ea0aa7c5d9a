"""Ingest: chunk documents, derive summaries and questions, embed, build the index."""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .core import (
    FLAVOR_KINDS,
    QUESTION,
    RAW,
    SUMMARY,
    Chunk,
    DataError,
    DerivedDocument,
    RetrievalConfig,
    Tokenizer,
    chunk,
)
from .index import Index, IndexEntry, IndexManifest
from .prompts import PromptTemplates
from .providers.base import ChatMessage, Provider, ProviderError

__all__ = [
    "Checkpoint",
    "DerivedDocument",
    "Document",
    "build_index",
    "chunk_corpus",
    "derive_questions",
    "derive_summaries",
    "load_corpus",
    "parse_questions",
    "question_count",
]

logger = logging.getLogger(__name__)

QUESTIONS_PER_1024 = 32

_NUMBERING = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.):]|q\d+[.):]?)\s*", re.IGNORECASE)


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str


def load_corpus(path) -> List[Document]:
    """Read a JSON-lines corpus of ``{"doc_id", "title", "text"}`` objects."""
    docs: List[Document] = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = Document(doc_id=str(obj["doc_id"]), title=str(obj.get("title", "")), text=obj["text"])
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            except (KeyError, TypeError) as e:
                raise DataError(f"{path}: line {lineno}: missing or bad field {e}") from None
            if not isinstance(doc.text, str):
                raise DataError(f"{path}: line {lineno}: 'text' must be a string")
            if doc.doc_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def question_count(token_count: int) -> int:
    """Questions to request for a chunk: 32 per 1024 tokens, rounded up, at least 1."""
    if token_count <= 0:
        raise ValueError(f"token_count must be >= 1, got {token_count}")
    return max(1, -(-QUESTIONS_PER_1024 * token_count // 1024))


class Checkpoint:
    """Append-only JSON-lines record of finished derivations, for resuming ingest."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._done: Dict[tuple, List[str]] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                lines = [json.loads(line) for line in f if line.strip()]
            if lines and lines[0].get("header") != header:
                raise DataError(f"checkpoint {self.path} was written with different ingest settings")
            for rec in lines[1:]:
                self._done[(rec["chunk_id"], rec["kind"])] = rec["texts"]
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8", newline="\n") as f:
                f.write(json.dumps({"header": header}) + "\n")

    def get(self, chunk_id: str, kind: str) -> Optional[List[str]]:
        return self._done.get((chunk_id, kind))

    def record(self, chunk_id: str, kind: str, texts: List[str]) -> None:
        with self._lock:
            self._done[(chunk_id, kind)] = texts
            with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                f.write(json.dumps({"chunk_id": chunk_id, "kind": kind, "texts": texts}, ensure_ascii=False) + "\n")

    def completed_chunk_ids(self) -> List[str]:
        return sorted({cid for cid, _ in self._done})

    def remove(self) -> None:
        self.path.unlink(missing_ok=True)


def derive_summaries(
    chunks: Sequence[Chunk],
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
    checkpoint: Optional[Checkpoint] = None,
) -> List[DerivedDocument]:
    """One summary per chunk, each conditioned on the previous chunk's summary.

    The chain restarts at every document boundary. Calls are sequential.
    """
    t = templates or PromptTemplates()
    cfg = provider.config
    out: List[DerivedDocument] = []
    previous: Optional[str] = None
    prev_doc: Optional[str] = None
    for c in chunks:
        if c.doc_id != prev_doc:
            previous = None
            prev_doc = c.doc_id
        cached = checkpoint.get(c.chunk_id, SUMMARY) if checkpoint else None
        if cached is not None:
            text = cached[0]
        else:
            if previous is None:
                body = t.summary_user.format(text=c.text)
            else:
                body = t.summary_user_with_previous.format(previous=previous, text=c.text)
            messages = [ChatMessage("system", t.summary_system), ChatMessage("user", body)]
            text = provider.chat(messages, temperature=cfg.derive_temperature, model=cfg.derivation_model).strip()
            if not text:
                raise ProviderError(f"empty summary for chunk {c.chunk_id}")
            if checkpoint:
                checkpoint.record(c.chunk_id, SUMMARY, [text])
        out.append(DerivedDocument(f"{c.chunk_id}/summary", SUMMARY, text, c.chunk_id))
        previous = text
    return out


def parse_questions(reply: str, limit: int) -> List[str]:
    """One question per non-empty line, list numbering stripped, exact duplicates dropped."""
    questions: List[str] = []
    for line in reply.splitlines():
        q = _NUMBERING.sub("", line).strip()
        if q and q not in questions:
            questions.append(q)
    return questions[:limit]


def derive_questions(
    chunk: Chunk,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
    checkpoint: Optional[Checkpoint] = None,
) -> List[DerivedDocument]:
    if not chunk.text:
        raise ValueError(f"chunk {chunk.chunk_id} has no text")
    t = templates or PromptTemplates()
    cfg = provider.config
    n = question_count(chunk.token_count)
    cached = checkpoint.get(chunk.chunk_id, QUESTION) if checkpoint else None
    if cached is not None:
        questions = cached
    else:
        messages = [
            ChatMessage("system", t.questions_system.format(n=n)),
            ChatMessage("user", t.questions_user.format(text=chunk.text)),
        ]
        reply = provider.chat(messages, temperature=cfg.derive_temperature, model=cfg.derivation_model)
        questions = parse_questions(reply, n)
        if len(questions) < n:
            logger.warning(
                "chunk %s: requested %d questions, parsed %d", chunk.chunk_id, n, len(questions)
            )
        if checkpoint:
            checkpoint.record(chunk.chunk_id, QUESTION, questions)
    return [
        DerivedDocument(f"{chunk.chunk_id}/q{i:03d}", QUESTION, q, chunk.chunk_id)
        for i, q in enumerate(questions)
    ]


def chunk_corpus(
    corpus: Sequence[Document], chunk_size: int, overlap: int, tokenizer: Optional[Tokenizer] = None
) -> List[List[Chunk]]:
    """Chunks per document, in corpus order; empty documents yield no chunks."""
    seen = set()
    out = []
    for doc in corpus:
        if doc.doc_id in seen:
            raise DataError(f"duplicate doc_id {doc.doc_id!r} in corpus")
        seen.add(doc.doc_id)
        out.append(chunk(doc.text, chunk_size, overlap, doc_id=doc.doc_id, tokenizer=tokenizer))
    return out


def _pool_map(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def build_index(
    corpus: Sequence[Document],
    config: RetrievalConfig,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
    checkpoint_path=None,
    created_at: str = "",
    tokenizer: Optional[Tokenizer] = None,
) -> Index:
    """Run the ingest phase for ``config.flavor`` and return the in-memory index.

    Entry order is deterministic: for each chunk in corpus order, its raw alias,
    then its summary, then its questions (whichever the flavor uses).

    Derivations already listed in the checkpoint file are reused; a provider
    failure leaves the checkpoint in place so a rerun resumes from it.
    """
    if not corpus:
        raise DataError("corpus is empty")
    t = templates or PromptTemplates()
    kinds = FLAVOR_KINDS[config.flavor]
    workers = provider.config.max_parallel
    per_doc = chunk_corpus(corpus, config.chunk_size, config.overlap, tokenizer)
    all_chunks = [c for doc_chunks in per_doc for c in doc_chunks]

    checkpoint = None
    if checkpoint_path is not None:
        header = {
            "flavor": config.flavor.value,
            "chunk_size": config.chunk_size,
            "overlap": config.overlap,
            "prompt_template_hash": t.ingest_hash(),
        }
        checkpoint = Checkpoint(checkpoint_path, header)

    try:
        summaries: Dict[str, DerivedDocument] = {}
        if SUMMARY in kinds:
            results = _pool_map(lambda cs: derive_summaries(cs, provider, t, checkpoint), per_doc, workers)
            summaries = {d.source_chunk_id: d for docs in results for d in docs}
        questions: Dict[str, List[DerivedDocument]] = {}
        if QUESTION in kinds:
            results = _pool_map(lambda c: derive_questions(c, provider, t, checkpoint), all_chunks, workers)
            questions = {c.chunk_id: qs for c, qs in zip(all_chunks, results)}
    except ProviderError:
        if checkpoint is not None:
            logger.error("ingest interrupted; %d chunks checkpointed in %s", len(checkpoint.completed_chunk_ids()), checkpoint.path)
        raise

    derived: List[DerivedDocument] = []
    for c in all_chunks:
        if RAW in kinds:
            derived.append(DerivedDocument(f"{c.chunk_id}/raw", RAW, c.text, c.chunk_id))
        if SUMMARY in kinds:
            derived.append(summaries[c.chunk_id])
        if QUESTION in kinds:
            derived.extend(questions[c.chunk_id])

    vectors = provider.embed([d.text for d in derived]) if derived else []
    if len(vectors) != len(derived):
        raise ProviderError(f"expected {len(derived)} embeddings, got {len(vectors)}")
    dim = len(vectors[0]) if vectors else 0

    manifest = IndexManifest(
        flavor=config.flavor.value,
        chunk_size=config.chunk_size,
        overlap=config.overlap,
        embed_model=provider.config.embed_model,
        prompt_template_hash=t.ingest_hash(),
        dim=dim,
        entry_count=len(derived),
        created_at=created_at,
    )
    entries = [IndexEntry(d, tuple(v)) for d, v in zip(derived, vectors)]
    return Index(manifest=manifest, chunks=all_chunks, entries=entries)


def entry_keys(index: Index) -> List[tuple]:
    """(kind, source_chunk_id, text) for every entry; the flavor-composition view."""
    return [(e.derived.kind, e.derived.source_chunk_id, e.derived.text) for e in index.entries]

