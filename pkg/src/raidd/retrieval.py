from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .core import FLAVOR_KINDS, Chunk, RetrievalConfig
from .index import Index
from .providers.base import Provider


@dataclass(frozen=True)
class Hit:
    kind: str
    text: str
    score: float
    derived_id: str


@dataclass(frozen=True)
class RetrievalResult:
    """Source chunks for the QA context, best first, with the entry that pulled each in."""

    query: str
    chunks: Tuple[Chunk, ...] = ()
    hits: Tuple[Hit, ...] = field(default=())

    def __post_init__(self) -> None:
        if len(self.chunks) != len(self.hits):
            raise ValueError("chunks and hits must align")
        ids = [c.chunk_id for c in self.chunks]
        if len(set(ids)) != len(ids):
            raise ValueError("retrieved chunks must be distinct")

    @property
    def chunk_ids(self) -> List[str]:
        return [c.chunk_id for c in self.chunks]

    def __len__(self) -> int:
        return len(self.chunks)


def retrieve(
    question: str,
    index: Index,
    config: RetrievalConfig,
    provider: Provider,
    doc_id: Optional[str] = None,
) -> RetrievalResult:
    """Embed ``question`` once and return the ``top_k`` best distinct source chunks.

    All entry kinds the flavor uses share one ranking, so in the ``*_plus`` and
    ``u`` flavors a raw chunk wins whenever it outscores every derived handle.
    Only raw chunk text is returned; derived text stays in ``hits``.
    ``doc_id`` limits the search to one document's chunks.
    """
    index.check_flavor(config.flavor)
    if not index.entries:
        return RetrievalResult(query=question)
    [qvec] = provider.embed([question])
    ranked = index.search(
        qvec,
        config.top_k,
        dedup_by_source=True,
        kinds=FLAVOR_KINDS[config.flavor],
        doc_id=doc_id,
    )
    chunks = []
    hits = []
    for entry, score in ranked:
        d = entry.derived
        chunks.append(index.chunk(d.source_chunk_id))
        hits.append(Hit(kind=d.kind, text=d.text, score=score, derived_id=d.derived_id))
    return RetrievalResult(query=question, chunks=tuple(chunks), hits=tuple(hits))
