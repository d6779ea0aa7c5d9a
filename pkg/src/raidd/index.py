"""Exact cosine vector store over derived documents, with on-disk persistence.

On-disk layout (one directory)::

    manifest.json   IndexManifest fields
    entries.jsonl   {"derived_id", "kind", "source_chunk_id", "text", "embedding"}
    chunks.jsonl    {"chunk_id", "doc_id", "text", "token_span"}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    FLAVOR_KINDS,
    Chunk,
    ConfigError,
    DerivedDocument,
    Flavor,
    Vector,
    VectorError,
    check_vector,
    norm,
)

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
ENTRIES_FILE = "entries.jsonl"
CHUNKS_FILE = "chunks.jsonl"

MANIFEST_KEYS = (
    "flavor",
    "chunk_size",
    "overlap",
    "embed_model",
    "prompt_template_hash",
    "dim",
    "entry_count",
    "created_at",
    "format_version",
)


class IndexLoadError(ValueError):
    """The index directory is missing, truncated or inconsistent."""


class FlavorMismatchError(ConfigError):
    """The index lacks the entry kinds a retrieval flavor searches over."""


@dataclass(frozen=True)
class IndexEntry:
    derived: DerivedDocument
    embedding: Tuple[float, ...]

    def to_dict(self) -> dict:
        d = self.derived
        return {
            "derived_id": d.derived_id,
            "kind": d.kind,
            "source_chunk_id": d.source_chunk_id,
            "text": d.text,
            "embedding": list(self.embedding),
        }


@dataclass
class IndexManifest:
    flavor: str
    chunk_size: int
    overlap: int
    embed_model: str
    prompt_template_hash: str
    dim: int
    entry_count: int
    created_at: str
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in MANIFEST_KEYS}


@dataclass
class Index:
    """In-memory index. Treat as immutable once built or loaded."""

    manifest: IndexManifest
    chunks: List[Chunk] = field(default_factory=list)
    entries: List[IndexEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._chunk_by_id: Dict[str, Chunk] = {}
        for c in self.chunks:
            if c.chunk_id in self._chunk_by_id:
                raise ValueError(f"duplicate chunk_id {c.chunk_id!r}")
            self._chunk_by_id[c.chunk_id] = c
        dim = self.manifest.dim
        for e in self.entries:
            if e.derived.source_chunk_id not in self._chunk_by_id:
                raise ValueError(f"entry {e.derived.derived_id!r} points at unknown chunk {e.derived.source_chunk_id!r}")
            if len(e.embedding) != dim:
                raise VectorError(f"entry {e.derived.derived_id!r} has dim {len(e.embedding)}, index dim is {dim}")
            check_vector(e.embedding, e.derived.derived_id)
            if norm(e.embedding) == 0.0:
                raise VectorError(f"entry {e.derived.derived_id!r} has a zero-norm embedding")
        self.manifest.entry_count = len(self.entries)
        self._build_arrays()

    def _build_arrays(self) -> None:
        n = len(self.entries)
        if n:
            mat = np.array([e.embedding for e in self.entries], dtype=np.float64)
            self._unit = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        else:
            self._unit = np.zeros((0, max(self.manifest.dim, 1)))
        self._kinds = np.array([e.derived.kind for e in self.entries], dtype=object)
        source_codes: Dict[str, int] = {}
        self._source = np.array(
            [source_codes.setdefault(e.derived.source_chunk_id, len(source_codes)) for e in self.entries],
            dtype=np.int64,
        )
        self._docs = np.array([self._chunk_by_id[e.derived.source_chunk_id].doc_id for e in self.entries], dtype=object)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def flavor(self) -> Flavor:
        return Flavor.parse(self.manifest.flavor)

    @property
    def dim(self) -> int:
        return self.manifest.dim

    def chunk(self, chunk_id: str) -> Chunk:
        return self._chunk_by_id[chunk_id]

    def has_chunk(self, chunk_id: str) -> bool:
        return chunk_id in self._chunk_by_id

    def doc_ids(self) -> set:
        return {c.doc_id for c in self.chunks}

    def check_flavor(self, flavor: Flavor) -> None:
        """Raise unless this index holds every entry kind ``flavor`` searches."""
        needed = FLAVOR_KINDS[Flavor.parse(flavor)]
        have = FLAVOR_KINDS[self.flavor]
        missing = needed - have
        if missing:
            raise FlavorMismatchError(
                f"flavor {Flavor.parse(flavor).value!r} needs {sorted(needed)} entries but the index "
                f"was built as {self.flavor.value!r} ({sorted(have)})"
            )

    def search(
        self,
        query_vec: Vector,
        k: int,
        dedup_by_source: bool = False,
        kinds: Optional[Iterable[str]] = None,
        doc_id: Optional[str] = None,
    ) -> List[Tuple[IndexEntry, float]]:
        """Exact top-``k`` cosine search.

        Results are sorted by descending score, ties by insertion order. With
        ``dedup_by_source`` each source chunk contributes only its best entry and
        ``k`` counts chunks. ``kinds`` and ``doc_id`` restrict the candidate pool.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self.entries:
            return []
        if len(query_vec) != self.dim:
            raise VectorError(f"query dim {len(query_vec)} does not match index dim {self.dim}")
        check_vector(query_vec, "query")
        q = np.asarray(query_vec, dtype=np.float64)
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise VectorError("query has zero norm")

        mask = np.ones(len(self.entries), dtype=bool)
        if kinds is not None:
            mask &= np.isin(self._kinds, list(kinds))
        if doc_id is not None:
            mask &= self._docs == doc_id
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return []
        # Row-wise multiply-and-sum rather than a BLAS product: identical rows must get
        # bit-identical scores or the insertion-order tie-break is not honoured.
        scores = np.clip((self._unit[idx] * (q / qn)).sum(axis=1), -1.0, 1.0)
        order = np.lexsort((idx, -scores))

        out: List[Tuple[IndexEntry, float]] = []
        if not dedup_by_source:
            for j in order[:k]:
                out.append((self.entries[idx[j]], float(scores[j])))
            return out
        seen = set()
        for j in order:
            src = self._source[idx[j]]
            if src in seen:
                continue
            seen.add(src)
            out.append((self.entries[idx[j]], float(scores[j])))
            if len(out) == k:
                break
        return out


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False)


def save(index: Index, path) -> Path:
    """Write ``index`` to directory ``path`` (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / CHUNKS_FILE, "w", encoding="utf-8", newline="\n") as f:
        for c in index.chunks:
            f.write(_dumps(c.to_dict()) + "\n")
    with open(root / ENTRIES_FILE, "w", encoding="utf-8", newline="\n") as f:
        for e in index.entries:
            f.write(_dumps(e.to_dict()) + "\n")
    # Manifest last: its presence marks a complete write.
    with open(root / MANIFEST_FILE, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(index.manifest.to_dict(), indent=2, ensure_ascii=False) + "\n")
    return root


def _read_jsonl(path: Path) -> Iterable[Tuple[int, dict]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise IndexLoadError(f"{path.name} line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise IndexLoadError(f"{path.name} line {lineno}: expected an object")
            yield lineno, obj


def load(path) -> Index:
    root = Path(path)
    mpath = root / MANIFEST_FILE
    if not mpath.exists():
        raise IndexLoadError(f"{mpath} not found")
    try:
        raw = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IndexLoadError(f"{MANIFEST_FILE}: invalid JSON ({e.msg})") from None
    missing = [k for k in MANIFEST_KEYS if k not in raw]
    if missing:
        raise IndexLoadError(f"{MANIFEST_FILE}: missing keys {missing}")
    if raw["format_version"] != FORMAT_VERSION:
        raise IndexLoadError(f"{MANIFEST_FILE}: format_version {raw['format_version']} is not supported (expected {FORMAT_VERSION})")
    try:
        Flavor.parse(raw["flavor"])
    except ConfigError as e:
        raise IndexLoadError(f"{MANIFEST_FILE}: {e}") from None
    manifest = IndexManifest(**{k: raw[k] for k in MANIFEST_KEYS})
    dim = manifest.dim

    chunks: List[Chunk] = []
    seen_chunks = set()
    for lineno, obj in _read_jsonl(root / CHUNKS_FILE):
        try:
            c = Chunk.from_dict(obj)
        except (KeyError, TypeError, ValueError) as e:
            raise IndexLoadError(f"{CHUNKS_FILE} line {lineno}: bad chunk record ({e!r})") from None
        if c.chunk_id in seen_chunks:
            raise IndexLoadError(f"{CHUNKS_FILE} line {lineno}: duplicate chunk_id {c.chunk_id!r}")
        seen_chunks.add(c.chunk_id)
        chunks.append(c)

    entries: List[IndexEntry] = []
    for lineno, obj in _read_jsonl(root / ENTRIES_FILE):
        name = obj.get("derived_id", "?")
        try:
            derived = DerivedDocument(
                derived_id=obj["derived_id"],
                kind=obj["kind"],
                text=obj["text"],
                source_chunk_id=obj["source_chunk_id"],
            )
            emb = tuple(float(x) for x in obj["embedding"])
        except (KeyError, TypeError, ValueError) as e:
            raise IndexLoadError(f"{ENTRIES_FILE} line {lineno} (entry {name!r}): bad record ({e!r})") from None
        if len(emb) != dim:
            raise IndexLoadError(
                f"{ENTRIES_FILE} line {lineno} (entry {name!r}): embedding dim {len(emb)} != manifest dim {dim}"
            )
        if not all(math.isfinite(x) for x in emb) or norm(emb) == 0.0:
            raise IndexLoadError(f"{ENTRIES_FILE} line {lineno} (entry {name!r}): embedding is non-finite or zero")
        if derived.source_chunk_id not in seen_chunks:
            raise IndexLoadError(
                f"{ENTRIES_FILE} line {lineno} (entry {name!r}): unknown source chunk {derived.source_chunk_id!r}"
            )
        entries.append(IndexEntry(derived, emb))

    if len(entries) != manifest.entry_count:
        raise IndexLoadError(
            f"{ENTRIES_FILE} holds {len(entries)} entries but the manifest says {manifest.entry_count} (truncated?)"
        )
    return Index(manifest=manifest, chunks=chunks, entries=entries)


def empty_manifest(
    flavor: "Flavor | str",
    chunk_size: int,
    overlap: int,
    embed_model: str = "",
    prompt_template_hash: str = "",
    dim: int = 0,
    created_at: str = "",
) -> IndexManifest:
    return IndexManifest(
        flavor=Flavor.parse(flavor).value,
        chunk_size=chunk_size,
        overlap=overlap,
        embed_model=embed_model,
        prompt_template_hash=prompt_template_hash,
        dim=dim,
        entry_count=0,
        created_at=created_at,
    )


def from_vectors(
    vectors: Sequence[Sequence[float]],
    sources: Sequence[str],
    kinds: Optional[Sequence[str]] = None,
    flavor: "Flavor | str" = Flavor.U,
) -> Index:
    """Small in-memory index over given vectors; one chunk per distinct source."""
    kinds = kinds or ["raw"] * len(vectors)
    chunk_ids = list(dict.fromkeys(sources))
    chunks = [Chunk(chunk_id=c, doc_id="doc", text=f"text of {c}", token_span=(0, 1)) for c in chunk_ids]
    entries = [
        IndexEntry(DerivedDocument(f"e{i}", kinds[i], f"entry {i}", sources[i]), tuple(float(x) for x in v))
        for i, v in enumerate(vectors)
    ]
    dim = len(vectors[0]) if vectors else 0
    manifest = empty_manifest(flavor, 1, 0, embed_model="test", dim=dim)
    return Index(manifest=manifest, chunks=chunks, entries=entries)
