"""QA datasets: the normalized JSON-lines schema and a converter for raw LooGLE records."""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Tuple

from .core import DataError
from .ingest import Document

logger = logging.getLogger(__name__)

TASK_TYPES = (
    "timeline_reorder",
    "multiple_information_retrieval",
    "comprehension_and_reasoning",
    "computation",
)

VAL_SIZE = 100
TEST_SIZE = 100

_REQUIRED = ("item_id", "doc_id", "question", "answer", "task_type")


@dataclass(frozen=True)
class QAItem:
    item_id: str
    doc_id: str
    question: str
    answer: str
    task_type: str
    evidence: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"unknown task_type {self.task_type!r}")

    def to_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "doc_id": self.doc_id,
            "question": self.question,
            "answer": self.answer,
            "task_type": self.task_type,
            "evidence": list(self.evidence),
        }


def normalize_task_type(raw: str) -> str:
    """'Multiple information retrieval' -> 'multiple_information_retrieval'."""
    name = re.sub(r"[^a-z0-9]+", "_", str(raw).strip().lower()).strip("_")
    if name == "timeline_reordering":
        name = "timeline_reorder"
    if name not in TASK_TYPES:
        raise DataError(f"unrecognized task type {raw!r}")
    return name


def load_dataset(path) -> List[QAItem]:
    items: List[QAItem] = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {lineno}: expected a JSON object")
            missing = [k for k in _REQUIRED if k not in obj]
            if missing:
                raise DataError(f"{path}: line {lineno}: missing field(s) {', '.join(missing)}")
            evidence = obj.get("evidence", [])
            if not isinstance(evidence, list) or not all(isinstance(e, str) for e in evidence):
                raise DataError(f"{path}: line {lineno}: 'evidence' must be a list of strings")
            try:
                item = QAItem(
                    item_id=str(obj["item_id"]),
                    doc_id=str(obj["doc_id"]),
                    question=str(obj["question"]),
                    answer=str(obj["answer"]),
                    task_type=obj["task_type"],
                    evidence=tuple(evidence),
                )
            except ValueError as e:
                raise DataError(f"{path}: line {lineno}: {e}") from None
            if item.item_id in seen:
                raise DataError(f"{path}: line {lineno}: duplicate item_id {item.item_id!r}")
            seen.add(item.item_id)
            items.append(item)
    return items


def split(items: List[QAItem], val_size: int = VAL_SIZE, test_size: int = TEST_SIZE) -> Tuple[List[QAItem], List[QAItem]]:
    """First ``val_size`` items for validation, the next ``test_size`` for test."""
    val = items[:val_size]
    test = items[val_size : val_size + test_size]
    if len(val) < val_size or len(test) < test_size:
        logger.warning(
            "dataset has %d items; splits shrink to val=%d, test=%d (wanted %d/%d)",
            len(items), len(val), len(test), val_size, test_size,
        )
    return val, test


def select_split(items: List[QAItem], name: str) -> List[QAItem]:
    if name == "all":
        return list(items)
    val, test = split(items)
    if name == "val":
        return val
    if name == "test":
        return test
    raise ValueError(f"unknown split {name!r}; expected val, test or all")


def _first(obj: dict, *keys, default=None):
    for k in keys:
        if k in obj and obj[k] is not None:
            return obj[k]
    return default


def _as_list(value) -> List[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value.strip() else []
    return [str(v) for v in value if str(v).strip()]


def _parse_pairs(value, where: str) -> list:
    if isinstance(value, list):
        return value
    if isinstance(value, str):
        for parse in (json.loads, ast.literal_eval):
            try:
                pairs = parse(value)
            except (ValueError, SyntaxError):
                continue
            if isinstance(pairs, list):
                return pairs
    raise DataError(f"{where}: cannot parse qa_pairs")


def convert_loogle(lines: Iterable[str], source: str = "<input>") -> Tuple[List[Document], List[QAItem]]:
    """Normalize raw LooGLE long-dependency QA records.

    Two record shapes are accepted: one document with a ``qa_pairs`` list
    (keys ``Q``/``A``/``type``/``S``), or one flat question per record
    (``context``, ``question``, ``answer``, ``evidence``, ``task``). Documents
    are deduplicated by id, or by text hash when the record has no id.
    """
    docs: dict = {}
    items: List[QAItem] = []
    per_doc_count: dict = {}

    def add_doc(obj: dict, where: str, id_keys: Tuple[str, ...]) -> str:
        text = _first(obj, "input", "context", "text")
        if not isinstance(text, str):
            raise DataError(f"{where}: record has no document text")
        doc_id = _first(obj, *id_keys)
        if doc_id is None:
            doc_id = "doc-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
        doc_id = str(doc_id)
        if doc_id not in docs:
            docs[doc_id] = Document(doc_id=doc_id, title=str(_first(obj, "title", default="")), text=text)
        elif docs[doc_id].text != text:
            raise DataError(f"{where}: doc_id {doc_id!r} reused for a different text")
        return doc_id

    def add_item(doc_id: str, q: dict, where: str) -> None:
        question = _first(q, "Q", "question")
        answer = _first(q, "A", "answer")
        task = _first(q, "type", "task", "task_type")
        if question is None or answer is None or task is None:
            raise DataError(f"{where}: QA record needs question, answer and type")
        n = per_doc_count.get(doc_id, 0)
        per_doc_count[doc_id] = n + 1
        items.append(
            QAItem(
                item_id=str(_first(q, "item_id", default=f"{doc_id}-q{n:03d}")),
                doc_id=doc_id,
                question=str(question),
                answer=str(answer),
                task_type=normalize_task_type(task),
                evidence=tuple(_as_list(_first(q, "S", "evidence"))),
            )
        )

    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = f"{source}: line {lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{where}: invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict):
            raise DataError(f"{where}: expected a JSON object")
        if "qa_pairs" in obj:
            doc_id = add_doc(obj, where, ("doc_id", "id"))
            for q in _parse_pairs(obj["qa_pairs"], where):
                if not isinstance(q, dict):
                    raise DataError(f"{where}: qa_pairs entries must be objects")
                add_item(doc_id, q, where)
        else:
            # In flat records "id" names the question, not the document.
            doc_id = add_doc(obj, where, ("doc_id",))
            flat = dict(obj)
            if "item_id" not in flat and "id" in flat:
                flat["item_id"] = flat["id"]
            add_item(doc_id, flat, where)
    return list(docs.values()), items


def write_jsonl(path, rows: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_corpus(path, docs: Iterable[Document]) -> None:
    write_jsonl(path, ({"doc_id": d.doc_id, "title": d.title, "text": d.text} for d in docs))


def write_dataset(path, items: Iterable[QAItem]) -> None:
    write_jsonl(path, (i.to_dict() for i in items))
