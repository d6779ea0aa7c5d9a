"""Prompt templates.

Every template is plain ``str.format`` text. The exact bytes are hashed into
index manifests and run reports, so changing a template changes the hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

INGEST_TEMPLATES = (
    "summary_system",
    "summary_user",
    "summary_user_with_previous",
    "questions_system",
    "questions_user",
)


@dataclass(frozen=True)
class PromptTemplates:
    summary_system: str = "You summarize text at the concept level, paraphrasing rather than quoting."
    summary_user: str = "Passage:\n{text}"
    summary_user_with_previous: str = "Summary of the previous passage:\n{previous}\n\nPassage:\n{text}"
    questions_system: str = (
        "Write {n} unique reading-comprehension questions answerable from the passage, one per line."
    )
    questions_user: str = "Passage:\n{text}"
    answer_system: str = (
        "You answer questions about a long document using the numbered context passages. "
        "Answer concisely."
    )
    answer_user: str = "Context:\n{context}\n\nQuestion: {question}"
    no_context: str = "(no context retrieved)"
    judge_system: str = (
        "You grade answers. Decide whether the generated answer is sufficiently similar to the "
        "ground truth, given the question. Reply with a single word: true or false."
    )
    judge_user: str = "Question: {question}\nGround truth: {ground_truth}\nGenerated answer: {answer}"
    judge_reask: str = "Reply with exactly one word: true or false."
    self_score_system: str = (
        "You grade your own answer against the ground truth. Reply with a single decimal "
        "number between 0 and 1."
    )
    self_score_user: str = "Question: {question}\nGround truth: {ground_truth}\nGenerated answer: {answer}"
    self_score_reask: str = "Reply with only a decimal number between 0 and 1."
    icl_task: str = (
        "You answer questions about a long document using the numbered context passages. "
        "Before the new question you are shown earlier questions with your answer, the ground "
        "truth and the score your answer received. Use them to improve your next answer. "
        "Answer concisely."
    )
    icl_pair: str = (
        "Earlier question: {question}\nYour answer: {answer}\nGround truth: {ground_truth}\n"
        "Score: {score:.2f}"
    )

    @classmethod
    def from_dict(cls, data: dict) -> "PromptTemplates":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown prompt template keys: {', '.join(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def hashes(self) -> dict:
        return {name: _sha256(text) for name, text in sorted(self.to_dict().items())}

    def ingest_hash(self) -> str:
        d = self.to_dict()
        return _sha256(json.dumps({k: d[k] for k in INGEST_TEMPLATES}, sort_keys=True))

    def full_hash(self) -> str:
        return _sha256(json.dumps(self.to_dict(), sort_keys=True))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
