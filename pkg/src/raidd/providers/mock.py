"""Deterministic offline provider.

Embeddings come from a seeded SHA-256 stream, so the same text always maps to the
same unit vector on every platform. Chat replies are looked up in a script keyed
by a hash of the prompt, then offered to handler callables, then echoed.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from collections import Counter
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from ..core import tokenize
from ..prompts import PromptTemplates
from .base import ChatMessage, ProviderConfig, check_messages, check_texts

Handler = Callable[[Sequence[ChatMessage]], Optional[str]]

ECHO_PREFIX = "MOCK:"


def prompt_key(messages: Sequence[ChatMessage]) -> str:
    """Stable hash of a prompt, used as the script lookup key."""
    canon = json.dumps([[m.role, m.content] for m in messages], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def hash_vector(text: str, dim: int, seed: int = 0) -> List[float]:
    """Pseudo-random unit vector derived from ``text``.

    Components are uniform in [-1, 1) built from SHA-256 blocks with integer
    arithmetic only, then normalized; bit-identical across platforms.
    """
    key = f"{seed}\x00{text}".encode("utf-8")
    values: List[float] = []
    block = 0
    while len(values) < dim:
        digest = hashlib.sha256(key + block.to_bytes(4, "big")).digest()
        for i in range(0, 32, 8):
            word = int.from_bytes(digest[i : i + 8], "big") >> 11
            values.append(word * (2.0 / 2**53) - 1.0)
        block += 1
    return _unit(values[:dim])


def bow_vector(text: str, dim: int, seed: int = 0) -> Optional[List[float]]:
    """Signed feature-hashed bag of words; None when the result has zero norm."""
    acc = [0.0] * dim
    for tok in tokenize(text).tokens:
        if not any(ch.isalnum() for ch in tok):
            continue
        h = int.from_bytes(hashlib.sha256(f"{seed}\x00{tok}".encode("utf-8")).digest()[:8], "big")
        acc[h % dim] += 1.0 if (h >> 63) else -1.0
    if not any(acc):
        return None
    return _unit(acc)


def _unit(values: List[float]) -> List[float]:
    n = math.sqrt(math.fsum(x * x for x in values))
    return [x / n for x in values]


class MockProvider:
    """Offline stand-in for an embedding + chat service.

    Args:
        dim: embedding dimension.
        seed: mixed into every embedding hash.
        script: prompt_key -> reply.
        handlers: callables tried in order when the script misses; the first
            non-None reply wins.
        semantic_table: exact text -> prescribed vector, checked before hashing.
        embed_mode: ``"hash"`` (random direction per text) or ``"bow"``
            (bag-of-words hashing, so lexical overlap means similarity).
        echo: reply ``"MOCK:" + last 64 chars`` of the last user message when
            nothing else answers; otherwise raise ``KeyError``.
    """

    def __init__(
        self,
        dim: int = 64,
        seed: int = 0,
        script: Optional[Mapping[str, str]] = None,
        handlers: Sequence[Handler] = (),
        semantic_table: Optional[Mapping[str, Sequence[float]]] = None,
        embed_mode: str = "hash",
        echo: bool = True,
        config: Optional[ProviderConfig] = None,
    ):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if embed_mode not in ("hash", "bow"):
            raise ValueError(f"unknown embed_mode {embed_mode!r}")
        self.dim = dim
        self.seed = seed
        self.script: Dict[str, str] = dict(script or {})
        self.handlers = list(handlers)
        self.semantic_table = {k: [float(x) for x in v] for k, v in (semantic_table or {}).items()}
        for text, vec in self.semantic_table.items():
            if len(vec) != dim:
                raise ValueError(f"semantic_table vector for {text!r} has dim {len(vec)}, expected {dim}")
        self.embed_mode = embed_mode
        self.echo = echo
        self.config = config or ProviderConfig(
            base_url="mock://", embed_model=f"mock-{embed_mode}-{dim}", chat_model="mock", judge_model="mock"
        )
        self.calls: List[dict] = []
        self._lock = threading.Lock()

    def add_reply(self, messages: Sequence[ChatMessage], reply: str) -> None:
        self.script[prompt_key(messages)] = reply

    def _vector(self, text: str) -> List[float]:
        if text in self.semantic_table:
            return list(self.semantic_table[text])
        if self.embed_mode == "bow":
            vec = bow_vector(text, self.dim, self.seed)
            if vec is not None:
                return vec
        return hash_vector(text, self.dim, self.seed)

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        check_texts(texts)
        with self._lock:
            self.calls.append({"op": "embed", "texts": list(texts)})
        return [self._vector(t) for t in texts]

    def chat(
        self,
        messages: Sequence[ChatMessage],
        temperature: float = 0.0,
        model: Optional[str] = None,
    ) -> str:
        check_messages(messages)
        with self._lock:
            self.calls.append({"op": "chat", "messages": list(messages), "model": model})
        reply = self.script.get(prompt_key(messages))
        if reply is not None:
            return reply
        for handler in self.handlers:
            reply = handler(messages)
            if reply is not None:
                return reply
        if not self.echo:
            raise KeyError(f"no scripted reply for prompt {prompt_key(messages)}")
        return ECHO_PREFIX + messages[-1].content[-64:]

    def chat_calls(self) -> List[List[ChatMessage]]:
        with self._lock:
            return [c["messages"] for c in self.calls if c["op"] == "chat"]


def template_regex(template: str) -> "re.Pattern[str]":
    """Regex matching text produced by ``template.format(...)``.

    ``{name}`` and ``{name:spec}`` fields become named lazy groups.
    """
    out = []
    pos = 0
    seen = set()
    for m in re.finditer(r"\{(\w+)(?::[^}]*)?\}", template):
        out.append(re.escape(template[pos : m.start()]))
        name = m.group(1)
        out.append(f"(?P={name})" if name in seen else f"(?P<{name}>.*?)")
        seen.add(name)
        pos = m.end()
    out.append(re.escape(template[pos:]))
    return re.compile("".join(out), re.DOTALL)


def _overlap_f1(a: str, b: str) -> float:
    ta = Counter(t for t in tokenize(a).tokens if any(c.isalnum() for c in t))
    tb = Counter(t for t in tokenize(b).tokens if any(c.isalnum() for c in t))
    common = sum((ta & tb).values())
    if not common:
        return 0.0
    p = common / sum(ta.values())
    r = common / sum(tb.values())
    return 2 * p * r / (p + r)


def _lead(text: str, n_tokens: int) -> str:
    seq = tokenize(text)
    return seq.span_text(text, 0, min(n_tokens, len(seq)))


def pipeline_handlers(templates: Optional[PromptTemplates] = None, judge_threshold: float = 0.5) -> List[Handler]:
    """Handlers that give every engine prompt a plausible deterministic reply.

    Summaries are the passage lead, questions name the passage's content words,
    answers quote the first context passage, and the judge and self-scorer use
    unigram overlap with the ground truth (identical strings always pass).
    """
    t = templates or PromptTemplates()
    summary_plain = template_regex(t.summary_user)
    summary_prev = template_regex(t.summary_user_with_previous)
    questions_sys = template_regex(t.questions_system)
    questions_user = template_regex(t.questions_user)
    answer_user = template_regex(t.answer_user)
    judge_user = template_regex(t.judge_user)
    score_user = template_regex(t.self_score_user)

    def find(messages: Sequence[ChatMessage], rx: "re.Pattern[str]") -> Optional["re.Match[str]"]:
        for m in messages:
            if m.role == "user":
                hit = rx.fullmatch(m.content)
                if hit:
                    return hit
        return None

    def summary(messages: Sequence[ChatMessage]) -> Optional[str]:
        if messages[0].role != "system" or messages[0].content != t.summary_system:
            return None
        last = messages[-1].content
        hit = summary_prev.fullmatch(last) or summary_plain.fullmatch(last)
        if not hit:
            return None
        return "Summary: " + _lead(hit.group("text"), 30)

    def questions(messages: Sequence[ChatMessage]) -> Optional[str]:
        head = questions_sys.fullmatch(messages[0].content) if messages[0].role == "system" else None
        hit = questions_user.fullmatch(messages[-1].content)
        if not head or not hit:
            return None
        n = int(head.group("n"))
        words: List[str] = []
        for tok in tokenize(hit.group("text")).tokens:
            if len(tok) >= 4 and tok.isalpha() and tok not in words:
                words.append(tok)
        lines = []
        for i in range(n):
            if words:
                q = f"What does the passage say about {words[i % len(words)]}?"
                if i >= len(words):
                    q = f"{q} ({i // len(words) + 1})"
            else:
                q = f"What is this passage about? ({i + 1})"
            lines.append(f"{i + 1}. {q}")
        return "\n".join(lines)

    def answer(messages: Sequence[ChatMessage]) -> Optional[str]:
        if messages[0].role != "system" or messages[0].content not in (t.answer_system, t.icl_task):
            return None
        hit = answer_user.fullmatch(messages[-1].content)
        if not hit:
            return None
        context = hit.group("context")
        if context.strip() == t.no_context:
            return "I do not know."
        first = re.match(r"\[1\] (.*?)(?:\n\n\[2\] |\Z)", context, re.DOTALL)
        passage = first.group(1) if first else context
        return _lead(passage, 40) or "I do not know."

    def judge(messages: Sequence[ChatMessage]) -> Optional[str]:
        if messages[0].role != "system" or messages[0].content != t.judge_system:
            return None
        hit = find(messages, judge_user)
        if not hit:
            return None
        ans, truth = hit.group("answer").strip(), hit.group("ground_truth").strip()
        ok = ans == truth or _overlap_f1(ans, truth) >= judge_threshold
        return "true" if ok else "false"

    def self_score(messages: Sequence[ChatMessage]) -> Optional[str]:
        if messages[0].role != "system" or messages[0].content != t.self_score_system:
            return None
        hit = find(messages, score_user)
        if not hit:
            return None
        ans, truth = hit.group("answer").strip(), hit.group("ground_truth").strip()
        return "1.00" if ans == truth else f"{_overlap_f1(ans, truth):.2f}"

    return [summary, questions, answer, judge, self_score]
