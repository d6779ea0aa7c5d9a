"""Answer generation, self-scoring and the in-context optimizer loop."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from .prompts import PromptTemplates
from .providers.base import ChatMessage, Provider
from .retrieval import RetrievalResult

logger = logging.getLogger(__name__)

_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")

SELF_SCORE_REASKS = 2


@dataclass(frozen=True)
class SolutionScorePair:
    question: str
    generated_answer: str
    ground_truth: str
    self_score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.self_score <= 1.0:
            raise ValueError(f"self_score must lie in [0, 1], got {self.self_score}")


@dataclass(frozen=True)
class ICLState:
    """History of scored answers, oldest first. Immutable; updates return a new state."""

    history: Tuple[SolutionScorePair, ...] = ()
    task_description: str = PromptTemplates.icl_task
    max_pairs: int = 8

    def __post_init__(self) -> None:
        if self.max_pairs < 0:
            raise ValueError("max_pairs must be >= 0")

    def add(self, pair: SolutionScorePair) -> "ICLState":
        """Append ``pair`` and keep the ``max_pairs`` best (newer wins ties)."""
        history = self.history + (pair,)
        if len(history) > self.max_pairs:
            ranked = sorted(range(len(history)), key=lambda i: (history[i].self_score, i), reverse=True)
            keep = sorted(ranked[: self.max_pairs])
            history = tuple(history[i] for i in keep)
        return replace(self, history=history)


def render_context(context: Optional[RetrievalResult], templates: PromptTemplates) -> str:
    if context is None or not context.chunks:
        return templates.no_context
    return "\n\n".join(f"[{i}] {c.text}" for i, c in enumerate(context.chunks, 1))


def answer_messages(
    question: str, context: Optional[RetrievalResult], templates: Optional[PromptTemplates] = None
) -> List[ChatMessage]:
    t = templates or PromptTemplates()
    body = t.answer_user.format(context=render_context(context, t), question=question)
    return [ChatMessage("system", t.answer_system), ChatMessage("user", body)]


def answer(
    question: str,
    context: Optional[RetrievalResult],
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
) -> str:
    """One chat call over the numbered raw context chunks."""
    messages = answer_messages(question, context, templates)
    return provider.chat(messages, temperature=provider.config.temperature).strip()


def parse_score(reply: str) -> Optional[float]:
    """First number in ``reply`` clamped to [0, 1], or None."""
    m = _NUMBER.search(reply)
    if not m:
        return None
    return min(1.0, max(0.0, float(m.group())))


def self_score(
    question: str,
    generated_answer: str,
    ground_truth: str,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
) -> float:
    t = templates or PromptTemplates()
    cfg = provider.config
    messages = [
        ChatMessage("system", t.self_score_system),
        ChatMessage(
            "user", t.self_score_user.format(question=question, answer=generated_answer, ground_truth=ground_truth)
        ),
    ]
    for attempt in range(SELF_SCORE_REASKS + 1):
        reply = provider.chat(messages, temperature=cfg.judge_temperature, model=cfg.chat_model)
        score = parse_score(reply)
        if score is not None:
            return score
        if attempt < SELF_SCORE_REASKS:
            messages = messages + [ChatMessage("assistant", reply), ChatMessage("user", t.self_score_reask)]
    logger.warning("self-score unparseable after %d re-asks; using 0.0 (question %r)", SELF_SCORE_REASKS, question)
    return 0.0


def build_meta_prompt(
    state: ICLState,
    question: str,
    context: Optional[RetrievalResult],
    templates: Optional[PromptTemplates] = None,
) -> List[ChatMessage]:
    """Task description, then past pairs from lowest to highest score, then the new question.

    Pairs with equal scores keep their arrival order.
    """
    t = templates or PromptTemplates()
    messages = [ChatMessage("system", state.task_description)]
    order = sorted(range(len(state.history)), key=lambda i: (state.history[i].self_score, i))
    for i in order:
        p = state.history[i]
        messages.append(
            ChatMessage(
                "user",
                t.icl_pair.format(
                    question=p.question,
                    answer=p.generated_answer,
                    ground_truth=p.ground_truth,
                    score=p.self_score,
                ),
            )
        )
    body = t.answer_user.format(context=render_context(context, t), question=question)
    messages.append(ChatMessage("user", body))
    return messages


def icl_answer(
    question: str,
    ground_truth: str,
    context: Optional[RetrievalResult],
    state: ICLState,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
) -> Tuple[str, ICLState]:
    """Answer with the meta-prompt, score the answer, and fold it into the history.

    On a provider error nothing is returned and ``state`` is untouched.
    """
    messages = build_meta_prompt(state, question, context, templates)
    generated = provider.chat(messages, temperature=provider.config.temperature).strip()
    score = self_score(question, generated, ground_truth, provider, templates)
    pair = SolutionScorePair(question, generated, ground_truth, score)
    return generated, state.add(pair)


def replay(
    stream: Sequence[Tuple[str, str]],
    contexts: Sequence[Optional[RetrievalResult]],
    state: ICLState,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
) -> Tuple[List[str], ICLState]:
    """Run ``icl_answer`` over (question, ground_truth) pairs in order."""
    answers = []
    for (q, truth), ctx in zip(stream, contexts):
        a, state = icl_answer(q, truth, ctx, state, provider, templates)
        answers.append(a)
    return answers, state
