"""Metrics, LLM-judged accuracy, chunk-retrieval match rates and run reports."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .core import Chunk, Flavor, RetrievalConfig, tokenize
from .dataset import TASK_TYPES, QAItem
from .index import Index
from .prompts import PromptTemplates
from .providers.base import ChatMessage, Provider, ProviderError
from .qa import ICLState, answer, icl_answer
from .retrieval import RetrievalResult, retrieve

logger = logging.getLogger(__name__)

DEFAULT_CCR_THRESHOLD = 0.7

FLAVOR_LABELS = {
    Flavor.BASELINE: "Baseline",
    Flavor.S: "S",
    Flavor.S_PLUS: "S+",
    Flavor.Q: "Q",
    Flavor.Q_PLUS: "Q+",
    Flavor.U: "U",
    Flavor.S_ICL: "S-ICL",
}

TASK_LABELS = {
    "timeline_reorder": "Timeline Reorder",
    "multiple_information_retrieval": "Multiple Information Retrieval",
    "comprehension_and_reasoning": "Comprehension and Reasoning",
    "computation": "Computation",
}


# ---------------------------------------------------------------- ROUGE


def _f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if overlap == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def rouge1(candidate: str, reference: str) -> float:
    """Unigram F1 over clipped token counts."""
    c = tokenize(candidate).tokens
    r = tokenize(reference).tokens
    if not c or not r:
        return 0.0
    overlap = sum((Counter(c) & Counter(r)).values())
    return _f1(overlap, len(c), len(r))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length, bit-parallel over ``a``."""
    if not a or not b:
        return 0
    masks: Dict[str, int] = {}
    for i, tok in enumerate(a):
        masks[tok] = masks.get(tok, 0) | (1 << i)
    full = (1 << len(a)) - 1
    v = full
    for tok in b:
        u = v & masks.get(tok, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def rougeL(candidate: str, reference: str) -> float:
    """LCS-based F1."""
    c = tokenize(candidate).tokens
    r = tokenize(reference).tokens
    if not c or not r:
        return 0.0
    return _f1(lcs_length(c, r), len(c), len(r))


# ---------------------------------------------------------------- judge


_VERDICT = re.compile(r"[a-z]+")


def parse_verdict(reply: str) -> Optional[bool]:
    for word in _VERDICT.findall(reply.lower()):
        if word == "true":
            return True
        if word == "false":
            return False
    return None


def judge_correct(
    question: str,
    generated_answer: str,
    ground_truth: str,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
) -> bool:
    """Ask the judge model whether the answer matches the ground truth.

    One re-ask on an unparseable verdict; after that the answer counts as wrong.
    Provider errors propagate.
    """
    t = templates or PromptTemplates()
    cfg = provider.config
    messages = [
        ChatMessage("system", t.judge_system),
        ChatMessage("user", t.judge_user.format(question=question, answer=generated_answer, ground_truth=ground_truth)),
    ]
    reply = provider.chat(messages, temperature=cfg.judge_temperature, model=cfg.judge_model)
    verdict = parse_verdict(reply)
    if verdict is None:
        messages = messages + [ChatMessage("assistant", reply), ChatMessage("user", t.judge_reask)]
        reply = provider.chat(messages, temperature=cfg.judge_temperature, model=cfg.judge_model)
        verdict = parse_verdict(reply)
    if verdict is None:
        logger.warning("judge verdict unparseable after one re-ask; counting as false (question %r)", question)
        return False
    return verdict


# ---------------------------------------------------------------- chunk match


def normalized_tokens(text: str) -> List[str]:
    """Lowercased tokens with punctuation-only tokens removed."""
    return [t for t in tokenize(text).tokens if any(ch.isalnum() for ch in t)]


def coverage(evidence: str, chunk_text: str) -> Optional[float]:
    """Fraction of the evidence's tokens (as a multiset) present in the chunk."""
    e = Counter(normalized_tokens(evidence))
    total = sum(e.values())
    if total == 0:
        return None
    c = Counter(normalized_tokens(chunk_text))
    return sum((e & c).values()) / total


def ccr_match(
    retrieved: Sequence[Chunk], evidence: Sequence[str], threshold: float = DEFAULT_CCR_THRESHOLD
) -> Optional[bool]:
    """True if some evidence span is covered at ``threshold`` by some retrieved chunk.

    None (undefined) when there is no usable evidence.
    """
    spans = [e for e in evidence if normalized_tokens(e)]
    if not spans:
        return None
    for e in spans:
        for c in retrieved:
            cov = coverage(e, c.text)
            if cov is not None and cov >= threshold:
                return True
    return False


# ---------------------------------------------------------------- runs


@dataclass
class EvalReport:
    records: List[dict]
    aggregates: dict
    config: dict = field(default_factory=dict)
    prompt_hashes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "aggregates": self.aggregates,
            "config": self.config,
            "prompt_hashes": self.prompt_hashes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    def write(self, path, label: Optional[str] = None) -> Path:
        """Write the JSON report and a text table next to it (same stem, ``.txt``)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_json())
        flavor = self.config.get("retrieval", {}).get("flavor", "run")
        with open(path.with_suffix(".txt"), "w", encoding="utf-8", newline="\n") as f:
            f.write(render_tables({label or flavor: self}))
        return path

    @classmethod
    def read(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(records=d["records"], aggregates=d["aggregates"], config=d.get("config", {}), prompt_hashes=d.get("prompt_hashes", {}))


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def _mean(values: List[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def aggregate(records: Sequence[dict]) -> dict:
    """Fold per-question records into the summary metrics.

    Records with ``correct`` None (provider/judge errors) are left out of accuracy
    and CCR rates. CCR rates only count records whose ``ccr_match`` is defined.
    """
    judged = [r for r in records if r["correct"] is not None]
    n_correct = sum(1 for r in judged if r["correct"])
    counts = {}
    per_task_accuracy = {}
    cp_ccr = {}
    ip_ccr = {}
    for task in TASK_TYPES:
        rs = [r for r in judged if r["task_type"] == task]
        good = [r for r in rs if r["correct"]]
        bad = [r for r in rs if not r["correct"]]
        good_def = [r for r in good if r["ccr_match"] is not None]
        bad_def = [r for r in bad if r["ccr_match"] is not None]
        c = {
            "items": sum(1 for r in records if r["task_type"] == task),
            "judged": len(rs),
            "correct": len(good),
            "correct_ccr_defined": len(good_def),
            "correct_ccr_match": sum(1 for r in good_def if r["ccr_match"]),
            "incorrect_ccr_defined": len(bad_def),
            "incorrect_ccr_match": sum(1 for r in bad_def if r["ccr_match"]),
        }
        counts[task] = c
        per_task_accuracy[task] = _ratio(c["correct"], c["judged"])
        cp_ccr[task] = _ratio(c["correct_ccr_match"], c["correct_ccr_defined"])
        ip_ccr[task] = _ratio(c["incorrect_ccr_match"], c["incorrect_ccr_defined"])
    scored = [r for r in records if r["rouge1"] is not None]
    return {
        "n_items": len(records),
        "n_judged": len(judged),
        "n_correct": n_correct,
        "n_errors": sum(1 for r in records if r["error"] is not None),
        "accuracy": _ratio(n_correct, len(judged)),
        "mean_rouge1": _mean([r["rouge1"] for r in scored]),
        "mean_rougeL": _mean([r["rougeL"] for r in scored]),
        "per_task_accuracy": per_task_accuracy,
        "cp_ccr": cp_ccr,
        "ip_ccr": ip_ccr,
        "counts": counts,
    }


def _record(item: QAItem, flavor: Flavor) -> dict:
    return {
        "item_id": item.item_id,
        "task_type": item.task_type,
        "flavor": flavor.value,
        "answer": None,
        "correct": None,
        "rouge1": None,
        "rougeL": None,
        "retrieved_chunk_ids": [],
        "ccr_match": None,
        "error": None,
    }


def _finish(rec: dict, item: QAItem, ctx: RetrievalResult, generated: str, provider, t, ccr_threshold) -> None:
    rec["answer"] = generated
    rec["rouge1"] = rouge1(generated, item.answer)
    rec["rougeL"] = rougeL(generated, item.answer)
    rec["ccr_match"] = ccr_match(ctx.chunks, item.evidence, ccr_threshold)
    try:
        rec["correct"] = judge_correct(item.question, generated, item.answer, provider, t)
    except ProviderError as e:
        rec["error"] = f"judge: {e}"


def evaluate_run(
    items: Sequence[QAItem],
    index: Index,
    config: RetrievalConfig,
    provider: Provider,
    templates: Optional[PromptTemplates] = None,
    ccr_threshold: float = DEFAULT_CCR_THRESHOLD,
    icl_max_pairs: int = 8,
    config_echo: Optional[dict] = None,
) -> EvalReport:
    """Retrieve, answer, score and judge every item, in dataset order.

    Retrieval for an item is limited to its own document when the index holds
    that document. ``s_icl`` runs strictly in order because each answer feeds the
    next prompt; other flavors fan out over ``max_parallel`` threads.
    """
    t = templates or PromptTemplates()
    index.check_flavor(config.flavor)
    docs = index.doc_ids()

    def context_for(item: QAItem) -> RetrievalResult:
        doc = item.doc_id if item.doc_id in docs else None
        return retrieve(item.question, index, config, provider, doc_id=doc)

    def run_one(item: QAItem) -> dict:
        rec = _record(item, config.flavor)
        try:
            ctx = context_for(item)
            rec["retrieved_chunk_ids"] = ctx.chunk_ids
            generated = answer(item.question, ctx, provider, t)
        except ProviderError as e:
            rec["error"] = f"answer: {e}"
            return rec
        _finish(rec, item, ctx, generated, provider, t, ccr_threshold)
        return rec

    if config.flavor == Flavor.S_ICL:
        records = []
        state = ICLState(task_description=t.icl_task, max_pairs=icl_max_pairs)
        for item in items:
            rec = _record(item, config.flavor)
            try:
                ctx = context_for(item)
                rec["retrieved_chunk_ids"] = ctx.chunk_ids
                generated, state = icl_answer(item.question, item.answer, ctx, state, provider, t)
            except ProviderError as e:
                rec["error"] = f"answer: {e}"
                records.append(rec)
                continue
            _finish(rec, item, ctx, generated, provider, t, ccr_threshold)
            records.append(rec)
    else:
        workers = provider.config.max_parallel
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(run_one, items))
        else:
            records = [run_one(i) for i in items]

    echo = config_echo if config_echo is not None else {
        "retrieval": config.to_dict(),
        "ccr_threshold": ccr_threshold,
        "icl_max_pairs": icl_max_pairs,
        "index_manifest": index.manifest.to_dict(),
    }
    hashes = dict(t.hashes())
    hashes["all"] = t.full_hash()
    return EvalReport(records=records, aggregates=aggregate(records), config=echo, prompt_hashes=hashes)


# ---------------------------------------------------------------- tables


def _pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{100 * v:.2f}%"


def _num(v: Optional[float], digits: int) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def _label(name: str) -> str:
    try:
        return FLAVOR_LABELS[Flavor(name)]
    except ValueError:
        return name


def _grid(header: List[str], rows: List[List[str]], n_left: int) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]

    def line(cells: List[str]) -> str:
        return "  ".join(c.ljust(w) if i < n_left else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows])


def render_tables(reports: Dict[str, EvalReport]) -> str:
    """Overall table (Method / Accuracy / ROUGE-1 / ROUGE-L) and per-task table."""
    overall = []
    for name, rep in reports.items():
        a = rep.aggregates
        overall.append([_label(name), _num(a["accuracy"], 2), _num(a["mean_rouge1"], 5), _num(a["mean_rougeL"], 5)])
    overall_txt = _grid(["Method", "Accuracy", "ROUGE-1", "ROUGE-L"], overall, 1)

    per_task = []
    for name, rep in reports.items():
        a = rep.aggregates
        for metric, key in (("Accuracy", "per_task_accuracy"), ("CP-CCR", "cp_ccr"), ("IP-CCR", "ip_ccr")):
            label = _label(name) if metric == "Accuracy" else ""
            per_task.append([label, metric] + [_pct(a[key][t]) for t in TASK_TYPES])
    task_txt = _grid(["Method", "Metric"] + [TASK_LABELS[t] for t in TASK_TYPES], per_task, 2)
    return overall_txt + "\n\n" + task_txt + "\n"
