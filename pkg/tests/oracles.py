"""Independent reference implementations used to check the engine.

Nothing here calls the code path it is used to verify.
"""

import math
import re
from typing import Dict, List, Sequence, Tuple


def reference_token_count(text: str) -> int:
    # Whitespace split, then word runs and single non-word symbols inside each piece.
    return sum(len(re.findall(r"\w+|\W", piece)) for piece in text.split())


def naive_windows(n_tokens: int, size: int, overlap: int) -> List[Tuple[int, int]]:
    """Token-by-token window assembly: grow a window, emit it, rewind by ``overlap``."""
    spans = []
    pos = 0
    while pos < n_tokens:
        window = []
        i = pos
        while i < n_tokens and len(window) < size:
            window.append(i)
            i += 1
        spans.append((window[0], window[-1] + 1))
        if window[-1] == n_tokens - 1:
            break
        pos = window[-1] + 1 - overlap
    return spans


def closed_form_chunk_count(n_tokens: int, size: int, overlap: int) -> int:
    if n_tokens == 0:
        return 0
    stride = size - overlap
    return math.ceil(max(n_tokens - size, 0) / stride) + 1


def py_cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def brute_force_search(
    vectors: Sequence[Sequence[float]],
    sources: Sequence[str],
    query: Sequence[float],
    k: int,
    dedup: bool,
    score_fn=py_cosine,
) -> List[Tuple[int, float]]:
    """Full sort by (-score, insertion index); optional group-by-source keeping each group's best."""
    scored = [(i, score_fn(v, query)) for i, v in enumerate(vectors)]
    if dedup:
        best: Dict[str, Tuple[int, float]] = {}
        for i, s in scored:
            cur = best.get(sources[i])
            if cur is None or s > cur[1] or (s == cur[1] and i < cur[0]):
                best[sources[i]] = (i, s)
        scored = list(best.values())
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def dp_lcs(a: Sequence[str], b: Sequence[str]) -> int:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def clipped_overlap(cand: Sequence[str], ref: Sequence[str]) -> int:
    pool = list(ref)
    hits = 0
    for tok in cand:
        if tok in pool:
            pool.remove(tok)
            hits += 1
    return hits


def f1(overlap: int, n_cand: int, n_ref: int) -> float:
    if n_cand == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p, r = overlap / n_cand, overlap / n_ref
    return 2 * p * r / (p + r)
