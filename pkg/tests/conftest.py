import json
import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from raidd.core import tokenize  # noqa: E402
from raidd.ingest import Document  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"

_SYLLABLES = ["ka", "lo", "mi", "ren", "sto", "va", "dun", "pel", "or", "tis", "bra", "quen"]


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def long_text() -> str:
    """A ~3,000-word document assembled from the fixture sentences."""
    sentences = []
    for line in (FIXTURES / "loogle_raw.jsonl").read_text().splitlines():
        rec = json.loads(line)
        text = rec.get("input") or rec.get("context")
        sentences.extend(s.strip() + "." for s in text.replace("\n", " ").split(". ") if s.strip())
    rng = random.Random(7)
    out = []
    while sum(len(s.split()) for s in out) < 3000:
        out.append(rng.choice(sentences))
    paragraphs = [" ".join(out[i : i + 6]) for i in range(0, len(out), 6)]
    return "\n\n".join(paragraphs)


def words_text(n_tokens: int, seed: int = 0) -> str:
    """``n_tokens`` pseudo-words (alphabetic, so every word is one token)."""
    rng = random.Random(seed)
    words = ["".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3))) for _ in range(n_tokens)]
    text = " ".join(words)
    assert len(tokenize(text)) == n_tokens
    return text


@pytest.fixture
def three_chunk_doc() -> Document:
    # 660 tokens at 256/50 -> spans [0,256) [206,462) [412,660); every chunk asks for 8 questions.
    return Document(doc_id="d1", title="three chunks", text=words_text(660))


# One PASS/FAIL line per acceptance criterion, printed after the run.
_criteria = []


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    criterion = getattr(getattr(item, "function", None), "criterion", None)
    if criterion and (report.when == "call" or report.failed):
        _criteria.append((criterion, "PASS" if report.passed else "FAIL"))
    return report


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criteria:
        terminalreporter.write_line(f"{outcome}  {name}")
