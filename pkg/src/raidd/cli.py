"""``raidd`` command line.

Exit codes: 0 success, 1 usage/config error, 2 provider failure, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from . import dataset as ds
from .config import BACKENDS, SPLITS, RunConfig, from_mapping, load_config
from .core import ConfigError, DataError, Flavor, RetrievalConfig
from .evaluation import EvalReport, evaluate_run, render_tables
from .index import IndexLoadError, load, save
from .ingest import build_index, load_corpus
from .providers import MockProvider, OpenAICompatibleProvider, ProviderError, pipeline_handlers
from .providers.base import ValidationError
from .qa import answer
from .retrieval import retrieve

logger = logging.getLogger("raidd")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PROVIDER = 2
EXIT_DATA = 3

CHECKPOINT_FILE = "ingest.checkpoint.jsonl"
MOCK_CREATED_AT = "1970-01-01T00:00:00Z"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which means provider failure here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="JSON or YAML run configuration")
    g.add_argument("--provider", choices=BACKENDS, help="model backend (default: mock)")
    g.add_argument("--seed", type=int, help="mock embedding seed")
    g.add_argument("--mock-dim", type=int, help="mock embedding dimension")
    g.add_argument("--mock-embed", choices=("hash", "bow"), help="mock embedding mode")
    g.add_argument("--base-url", help="OpenAI-compatible endpoint, e.g. https://api.openai.com/v1")
    g.add_argument("--api-key-env", help="environment variable holding the API key")
    g.add_argument("--embed-model")
    g.add_argument("--chat-model")
    g.add_argument("--judge-model")
    g.add_argument("--derive-model")
    g.add_argument("--max-parallel", type=int)
    g.add_argument("-v", "--verbose", action="store_true")


def _retrieval_flags(p: argparse.ArgumentParser, with_window: bool) -> None:
    if with_window:
        p.add_argument("--chunk-size", type=int)
        p.add_argument("--overlap", type=int)
    p.add_argument("--k", type=int, dest="top_k", help="chunks placed in the QA context")
    p.add_argument("--flavor", choices=[f.value for f in Flavor])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raidd", description="Retrieval over LLM-derived documents.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="chunk, derive, embed and persist an index")
    _common(p)
    _retrieval_flags(p, with_window=True)
    p.add_argument("--corpus", help="JSON-lines corpus {doc_id, title, text}")
    p.add_argument("--out", help="index directory to write")

    p = sub.add_parser("query", help="retrieve and answer one question")
    _common(p)
    _retrieval_flags(p, with_window=False)
    p.add_argument("--index")
    p.add_argument("--question", required=True)
    p.add_argument("--doc-id", help="restrict retrieval to one document")

    for name, help_ in (("eval", "evaluate one flavor on a dataset split"), ("compare", "evaluate several flavors")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _retrieval_flags(p, with_window=False)
        p.add_argument("--index")
        p.add_argument("--dataset", help="normalized JSON-lines QA dataset")
        p.add_argument("--split", choices=SPLITS)
        p.add_argument("--report", help="report JSON path; a .txt table is written beside it")
        p.add_argument("--ccr-threshold", type=float)
        p.add_argument("--icl-max-pairs", type=int)
        if name == "compare":
            p.add_argument("--flavors", required=True, help="comma-separated flavors, e.g. baseline,s,q,u")

    p = sub.add_parser("convert", help="normalize raw LooGLE long-dependency QA records")
    p.add_argument("--input", required=True, help="raw LooGLE JSON-lines file")
    p.add_argument("--dataset", required=True, help="output QA dataset (JSON lines)")
    p.add_argument("--corpus", required=True, help="output corpus (JSON lines)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    a = vars(args)
    overlay: Dict[str, dict] = {}

    def put(section: Optional[str], key: str, flag: str) -> None:
        value = a.get(flag)
        if value is None:
            return
        if section is None:
            overlay[key] = value
        else:
            overlay.setdefault(section, {})[key] = value

    put(None, "backend", "provider")
    put(None, "seed", "seed")
    put("mock", "dim", "mock_dim")
    put("mock", "embed_mode", "mock_embed")
    for key in ("base_url", "api_key_env", "embed_model", "chat_model", "judge_model", "derive_model", "max_parallel"):
        put("provider", key, key)
    for key in ("chunk_size", "overlap", "top_k", "flavor"):
        put("retrieval", key, key)
    put("eval", "ccr_threshold", "ccr_threshold")
    put("eval", "icl_max_pairs", "icl_max_pairs")
    put("eval", "split", "split")
    for key, flag in (("corpus", "corpus"), ("dataset", "dataset"), ("index", "index"), ("report", "report"), ("index", "out")):
        put("paths", key, flag)
    return from_mapping(overlay, cfg)


def make_provider(cfg: RunConfig):
    if cfg.backend == "mock":
        pcfg = replace(
            cfg.provider,
            base_url="mock://",
            embed_model=f"mock-{cfg.mock.embed_mode}-{cfg.mock.dim}-seed{cfg.seed}",
            chat_model="mock",
            judge_model="mock",
            derive_model=None,
        )
        return MockProvider(
            dim=cfg.mock.dim,
            seed=cfg.seed,
            handlers=pipeline_handlers(cfg.prompts),
            embed_mode=cfg.mock.embed_mode,
            config=pcfg,
        )
    if not os.environ.get(cfg.provider.api_key_env):
        logger.warning("environment variable %s is not set; sending requests without a key", cfg.provider.api_key_env)
    return OpenAICompatibleProvider(cfg.provider)


def _created_at(cfg: RunConfig) -> str:
    if cfg.backend == "mock":
        return MOCK_CREATED_AT
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise UsageError(f"{flag} is required (flag or config paths section)")
    return value


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_ingest(cfg: RunConfig) -> int:
    corpus_path = _require(cfg.paths.corpus, "--corpus")
    out = Path(_require(cfg.paths.index, "--out"))
    if cfg.retrieval.flavor == Flavor.S_ICL:
        logger.info("s_icl ingests as an s index")
    corpus = load_corpus(corpus_path)
    provider = make_provider(cfg)
    index = build_index(
        corpus,
        cfg.retrieval,
        provider,
        templates=cfg.prompts,
        checkpoint_path=out / CHECKPOINT_FILE,
        created_at=_created_at(cfg),
    )
    save(index, out)
    (out / CHECKPOINT_FILE).unlink(missing_ok=True)
    print(f"wrote {out}: {len(index.chunks)} chunks, {len(index)} entries, flavor={index.manifest.flavor}")
    return EXIT_OK


def _run_retrieval_config(cfg: RunConfig, index, flavor: Optional[Flavor] = None) -> RetrievalConfig:
    return RetrievalConfig(
        chunk_size=index.manifest.chunk_size,
        overlap=index.manifest.overlap,
        top_k=cfg.retrieval.top_k,
        flavor=flavor or cfg.retrieval.flavor,
    )


def cmd_query(cfg: RunConfig, args: argparse.Namespace) -> int:
    index = load(_require(cfg.paths.index, "--index"))
    flavor = Flavor.parse(args.flavor) if args.flavor else index.flavor
    if flavor == Flavor.S_ICL:
        raise UsageError("s_icl needs ground-truth labels and only runs inside eval/compare")
    rcfg = _run_retrieval_config(cfg, index, flavor)
    provider = make_provider(cfg)
    result = retrieve(args.question, index, rcfg, provider, doc_id=args.doc_id)
    for i, (c, h) in enumerate(zip(result.chunks, result.hits), 1):
        print(f"[{i}] {c.chunk_id}  score={h.score:.4f}  via={h.kind}")
        print(c.text)
        print()
    print("Answer:", answer(args.question, result, provider, cfg.prompts))
    return EXIT_OK


def _eval_one(cfg: RunConfig, index, items, flavor: Flavor, dataset_path: str) -> EvalReport:
    rcfg = _run_retrieval_config(cfg, index, flavor)
    echo = cfg.to_dict(include_paths=False)
    echo["retrieval"] = rcfg.to_dict()
    echo["inputs"] = {
        "dataset_sha256": _file_sha256(dataset_path),
        "split": cfg.eval.split,
        "n_items": len(items),
        "index_manifest": index.manifest.to_dict(),
    }
    return evaluate_run(
        items,
        index,
        rcfg,
        make_provider(cfg),
        templates=cfg.prompts,
        ccr_threshold=cfg.eval.ccr_threshold,
        icl_max_pairs=cfg.eval.icl_max_pairs,
        config_echo=echo,
    )


def _load_eval_inputs(cfg: RunConfig):
    index = load(_require(cfg.paths.index, "--index"))
    dataset_path = _require(cfg.paths.dataset, "--dataset")
    items = ds.select_split(ds.load_dataset(dataset_path), cfg.eval.split)
    return index, items, dataset_path


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    index, items, dataset_path = _load_eval_inputs(cfg)
    flavor = Flavor.parse(args.flavor) if args.flavor else index.flavor
    report = _eval_one(cfg, index, items, flavor, dataset_path)
    if cfg.paths.report:
        report.write(cfg.paths.report, label=flavor.value)
        print(f"wrote {cfg.paths.report}", file=sys.stderr)
    print(render_tables({flavor.value: report}), end="")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args: argparse.Namespace) -> int:
    index, items, dataset_path = _load_eval_inputs(cfg)
    flavors: List[Flavor] = []
    for name in args.flavors.split(","):
        if name.strip():
            flavors.append(Flavor.parse(name.strip()))
    if not flavors:
        raise UsageError("--flavors is empty")
    for f in flavors:
        index.check_flavor(f)
    reports = {f.value: _eval_one(cfg, index, items, f, dataset_path) for f in flavors}
    table = render_tables(reports)
    if cfg.paths.report:
        path = Path(cfg.paths.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        combined = {"flavors": {name: r.to_dict() for name, r in reports.items()}}
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(combined, indent=2, ensure_ascii=False) + "\n")
        with open(path.with_suffix(".txt"), "w", encoding="utf-8", newline="\n") as f:
            f.write(table)
        print(f"wrote {path}", file=sys.stderr)
    print(table, end="")
    return EXIT_OK


def cmd_convert(args: argparse.Namespace) -> int:
    with open(args.input, encoding="utf-8") as f:
        docs, items = ds.convert_loogle(f, source=args.input)
    ds.write_corpus(args.corpus, docs)
    ds.write_dataset(args.dataset, items)
    print(f"wrote {len(items)} items to {args.dataset} and {len(docs)} documents to {args.corpus}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "convert":
            return cmd_convert(args)
        cfg = resolve_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "query":
            return cmd_query(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "compare":
            return cmd_compare(cfg, args)
    except (UsageError, ConfigError) as e:
        print(f"raidd: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as e:
        print(f"raidd: provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except (DataError, IndexLoadError, ValidationError, OSError) as e:
        print(f"raidd: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
