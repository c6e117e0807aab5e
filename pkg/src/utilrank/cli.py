"""Operator command line: ingest, query, bench, serve, show-run.

Exit codes follow one contract everywhere: 0 success, 1 user error (bad
flags, bad input files, unknown run ids), 2 system error (unreachable
model endpoints, broken run store). Configuration resolves in precedence
order: JSON config file, then the environment variables
``UTILRANK_JUDGE_URL`` / ``UTILRANK_EMBED_URL``, then explicit flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import EndpointError, InvalidParams, InvalidThreshold, UtilrankError
from .evalbench import (
    generate_synthetic_corpus,
    render_report,
    run_benchmark,
    write_report,
)
from .index import IndexedCorpus, RemoteEmbedder, stored_dense_dimension
from .ingest import SegmentKind, load_corpus_dir
from .judge import QueryStatement
from .pipeline import (
    JudgeMode,
    PipelineConfig,
    config_from_dict,
    list_runs,
    load_run,
    make_embedder,
    persist_run,
    record_to_dict,
    result_document,
    run_query,
)
from .service import make_server


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_judge_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--mock-judge", action="store_true",
        help="use the deterministic offline judge (no endpoints needed)",
    )
    parser.add_argument("--judge-url", help="chat endpoint for verdicts")
    parser.add_argument("--judge-model", help="model name sent to the judge endpoint")
    parser.add_argument(
        "--staged", action="store_true",
        help="gate on a lightweight endpoint first, score utility on --judge-url",
    )
    parser.add_argument("--gate-url", help="chat endpoint for the staged gate")
    parser.add_argument("--gate-model", help="model name for the staged gate")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="utilrank",
        description="Utility-gated evidence retrieval over long financial documents.",
    )
    parser.add_argument("--config", help="JSON config file (see README)")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="parse a corpus directory and build indexes")
    p.add_argument("--corpus", required=True, help="directory of .md files with front matter")
    p.add_argument("--out", required=True, help="output directory for segments and indexes")
    p.add_argument("--embed-dim", type=int, help="embedding dimension (builtin default 256)")
    p.set_defaults(func=cmd_ingest)

    p = commands.add_parser("query", help="run one query against an ingested index")
    p.add_argument("--index", required=True, help="directory produced by ingest")
    p.add_argument("--query", required=True, help="the analyst question")
    p.add_argument("--statement", help="file holding the supplementary financial statement")
    p.add_argument("--statement-text", help="supplementary statement given inline")
    p.add_argument("--top-k", type=int, help="per-channel retrieval depth (default 50)")
    p.add_argument("--threshold", type=float, help="utility cut in [0, 1] (default 0.5)")
    p.add_argument("--store", help="run store directory (default: <index>/runs)")
    _add_judge_flags(p)
    p.set_defaults(func=cmd_query)

    p = commands.add_parser("bench", help="benchmark on a seeded synthetic corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--docs", type=int, default=20, help="number of synthetic documents")
    p.add_argument("--queries", type=int, default=10, help="number of labeled queries")
    p.add_argument("--k", default="1,5,10", help="comma-separated k values")
    p.add_argument(
        "--threshold", type=float, default=0.0,
        help="utility cut for the full pipeline (default 0.0: gate only)",
    )
    p.add_argument("--out", default="bench_report.json", help="report file path")
    _add_judge_flags(p)
    p.set_defaults(func=cmd_bench)

    p = commands.add_parser("serve", help="HTTP query service over an ingested index")
    p.add_argument("--index", required=True, help="directory produced by ingest")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--store", help="run store directory (default: <index>/runs)")
    _add_judge_flags(p)
    p.set_defaults(func=cmd_serve)

    p = commands.add_parser("show-run", help="inspect the persisted audit trail")
    p.add_argument("--store", required=True, help="run store directory")
    p.add_argument("--run-id", help="print one full record (omit to list all runs)")
    p.set_defaults(func=cmd_show_run)

    return parser


# ---------------------------------------------------------------------------
# Configuration assembly
# ---------------------------------------------------------------------------

def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        cfg = PipelineConfig()
    else:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            cfg = config_from_dict(data)
        except OSError as exc:
            raise InvalidParams(f"config file {path}: {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise InvalidParams(f"config file {path} is not valid: {exc}") from exc
    judge_url = os.environ.get("UTILRANK_JUDGE_URL")
    if judge_url:
        cfg.judge_endpoint.url = judge_url
    embed_url = os.environ.get("UTILRANK_EMBED_URL")
    if embed_url:
        cfg.embed_endpoint.url = embed_url
    return cfg


def _apply_judge_flags(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    if getattr(args, "judge_url", None):
        cfg.judge_endpoint.url = args.judge_url
    if getattr(args, "judge_model", None):
        cfg.judge_endpoint.model = args.judge_model
    if getattr(args, "gate_url", None):
        cfg.gate_endpoint.url = args.gate_url
    if getattr(args, "gate_model", None):
        cfg.gate_endpoint.model = args.gate_model

    if getattr(args, "mock_judge", False):
        cfg.judge_mode = JudgeMode.MOCK
        return
    if getattr(args, "staged", False):
        cfg.judge_mode = JudgeMode.STAGED
    elif cfg.judge_endpoint.url and cfg.judge_mode == JudgeMode.MOCK:
        cfg.judge_mode = JudgeMode.SINGLE
    if cfg.judge_mode == JudgeMode.SINGLE and not cfg.judge_endpoint.url:
        raise InvalidParams("judge mode 'single' needs --judge-url or UTILRANK_JUDGE_URL")
    if cfg.judge_mode == JudgeMode.STAGED and not (
        cfg.judge_endpoint.url and cfg.gate_endpoint.url
    ):
        raise InvalidParams("judge mode 'staged' needs both --judge-url and --gate-url")


def _set_threshold(cfg: PipelineConfig, value: float | None) -> None:
    if value is None:
        return
    if not 0.0 <= value <= 1.0:
        raise InvalidThreshold(f"utility threshold {value} outside [0, 1]")
    cfg.utility_threshold = value


def _open_index(index_dir: Path, cfg: PipelineConfig) -> IndexedCorpus:
    if not (index_dir / "segments.jsonl").exists():
        raise InvalidParams(f"{index_dir} does not contain an ingested index")
    embedder = None
    if cfg.embed_endpoint.url:
        embedder = RemoteEmbedder(
            cfg.embed_endpoint.url,
            cfg.embed_endpoint.model,
            stored_dense_dimension(index_dir / "dense.idx.json"),
            timeout=cfg.embed_endpoint.timeout,
            max_retries=cfg.embed_endpoint.max_retries,
        )
    return IndexedCorpus.load(index_dir, embedder)


def _store_path(args: argparse.Namespace, index_dir: Path, cfg: PipelineConfig) -> Path:
    if getattr(args, "store", None):
        return Path(args.store)
    if cfg.run_store_path != "runs":  # explicitly configured
        return Path(cfg.run_store_path)
    return index_dir / "runs"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    corpus_dir = Path(args.corpus)
    if not corpus_dir.is_dir():
        print(f"error: corpus directory {corpus_dir} does not exist", file=sys.stderr)
        return 1
    if args.embed_dim is not None:
        if args.embed_dim < 1:
            raise InvalidParams("--embed-dim must be >= 1")
        cfg.embed_dimension = args.embed_dim
    documents, failures = load_corpus_dir(corpus_dir)
    for name, message in failures:
        print(f"warning: skipped {name}: {message}", file=sys.stderr)
    if not documents:
        print("error: no documents could be ingested", file=sys.stderr)
        return 1
    indexed = IndexedCorpus.build(documents, make_embedder(cfg))
    out_dir = Path(args.out)
    indexed.save(out_dir)
    n_tables = sum(
        1 for s in indexed.segments.values() if s.kind == SegmentKind.TABLE
    )
    print(
        f"ingested {len(documents)} documents "
        f"({len(failures)} skipped), {len(indexed.segments)} segments "
        f"({n_tables} tables) -> {out_dir}"
    )
    return 0


def _read_statement(args: argparse.Namespace) -> str:
    if args.statement:
        return Path(args.statement).read_text(encoding="utf-8").strip()
    return args.statement_text or ""


def cmd_query(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    _set_threshold(cfg, args.threshold)
    if args.top_k is not None:
        if args.top_k < 1:
            raise InvalidParams("--top-k must be >= 1")
        cfg.top_k = args.top_k
    index_dir = Path(args.index)
    corpus = _open_index(index_dir, cfg)
    statement = QueryStatement(args.query, _read_statement(args))

    record = run_query(corpus, statement, cfg)
    persist_run(record, _store_path(args, index_dir, cfg))
    print(json.dumps(result_document(record), ensure_ascii=False, indent=2))
    if record.status != "success":
        for error in record.errors:
            print(f"error[{error.stage}/{error.kind}]: {error.message}", file=sys.stderr)
        return 2 if any(e.kind == "endpoint" for e in record.errors) else 1
    return 0


def cmd_bench(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    _set_threshold(cfg, args.threshold)
    try:
        k_values = tuple(int(part) for part in args.k.split(",") if part.strip())
    except ValueError as exc:
        raise InvalidParams(f"--k must be comma-separated integers: {args.k!r}") from exc
    corpus = generate_synthetic_corpus(args.seed, args.docs, args.queries)
    report = run_benchmark(corpus, cfg, k_values)
    print(render_report(report))
    out = Path(args.out)
    write_report(report, out)
    print(f"report written to {out}", file=sys.stderr)
    return 0


def cmd_serve(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    index_dir = Path(args.index)
    corpus = _open_index(index_dir, cfg)
    store = _store_path(args, index_dir, cfg)
    server = make_server(corpus, cfg, store, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port} (store: {store})", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_show_run(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = Path(args.store)
    if args.run_id:
        record = load_run(store, args.run_id)
        print(json.dumps(record_to_dict(record), ensure_ascii=False, indent=2))
        return 0
    entries = list_runs(store)
    if not entries:
        print("no runs recorded", file=sys.stderr)
        return 0
    for entry in entries:
        print(json.dumps(entry, ensure_ascii=False))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        _apply_judge_flags(cfg, args)
        return args.func(args, cfg)
    except EndpointError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except UtilrankError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
