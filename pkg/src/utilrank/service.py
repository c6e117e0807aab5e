"""HTTP query service over an indexed corpus.

A small synchronous JSON API on the standard-library threading server:

- ``POST /query`` runs the full pipeline for a request body
  ``{"query", "financial_statement", "top_k"?, "u_threshold"?}``,
  persists the run, and returns the result document.
- ``GET /runs/{run_id}`` returns a persisted audit record.
- ``GET /health`` reports corpus size.

Each request owns an independent pipeline run over the shared read-only
indexes; there is no session state. Malformed bodies get 400, unknown
runs 404, and endpoint or store failures 503 so a load balancer can tell
client mistakes from a degraded backend.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import EndpointError, RunNotFound
from .index import IndexedCorpus
from .judge import QueryStatement
from .pipeline import (
    PipelineConfig,
    load_run,
    persist_run,
    record_to_dict,
    result_document,
    run_query,
)

logger = logging.getLogger(__name__)


class QueryService:
    """Shared state behind the HTTP handlers."""

    def __init__(
        self,
        corpus: IndexedCorpus,
        cfg: PipelineConfig,
        store_path: Path | str,
    ):
        self.corpus = corpus
        self.cfg = cfg
        self.store_path = Path(store_path)

    def handle_query(self, body: dict) -> tuple[int, dict]:
        try:
            cfg, statement = self._request_config(body)
        except (KeyError, TypeError, ValueError) as exc:
            return 400, {"error": f"bad request: {exc}"}
        record = run_query(self.corpus, statement, cfg)
        try:
            persist_run(record, self.store_path)
        except EndpointError as exc:
            return 503, {"error": str(exc)}
        document = result_document(record)
        if record.status != "success":
            if any(e.kind == "endpoint" for e in record.errors):
                return 503, document
            return 500, document
        return 200, document

    def _request_config(self, body: dict) -> tuple[PipelineConfig, QueryStatement]:
        if not isinstance(body, dict):
            raise TypeError("body must be a JSON object")
        query = body.get("query")
        if not isinstance(query, str) or not query.strip():
            raise ValueError("'query' must be a non-empty string")
        statement_text = body.get("financial_statement", "")
        if not isinstance(statement_text, str):
            raise ValueError("'financial_statement' must be a string")
        overrides = {}
        if "top_k" in body:
            if not isinstance(body["top_k"], int) or isinstance(body["top_k"], bool):
                raise ValueError("'top_k' must be an integer")
            overrides["top_k"] = body["top_k"]
        if "u_threshold" in body:
            threshold = body["u_threshold"]
            if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
                raise ValueError("'u_threshold' must be a number")
            overrides["utility_threshold"] = float(threshold)
        unknown = set(body) - {"query", "financial_statement", "top_k", "u_threshold"}
        if unknown:
            raise ValueError(f"unknown fields: {sorted(unknown)}")
        # replace() re-runs validation, so out-of-range values 400 here.
        cfg = replace(self.cfg, **overrides) if overrides else self.cfg
        return cfg, QueryStatement(query, statement_text)

    def handle_get_run(self, run_id: str) -> tuple[int, dict]:
        try:
            record = load_run(self.store_path, run_id)
        except RunNotFound as exc:
            return 404, {"error": str(exc)}
        except EndpointError as exc:
            return 503, {"error": str(exc)}
        return 200, record_to_dict(record)

    def handle_health(self) -> tuple[int, dict]:
        return 200, {
            "status": "ok",
            "documents": len(self.corpus.documents),
            "segments": len(self.corpus.segments),
        }


class QueryHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: QueryService):
        super().__init__(address, _Handler)
        self.service = service


class _Handler(BaseHTTPRequestHandler):
    server: QueryHTTPServer

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False, indent=2).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802 - BaseHTTPRequestHandler contract
        service = self.server.service
        if self.path == "/health":
            self._send_json(*service.handle_health())
        elif self.path.startswith("/runs/"):
            run_id = self.path[len("/runs/") :]
            self._send_json(*service.handle_get_run(run_id))
        else:
            self._send_json(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):  # noqa: N802 - BaseHTTPRequestHandler contract
        if self.path != "/query":
            self._send_json(404, {"error": f"unknown path {self.path}"})
            return
        length = self.headers.get("Content-Length")
        if length is None:
            self._send_json(400, {"error": "missing Content-Length"})
            return
        try:
            raw = self.rfile.read(int(length))
            body = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            self._send_json(400, {"error": f"body is not valid JSON: {exc}"})
            return
        self._send_json(*self.server.service.handle_query(body))

    def log_message(self, format, *args):  # noqa: A002 - base-class signature
        logger.debug("%s - %s", self.address_string(), format % args)


def make_server(
    corpus: IndexedCorpus,
    cfg: PipelineConfig,
    store_path: Path | str,
    host: str = "127.0.0.1",
    port: int = 8080,
) -> QueryHTTPServer:
    """Bind the service; caller drives serve_forever()/shutdown()."""
    return QueryHTTPServer((host, port), QueryService(corpus, cfg, store_path))
