"""HTTP front end for the selection pipeline.

``POST /v1/select`` takes a request record and returns the selection result
with per-stage timings; ``GET /v1/health`` reports version and categories.
Built on the standard library's threading HTTP server.
"""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from . import __version__
from .comparator import ComparatorConfig
from .descriptor import DecodeError, decode_image
from .imagetypes import TypeClassifierModel, load_profiles
from .selection import CategoryEntry, ImageInput, Item, PipelineDeps, RemovedImage, SelectionResult, run_pipeline
from .quality import QualityConfig

log = logging.getLogger(__name__)

ENV_CONFIG = "IMAGESELECT_CONFIG"
ENV_PORT = "IMAGESELECT_PORT"
DEFAULT_PORT = 8080
FETCH_STATUSES = ("ok", "timeout", "http_error", "decode_error")


class RequestError(ValueError):
    """Malformed request; maps to a 4xx response."""


@dataclass(frozen=True)
class FetchLimits:
    max_parallel: int = 8
    per_url_timeout: float = 10.0
    max_bytes: int = 20 * 1024 * 1024

    def __post_init__(self):
        if self.max_parallel < 1 or self.per_url_timeout <= 0 or self.max_bytes < 1:
            raise ValueError("fetch limits must be positive")


@dataclass(frozen=True)
class FetchOutcome:
    url: str
    status: str
    data: bytes | None = field(default=None, repr=False)
    error: str | None = None
    elapsed_ms: float = 0.0

    def __post_init__(self):
        if self.status not in FETCH_STATUSES:
            raise ValueError(f"unknown fetch status {self.status!r}")
        if (self.data is None) == (self.error is None):
            raise ValueError("exactly one of data/error must be set")


def _fetch_one(url: str, limits: FetchLimits) -> FetchOutcome:
    t0 = time.perf_counter()

    def done(status, data=None, error=None):
        return FetchOutcome(url, status, data, error, 1000 * (time.perf_counter() - t0))

    try:
        with urllib.request.urlopen(url, timeout=limits.per_url_timeout) as resp:
            data = resp.read(limits.max_bytes + 1)
    except urllib.error.HTTPError as exc:
        return done("http_error", error=f"HTTP {exc.code}")
    except TimeoutError:
        return done("timeout", error=f"no response within {limits.per_url_timeout}s")
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, TimeoutError):
            return done("timeout", error=f"no response within {limits.per_url_timeout}s")
        return done("http_error", error=str(exc.reason))
    except (OSError, ValueError) as exc:
        return done("http_error", error=str(exc))
    if len(data) > limits.max_bytes:
        return done("http_error", error=f"body exceeds {limits.max_bytes} bytes")
    try:
        decode_image(data)
    except DecodeError as exc:
        return done("decode_error", error=str(exc))
    return done("ok", data=data)


def fetch_images(urls: Sequence[str], limits: FetchLimits | None = None) -> list[FetchOutcome]:
    """Fetch every url with at most ``max_parallel`` in flight; results follow input order."""
    limits = limits or FetchLimits()
    if not urls:
        return []
    with ThreadPoolExecutor(max_workers=min(limits.max_parallel, len(urls))) as pool:
        return list(pool.map(lambda u: _fetch_one(u, limits), urls))


@dataclass(frozen=True)
class SelectRequest:
    item_id: str
    sources: tuple[tuple[str, tuple[str, ...]], ...]
    category: str | None = None
    title: str | None = None
    curated: bool = False

    @property
    def urls(self) -> list[str]:
        return [u for _, urls in self.sources for u in urls]

    @classmethod
    def from_record(cls, rec) -> "SelectRequest":
        if not isinstance(rec, Mapping):
            raise RequestError("request body must be an object")
        unknown = set(rec) - {"item_id", "sources", "category", "title", "curated"}
        if unknown:
            raise RequestError(f"unknown request fields: {sorted(unknown)}")
        item_id = rec.get("item_id")
        if not isinstance(item_id, str) or not item_id:
            raise RequestError("item_id must be a non-empty string")
        sources = rec.get("sources")
        if not isinstance(sources, list):
            raise RequestError("sources must be a list")
        parsed = []
        for s in sources:
            if not isinstance(s, Mapping) or not isinstance(s.get("supplier"), str) or not isinstance(s.get("urls"), list):
                raise RequestError("each source needs a supplier string and a urls list")
            if not all(isinstance(u, str) and u for u in s["urls"]):
                raise RequestError(f"source {s['supplier']!r} has a non-string url")
            parsed.append((s["supplier"], tuple(s["urls"])))
        if not any(urls for _, urls in parsed):
            raise RequestError("request contains no urls")
        for key in ("category", "title"):
            if rec.get(key) is not None and not isinstance(rec[key], str):
                raise RequestError(f"{key} must be a string")
        return cls(item_id, tuple(parsed), rec.get("category"), rec.get("title"), bool(rec.get("curated", False)))

    def to_record(self) -> dict:
        rec = {"item_id": self.item_id, "sources": [{"supplier": s, "urls": list(u)} for s, u in self.sources]}
        for key in ("category", "title"):
            if getattr(self, key) is not None:
                rec[key] = getattr(self, key)
        if self.curated:
            rec["curated"] = True
        return rec


@dataclass
class ServiceConfig:
    comparator: ComparatorConfig = field(default_factory=ComparatorConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    fetch: FetchLimits = field(default_factory=FetchLimits)
    registry: dict = field(default_factory=dict)
    port: int = DEFAULT_PORT
    workers: int = 1

    @classmethod
    def load(cls, path: str | Path | None = None, env: Mapping | None = None) -> "ServiceConfig":
        """Read a YAML config; ``IMAGESELECT_CONFIG`` and ``IMAGESELECT_PORT`` override path and port.

        Keys: comparator, quality, fetch, profiles (file), models (category -> file),
        port, workers. Relative paths resolve against the config file.
        """
        env = os.environ if env is None else env
        path = env.get(ENV_CONFIG) or path
        data: dict = {}
        base = Path(".")
        if path:
            path = Path(path)
            data = yaml.safe_load(path.read_text()) or {}
            base = path.parent
        unknown = set(data) - {"comparator", "quality", "fetch", "profiles", "models", "port", "workers"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        registry = {}
        if data.get("profiles"):
            profiles = load_profiles(base / data["profiles"])
            models = data.get("models") or {}
            for cid, profile in profiles.items():
                if cid not in models:
                    raise ValueError(f"no model configured for category {cid!r}")
                model = TypeClassifierModel.load(base / models[cid])
                if model.category_id != cid:
                    raise ValueError(f"model {models[cid]} was trained for {model.category_id!r}, not {cid!r}")
                registry[cid] = CategoryEntry(profile, model)
        port = int(env.get(ENV_PORT) or data.get("port", DEFAULT_PORT))
        return cls(
            ComparatorConfig.from_dict(data.get("comparator")),
            QualityConfig.from_dict(data.get("quality")),
            FetchLimits(**(data.get("fetch") or {})),
            registry,
            port,
            int(data.get("workers", 1)),
        )

    def deps(self) -> PipelineDeps:
        return PipelineDeps(self.registry, self.comparator, self.quality, workers=self.workers)


def handle_select(req: SelectRequest, cfg: ServiceConfig, deps: PipelineDeps | None = None) -> tuple[SelectionResult, dict]:
    """Fetch, then run the pipeline (or bypass); returns the result and stage timings in ms."""
    t0 = time.perf_counter()
    deps = deps or cfg.deps()
    urls = req.urls
    outcomes = fetch_images(urls, cfg.fetch)
    fetch_ms = 1000 * (time.perf_counter() - t0)

    failed = []
    sources = []
    k = 0
    for supplier, sup_urls in req.sources:
        images = []
        for url in sup_urls:
            out = outcomes[k]
            k += 1
            if out.status == "ok":
                images.append(ImageInput(url, out.data))
            else:
                failed.append(RemovedImage(url, "quality_fail", f"{out.status}: {out.error}"))
        sources.append((supplier, images))

    stage: dict = {}
    item = Item(req.item_id, sources, req.category, req.title)
    result = run_pipeline(item, deps, stage, bypass=req.curated)
    if req.curated:
        result.stats["curated"] = True
    # fetch failures keep distinct ids from pipeline entries
    result.removed = failed + result.removed
    result.stats["fetch_failed"] = len(failed)
    result.stats["input"] = result.stats.get("input", 0) + len(failed)
    timings = {"fetch": fetch_ms, **{k: 1000 * v for k, v in stage.items()}}
    timings["total"] = 1000 * (time.perf_counter() - t0)
    return result, timings


class _Handler(BaseHTTPRequestHandler):
    server_version = f"imageselect/{__version__}"

    def log_message(self, fmt, *args):
        log.info("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: dict):
        payload = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _error(self, status: HTTPStatus, message: str):
        self._send(status, {"error": {"status": int(status), "type": status.phrase, "message": message}})

    def do_GET(self):
        if self.path.rstrip("/") == "/v1/health":
            cfg = self.server.config
            self._send(HTTPStatus.OK, {"status": "ok", "version": __version__, "categories": sorted(cfg.registry)})
        else:
            self._error(HTTPStatus.NOT_FOUND, f"no route for GET {self.path}")

    def do_POST(self):
        if self.path.rstrip("/") != "/v1/select":
            self._error(HTTPStatus.NOT_FOUND, f"no route for POST {self.path}")
            return
        try:
            length = int(self.headers.get("Content-Length") or 0)
            body = json.loads(self.rfile.read(length) or b"null")
            req = SelectRequest.from_record(body)
        except (ValueError, RequestError) as exc:
            self._error(HTTPStatus.BAD_REQUEST, str(exc))
            return
        try:
            result, timings = handle_select(req, self.server.config)
        except Exception as exc:  # internal failure: nothing was mutated, report and move on
            log.exception("select failed for %s", req.item_id)
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, f"{type(exc).__name__}: {exc}")
            return
        rec = result.to_record()
        rec["timings_ms"] = {k: round(v, 3) for k, v in timings.items()}
        self._send(HTTPStatus.OK, rec)


class SelectServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ServiceConfig, host: str = "127.0.0.1", port: int | None = None):
        self.config = config
        super().__init__((host, config.port if port is None else port), _Handler)


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int | None = None) -> None:
    server = SelectServer(config, host, port)
    log.info("listening on %s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
