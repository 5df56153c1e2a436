"""HTTP suggest service.

GET /suggest?prefix=...&user=...&t=<ISO-8601>&k=<int>&strategy=<name> returns
{"prefix", "strategy", "latency_ms", "suggestions": [{"text", "score"}]};
these field names are a stable contract consumed by the demo UI.  GET /health
returns plain "ok".  Query parameters are validated by hand so every client
mistake surfaces as a 400 with a JSON error body; unexpected failures return
an opaque 500 and are logged server-side.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .decoding import DecoderConfig
from .engine import STRATEGIES, QacEngine, SuggestRequest, build_engine
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    trie: str | None = None
    model: str | None = None
    word_table: str | None = None
    user_table: str | None = None
    strategy: str = "routed"
    k: int = 10
    beam_width: int = 10
    diversity: float = 2.0
    max_len: int = 100
    cors_origins: tuple[str, ...] = ()
    ui_dir: str | None = None


_INT_KEYS = {"port", "k", "beam_width", "max_len"}
_FLOAT_KEYS = {"diversity"}


def load_service_config(path) -> ServiceConfig:
    """Parse a key=value file (one pair per line, # comments allowed)."""
    config = ServiceConfig()
    valid = set(config.__dataclass_fields__)
    with open(path, encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{number}: expected key=value, got {raw.rstrip()!r}")
            if key not in valid:
                raise ConfigError(f"{path}:{number}: unknown key {key!r}")
            try:
                if key in _INT_KEYS:
                    setattr(config, key, int(value))
                elif key in _FLOAT_KEYS:
                    setattr(config, key, float(value))
                elif key == "cors_origins":
                    setattr(
                        config,
                        key,
                        tuple(o.strip() for o in value.split(",") if o.strip()),
                    )
                else:
                    setattr(config, key, value or None)
            except ValueError as exc:
                raise ConfigError(f"{path}:{number}: bad value for {key}: {exc}") from None
    return config


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    engine: QacEngine,
    default_strategy: str = "routed",
    default_k: int = 10,
    cors_origins=(),
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="typeahead", docs_url=None, redoc_url=None)
    if cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(cors_origins),
            allow_methods=["GET"],
            allow_headers=["*"],
        )

    @app.get("/health")
    def health():
        return PlainTextResponse("ok")

    @app.get("/suggest")
    def suggest(request: Request):
        params = request.query_params
        prefix = params.get("prefix")
        if prefix is None or not prefix.strip():
            return _error(400, "missing required parameter: prefix")

        raw_k = params.get("k")
        k = default_k
        if raw_k is not None:
            try:
                k = int(raw_k)
            except ValueError:
                return _error(400, f"k must be an integer, got {raw_k!r}")
            if k < 1:
                return _error(400, f"k must be at least 1, got {k}")

        strategy = params.get("strategy") or default_strategy
        if strategy not in STRATEGIES:
            return _error(
                400, f"unknown strategy {strategy!r}, expected one of {list(STRATEGIES)}"
            )

        raw_t = params.get("t")
        if raw_t is None:
            timestamp = datetime.now()
        else:
            try:
                timestamp = datetime.fromisoformat(raw_t)
            except ValueError:
                return _error(400, f"t must be an ISO-8601 timestamp, got {raw_t!r}")

        try:
            response = engine.suggest(
                SuggestRequest(
                    prefix=prefix,
                    user_id=params.get("user") or None,
                    timestamp=timestamp,
                    k=k,
                    strategy=strategy,
                )
            )
        except ConfigError as exc:
            return _error(400, str(exc))
        except Exception:
            logger.exception("suggest failed for prefix %r", prefix)
            return _error(500, "internal error")

        return {
            "prefix": prefix,
            "strategy": response.strategy,
            "latency_ms": response.latency_ms,
            "suggestions": [
                {"text": s.text, "score": s.score} for s in response.suggestions
            ],
        }

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(config: ServiceConfig) -> None:
    """Build the engine from the configured artifacts and run uvicorn."""
    import uvicorn

    engine = build_engine(
        trie_path=config.trie,
        model_path=config.model,
        word_table_path=config.word_table,
        user_table_path=config.user_table,
        decoder_config=DecoderConfig(
            beam_width=config.beam_width,
            k=min(config.k, config.beam_width),
            max_len=config.max_len,
            diversity=config.diversity,
        ),
    )
    app = create_app(
        engine,
        default_strategy=config.strategy,
        default_k=config.k,
        cors_origins=config.cors_origins,
        ui_dir=config.ui_dir,
    )
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
