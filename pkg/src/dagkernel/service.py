"""HTTP front end over the kernel. The CLI talks to this app, in process or remote."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse

from . import __version__
from .dsl import PipelineError, parse_pipeline
from .kg.index import KgIndex
from .library import build_default_registry
from .provider import PROVIDER_ENV, ProviderError, make_provider
from .runner import PipelineInvalid, RunError, execute
from .schemas import DotOut, HealthOut, ModuleOut, PipelineIn, ReportOut, RunIn, RunOut
from .store import STORES, RecordStores, UnknownStore
from .topology import to_dot
from .validator import validate_all

HOME_ENV = "DAGKERNEL_HOME"


@dataclass
class Settings:
    home: Optional[Path] = field(default_factory=lambda: Path(os.environ.get(HOME_ENV, ".dagkernel")))
    provider: Optional[str] = None
    rules: Optional[str] = None

    def __post_init__(self):
        if self.home is not None:
            self.home = Path(self.home)

    def provider_name(self) -> str:
        return self.provider or os.environ.get(PROVIDER_ENV) or "mock"


class Kernel:
    """Shared stores and knowledge graph for one service instance."""

    def __init__(self, settings: Settings):
        self.settings = settings
        home = settings.home
        self.stores = RecordStores(home / "stores" if home else None)
        self.kg = KgIndex(home / "kg.db" if home else None)
        # runs mutate the stores and the graph; one at a time
        self.lock = threading.Lock()

    def provider(self, name: Optional[str] = None):
        config = {"rules": self.settings.rules} if self.settings.rules else {}
        return make_provider(name or self.settings.provider_name(), config)

    def registry(self, provider_name: Optional[str] = None):
        return build_default_registry(self.provider(provider_name), self.stores, self.kg)


def create_app(settings: Settings | None = None) -> FastAPI:
    kernel = Kernel(settings or Settings())
    app = FastAPI(title="dagkernel", version=__version__)
    app.state.kernel = kernel

    @app.get("/health", response_model=HealthOut)
    def health():
        home = kernel.settings.home
        return HealthOut(version=__version__, provider=kernel.settings.provider_name(), home=str(home) if home else None)

    @app.get("/modules", response_model=list[ModuleOut])
    def modules():
        reg = kernel.registry()
        return [reg.lookup(name).to_json() for name in reg.names()]

    @app.get("/schemas", response_class=PlainTextResponse)
    def schemas():
        return kernel.registry().emit_schemas()

    @app.post("/validate", response_model=ReportOut)
    def validate(body: PipelineIn):
        return validate_all(body.pipeline, kernel.registry()).to_json()

    @app.post("/dot", response_model=DotOut)
    def dot(body: PipelineIn):
        try:
            doc = parse_pipeline(body.pipeline)
        except PipelineError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return DotOut(dot=to_dot(doc))

    @app.post("/run", response_model=RunOut)
    def run(body: RunIn):
        try:
            registry = kernel.registry(body.provider)
        except ProviderError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        report = validate_all(body.pipeline, registry)
        if not report.passed:
            return RunOut(status="invalid", exit_code=1, error="pipeline failed validation", report=report.to_json())
        if body.backend == "isolated" and kernel.settings.home is None:
            raise HTTPException(status_code=400, detail="the isolated backend needs an on-disk data directory")
        doc = parse_pipeline(body.pipeline)
        with kernel.lock:
            try:
                state = execute(
                    doc,
                    registry,
                    kernel.stores,
                    body.backend,
                    max_parallel=body.max_parallel,
                    retry_delay=body.retry_delay,
                )
            except PipelineInvalid as exc:
                return RunOut(status="invalid", exit_code=1, error=str(exc), report=exc.report.to_json())
            except RunError as exc:
                partial = getattr(exc, "state", None)
                return RunOut(
                    status="failed",
                    exit_code=2,
                    error=str(exc),
                    error_type=type(exc).__name__,
                    report=report.to_json(),
                    trace=[r.to_json() for r in partial.trace] if partial else [],
                    context=json.loads(partial.context.to_json()) if partial else {},
                    loop_traversals=dict(partial.loop_traversals) if partial else {},
                )
        return RunOut(
            status="ok",
            exit_code=0,
            report=report.to_json(),
            trace=[r.to_json() for r in state.trace],
            context=json.loads(state.context.to_json()),
            loop_traversals=dict(state.loop_traversals),
            peak_parallel=state.peak_parallel,
        )

    @app.get("/stores")
    def store_counts():
        return kernel.stores.counts()

    @app.get("/stores/{store}/export", response_class=PlainTextResponse)
    def export_store(store: str):
        try:
            return kernel.stores.export_json(store)
        except UnknownStore as exc:
            raise HTTPException(status_code=404, detail=f"unknown store {store!r}; expected one of {list(STORES)}") from exc

    @app.get("/kg/export", response_class=PlainTextResponse)
    def export_kg(format: str = "jsonl"):
        if format == "dot":
            return kernel.kg.to_dot()
        if format != "jsonl":
            raise HTTPException(status_code=400, detail="format must be jsonl or dot")
        return kernel.kg.export_jsonl()

    return app
