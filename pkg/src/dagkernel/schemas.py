"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class PipelineIn(BaseModel):
    pipeline: str = Field(description="pipeline YAML text")


class DiagnosticOut(BaseModel):
    pass_: str = Field(alias="pass")
    severity: Literal["error", "warning"]
    code: str
    message: str
    line: Optional[int] = None

    model_config = {"populate_by_name": True}


class ReportOut(BaseModel):
    passed: bool
    diagnostics: list[DiagnosticOut] = []


class RunIn(PipelineIn):
    backend: Literal["inline", "isolated"] = "inline"
    max_parallel: Optional[int] = Field(default=None, ge=0)
    provider: Optional[str] = None
    retry_delay: float = Field(default=1.0, ge=0)


class TraceOut(BaseModel):
    node: str
    attempt: int
    outcome: str
    duration_ms: float
    route_taken: Optional[str] = None
    worker: Optional[int] = None
    score: Optional[float] = None
    error: Optional[str] = None


class RunOut(BaseModel):
    status: Literal["ok", "invalid", "failed"]
    exit_code: int
    error: Optional[str] = None
    error_type: Optional[str] = None
    report: ReportOut
    trace: list[TraceOut] = []
    context: dict[str, Any] = {}
    loop_traversals: dict[str, int] = {}
    peak_parallel: int = 0


class DotOut(BaseModel):
    dot: str


class ModuleOut(BaseModel):
    name: str
    kind: str
    input_spec: dict[str, str]
    output_spec: dict[str, str]
    doc: str = ""


class HealthOut(BaseModel):
    status: str = "ok"
    version: str
    provider: str
    home: Optional[str] = None
