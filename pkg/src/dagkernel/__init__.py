"""Declarative DAG kernel: YAML pipelines, a four-pass validator, a routing
runner with inline and process-isolated backends, deduplicating stores and
a typed knowledge-graph index."""

from .dsl import NodeSpec, PipelineDoc, RunConfig, parse_pipeline, serialize
from .provider import MockProvider, make_provider
from .registry import ModuleDescriptor, ModuleResult, Registry
from .runner import execute
from .store import ExecutionContext, RecordStores
from .validator import ValidationReport, validate_all

__version__ = "0.1.0"

__all__ = [
    "ExecutionContext",
    "MockProvider",
    "ModuleDescriptor",
    "ModuleResult",
    "NodeSpec",
    "PipelineDoc",
    "RecordStores",
    "Registry",
    "RunConfig",
    "ValidationReport",
    "execute",
    "make_provider",
    "parse_pipeline",
    "serialize",
    "validate_all",
]
