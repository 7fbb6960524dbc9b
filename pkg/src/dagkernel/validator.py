"""Four validation passes over a pipeline: schema, contract, type, topology.

Findings are returned as :class:`Diagnostic` data; nothing here raises on a
bad pipeline. Codes are stable identifiers, messages are for humans.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from jsonschema import Draft202012Validator

from .dsl import (
    MalformedPipeline,
    MalformedReference,
    NotAMapping,
    PipelineDoc,
    RawDoc,
    YamlSyntax,
    build_doc,
    load_raw,
    resolve_reference,
)
from .registry import Registry, UnknownModule, base_tag
from .store import STORE_ALIASES
from .topology import DepGraph, classify_routes, find_cycle, implicit_edges

PASSES = ("schema", "contract", "type", "topology")

_REF = r"^[^.\s]+\..+$"
_ID = r"^[A-Za-z_][A-Za-z0-9_\-]*$"

PIPELINE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "nodes": {
            "type": ["array", "null"],
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "module"],
                "properties": {
                    "id": {"type": "string", "pattern": _ID},
                    "module": {"type": "string", "minLength": 1},
                    "depends_on": {"type": "array", "items": {"type": "string"}},
                    "params": {"type": ["object", "null"]},
                    "input_mapping": {
                        "type": ["object", "null"],
                        "additionalProperties": {"type": "string", "pattern": _REF},
                    },
                    "output_mapping": {
                        "type": ["object", "null"],
                        "additionalProperties": {"type": "string", "pattern": _REF},
                    },
                    "routes": {"type": ["object", "null"], "additionalProperties": {"type": "string"}},
                    "timeout": {"type": "number", "minimum": 0},
                    "retry": {"type": "integer", "minimum": 0},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["from", "to"],
                "properties": {"from": {"type": "string"}, "to": {"type": "string"}},
            },
        },
        "config": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "properties": {
                "max_rounds": {"type": "integer", "minimum": 1},
                "max_parallel": {"type": "integer", "minimum": 0},
            },
        },
    },
}

_SCHEMA_VALIDATOR = Draft202012Validator(PIPELINE_SCHEMA)


@dataclass(frozen=True)
class Diagnostic:
    pass_: str
    severity: str
    code: str
    message: str
    line: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "pass": self.pass_,
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "line": self.line,
        }


@dataclass
class ValidationReport:
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not any(d.severity == "error" for d in self.diagnostics)

    def errors(self, pass_: str | None = None) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error" and (pass_ is None or d.pass_ == pass_)]

    def codes(self, pass_: str | None = None) -> list[str]:
        return [d.code for d in self.diagnostics if pass_ is None or d.pass_ == pass_]

    def to_json(self) -> dict[str, Any]:
        return {"passed": self.passed, "diagnostics": [d.to_json() for d in self.diagnostics]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _ordered(diags: list[Diagnostic]) -> list[Diagnostic]:
    return sorted(diags, key=lambda d: (d.line or 0, d.code, d.message))


def _path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _line(source_map: dict[str, int], path: str) -> int | None:
    while path:
        if path in source_map:
            return source_map[path]
        cut = max(path.rfind("."), path.rfind("["))
        if cut <= 0:
            break
        path = path[:cut]
    return source_map.get(path, source_map.get("$"))


# -- pass 1 -----------------------------------------------------------------


def validate_schema(tree: Any, source_map: dict[str, int] | None = None) -> list[Diagnostic]:
    """Structural check of the raw YAML tree against :data:`PIPELINE_SCHEMA`."""
    smap = source_map or {}
    out: list[Diagnostic] = []

    def add(code: str, message: str, path: str) -> None:
        out.append(Diagnostic("schema", "error", code, message, _line(smap, path)))

    if not isinstance(tree, dict):
        add("schema.not_mapping", "pipeline document must be a mapping", "$")
        return out
    for err in _SCHEMA_VALIDATOR.iter_errors(tree):
        path = _path(err.absolute_path)
        where = path or "document"
        if err.validator == "required":
            for key in err.validator_value:
                if isinstance(err.instance, dict) and key not in err.instance:
                    add("schema.missing_field", f"{where}: missing required field {key!r}", path)
        elif err.validator == "additionalProperties":
            allowed = set(err.schema.get("properties", {}))
            for key in sorted(set(err.instance) - allowed):
                child = f"{path}.{key}" if path else key
                code = "schema.unknown_key" if not path else "schema.unknown_field"
                add(code, f"{where}: unknown key {key!r}", child)
        elif err.validator in ("minimum", "exclusiveMinimum"):
            add("schema.out_of_range", f"{where}: {err.message}", path)
        elif err.validator == "pattern" and ("input_mapping" in path or "output_mapping" in path):
            add("schema.malformed_reference", f"{where}: {err.instance!r} is not '<source>.<field>'", path)
        elif err.validator == "pattern":
            add("schema.bad_id", f"{where}: {err.instance!r} is not a valid node id", path)
        elif err.validator == "type":
            add("schema.bad_type", f"{where}: {err.message}", path)
        else:
            add("schema.invalid", f"{where}: {err.message}", path)
    nodes = tree.get("nodes")
    if isinstance(nodes, list):
        seen: dict[str, int] = {}
        for i, node in enumerate(nodes):
            if isinstance(node, dict) and isinstance(node.get("id"), str):
                if node["id"] in seen:
                    add("schema.duplicate_id", f"node id {node['id']!r} is declared twice", f"nodes[{i}].id")
                seen[node["id"]] = i
    return _ordered(out)


# -- pass 2 -----------------------------------------------------------------


def _declares(producer, name: str) -> bool:
    ref = f"{producer.id}.{name}"
    return name in producer.output_mapping or ref in producer.output_mapping.values()


def validate_contract(doc: PipelineDoc) -> tuple[list[Diagnostic], list[tuple[str, str]]]:
    """Check every wire has a producer; return diagnostics and inferred edges."""
    out: list[Diagnostic] = []
    nodes = {n.id: n for n in doc.nodes}

    def add(code: str, message: str, path: str, severity: str = "error") -> None:
        out.append(Diagnostic("contract", severity, code, message, doc.line(path)))

    for i, spec in enumerate(doc.nodes):
        base = f"nodes[{i}]"
        for dep in spec.depends_on:
            if dep not in nodes:
                add("contract.unknown_dependency", f"{spec.id}: depends_on names unknown node {dep!r}", f"{base}.depends_on")
        for label, target in spec.routes.items():
            if target not in nodes:
                add("contract.unknown_route_target", f"{spec.id}: route {label!r} targets unknown node {target!r}", f"{base}.routes.{label}")
        for local, ref in spec.output_mapping.items():
            path = f"{base}.output_mapping.{local}"
            try:
                source, _ = resolve_reference(ref)
            except MalformedReference as exc:
                add("contract.malformed_reference", str(exc), path)
                continue
            if source != spec.id and source not in STORE_ALIASES:
                add("contract.foreign_output", f"{spec.id}: output {local!r} writes into namespace {source!r}", path)
        for local, ref in spec.input_mapping.items():
            path = f"{base}.input_mapping.{local}"
            try:
                source, name = resolve_reference(ref)
            except MalformedReference as exc:
                add("contract.malformed_reference", str(exc), path)
                continue
            if source == spec.id:
                add("contract.self_reference", f"{spec.id}: input {local!r} reads its own output {ref!r}", path)
            elif source in nodes:
                producer = nodes[source]
                if not _declares(producer, name) and source not in spec.depends_on:
                    add(
                        "contract.unmatched_output",
                        f"{spec.id}: input {local!r} maps from {ref!r} but {source!r} declares no output "
                        f"{name!r} and {source!r} is not listed in depends_on",
                        path,
                    )
            elif source not in STORE_ALIASES:
                add("contract.dangling_reference", f"{spec.id}: input {local!r} maps from unknown source {source!r}", path)
    inferred = sorted({(s, d) for s, d, _ in implicit_edges(doc)})
    if doc.edges is not None:
        graph_edges = {(d, n.id) for n in doc.nodes for d in n.depends_on} | set(inferred)
        graph_edges |= {(n.id, t) for n in doc.nodes for t in n.routes.values()}
        for j, edge in enumerate(doc.edges):
            path = f"edges[{j}]"
            missing = [e for e in (edge["from"], edge["to"]) if e not in nodes]
            if missing:
                add("contract.unknown_edge_node", f"edges: {missing[0]!r} is not a node", path)
            elif (edge["from"], edge["to"]) not in graph_edges:
                add(
                    "contract.edge_not_in_graph",
                    f"declared edge {edge['from']} -> {edge['to']} is not implied by the node wiring",
                    path,
                    "warning",
                )
    return _ordered(out), inferred


# -- pass 3 -----------------------------------------------------------------


def _producer_tag(registry: Registry, producer, name: str) -> str | None:
    try:
        desc = registry.lookup(producer.module)
    except UnknownModule:
        return None
    ref = f"{producer.id}.{name}"
    for local, target in producer.output_mapping.items():
        if target == ref and local in desc.output_spec:
            return desc.output_spec[local]
    return desc.output_spec.get(name)


def validate_types(doc: PipelineDoc, registry: Registry) -> list[Diagnostic]:
    """Cross-check wiring against each module's declared input/output tags."""
    out: list[Diagnostic] = []
    nodes = {n.id: n for n in doc.nodes}

    def add(code: str, message: str, path: str) -> None:
        out.append(Diagnostic("type", "error", code, message, doc.line(path)))

    for i, spec in enumerate(doc.nodes):
        base = f"nodes[{i}]"
        try:
            desc = registry.lookup(spec.module)
        except UnknownModule:
            add("type.unknown_module", f"{spec.id}: module {spec.module!r} is not registered", f"{base}.module")
            continue
        for local, ref in spec.input_mapping.items():
            path = f"{base}.input_mapping.{local}"
            if local not in desc.input_spec:
                add("type.unknown_input", f"{spec.id}: module {desc.name!r} has no input {local!r}", path)
                continue
            try:
                source, name = resolve_reference(ref)
            except MalformedReference:
                continue
            if source not in nodes:
                continue  # store aliases carry untyped record lists
            producer = nodes[source]
            if producer.module not in registry:
                continue  # reported against the producer
            produced = _producer_tag(registry, producer, name)
            if produced is None:
                add(
                    "type.unknown_output",
                    f"{spec.id}: {ref!r} is not an output of module {producer.module!r}",
                    path,
                )
                continue
            expected = desc.input_spec[local]
            if base_tag(produced) != base_tag(expected):
                add(
                    "type.mismatch",
                    f"{spec.id}: input {local!r} expects {base_tag(expected)!r} but {ref!r} is {base_tag(produced)!r}",
                    path,
                )
        for key in desc.required_inputs:
            if key not in spec.input_mapping and key not in spec.params:
                add("type.unwired_input", f"{spec.id}: required input {key!r} is neither wired nor set in params", base)
    return _ordered(out)


# -- pass 4 -----------------------------------------------------------------


def validate_topology(doc: PipelineDoc, inferred: list[tuple[str, str]] | None = None) -> list[Diagnostic]:
    """Cycle check over dependency and forward route edges; unreachable and orphan nodes.

    Route edges whose target is already upstream of the router are loop
    edges and are left out of the cycle check.
    """
    out: list[Diagnostic] = []
    ids = doc.ids
    known = set(ids)

    def add(code: str, message: str, node_id: str | None, severity: str) -> None:
        line = doc.line(doc.node_path(node_id)) if node_id else doc.line("nodes", 1)
        out.append(Diagnostic("topology", severity, code, message, line))

    if not ids:
        add("topology.empty_pipeline", "pipeline has no nodes", None, "warning")
        return out
    graph = DepGraph(list(ids))
    for spec in doc.nodes:
        for dep in spec.depends_on:
            if dep in known:
                graph.edges.add((dep, spec.id))
    graph.edges |= {(s, d) for s, d in (inferred or []) if s in known and d in known}
    routes = classify_routes(doc, graph)
    pred = {n: set() for n in ids}
    for s, d in graph.edges:
        pred[d].add(s)
    for r in routes:
        if not r.loop:
            pred[r.dst].add(r.src)
    cycle = find_cycle(pred)
    if cycle:
        add("topology.cycle", "dependency cycle: " + " -> ".join(cycle), cycle[0], "error")
    succ = {n: set() for n in ids}
    for node, ps in pred.items():
        for p in ps:
            succ[p].add(node)
    for r in routes:
        if r.loop:
            succ[r.src].add(r.dst)
            pred[r.dst].add(r.src)
    if len(ids) > 1:
        for spec in doc.nodes:
            stores = any(ref.partition(".")[0] in STORE_ALIASES for ref in spec.output_mapping.values())
            if not pred[spec.id] and not succ[spec.id]:
                add(
                    "topology.unreachable",
                    f"{spec.id}: node is neither referenced by nor references any other node",
                    spec.id,
                    "warning",
                )
            elif not succ[spec.id] and not stores:
                add(
                    "topology.orphan",
                    f"{spec.id}: terminal node has no successors and persists nothing to a store",
                    spec.id,
                    "warning",
                )
    return _ordered(out)


# -- driver -----------------------------------------------------------------


def validate_all(source: str | RawDoc | PipelineDoc, registry: Registry) -> ValidationReport:
    """Run the four passes in order.

    Schema errors stop everything. Contract errors skip the type pass; the
    topology pass then only sees explicit edges.
    """
    report = ValidationReport()
    if isinstance(source, PipelineDoc):
        tree, smap, dups = source.to_dict(), source.source_map, []
    else:
        if isinstance(source, str):
            try:
                source = load_raw(source)
            except YamlSyntax as exc:
                report.diagnostics.append(Diagnostic("schema", "error", "schema.yaml_syntax", str(exc), exc.line))
                return report
            except NotAMapping as exc:
                report.diagnostics.append(Diagnostic("schema", "error", "schema.not_mapping", str(exc), 1))
                return report
        tree, smap, dups = source.tree, source.source_map, source.duplicate_keys
    schema = [
        Diagnostic("schema", "error", "schema.duplicate_key", f"key {path!r} appears twice", line)
        for path, line in dups
    ]
    schema += validate_schema(tree, smap)
    report.diagnostics += _ordered(schema)
    if report.errors("schema"):
        return report
    if isinstance(source, PipelineDoc):
        doc = source
    else:
        try:
            doc = build_doc(source)
        except MalformedPipeline as exc:
            report.diagnostics.append(Diagnostic("schema", "error", "schema.invalid", str(exc), exc.line))
            return report
    contract, inferred = validate_contract(doc)
    report.diagnostics += contract
    if any(d.severity == "error" for d in contract):
        report.diagnostics += validate_topology(doc, None)
        return report
    report.diagnostics += validate_types(doc, registry)
    report.diagnostics += validate_topology(doc, inferred)
    return report
