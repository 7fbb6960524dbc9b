"""YAML pipeline documents: parsing with source lines, the typed model, serialization."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import yaml
from yaml.constructor import SafeConstructor
from yaml.nodes import MappingNode, ScalarNode, SequenceNode

TOP_LEVEL_KEYS = ("nodes", "edges", "config")
NODE_FIELDS = (
    "id",
    "module",
    "depends_on",
    "params",
    "input_mapping",
    "output_mapping",
    "routes",
    "timeout",
    "retry",
)
DEFAULT_TIMEOUT = 300
DEFAULT_MAX_ROUNDS = 100


class PipelineError(Exception):
    line: int | None = None


class YamlSyntax(PipelineError):
    def __init__(self, message: str, line: int | None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class NotAMapping(PipelineError):
    pass


class UnknownTopLevelKey(PipelineError):
    def __init__(self, name: str, line: int | None):
        super().__init__(f"line {line}: unknown top-level key {name!r}")
        self.name = name
        self.line = line


class MalformedPipeline(PipelineError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class MalformedReference(PipelineError, ValueError):
    pass


def resolve_reference(ref: str) -> tuple[str, str]:
    """``"extract.seeds"`` -> ``("extract", "seeds")``. Splits on the first dot only."""
    if not isinstance(ref, str):
        raise MalformedReference(f"reference must be a string, got {type(ref).__name__}")
    source, sep, name = ref.partition(".")
    if not sep or not source or not name:
        raise MalformedReference(f"reference {ref!r} is not '<source>.<field>'")
    return source, name


@dataclass(frozen=True)
class RunConfig:
    max_rounds: int = DEFAULT_MAX_ROUNDS
    max_parallel: int = 0


@dataclass
class NodeSpec:
    id: str
    module: str
    depends_on: list[str] = field(default_factory=list)
    params: dict[str, Any] = field(default_factory=dict)
    input_mapping: dict[str, str] = field(default_factory=dict)
    output_mapping: dict[str, str] = field(default_factory=dict)
    routes: dict[str, str] = field(default_factory=dict)
    timeout: float = DEFAULT_TIMEOUT
    retry: int = 0

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "module": self.module}
        if self.depends_on:
            out["depends_on"] = list(self.depends_on)
        for name in ("params", "input_mapping", "output_mapping", "routes"):
            value = getattr(self, name)
            if value:
                out[name] = dict(value)
        if self.timeout != DEFAULT_TIMEOUT:
            out["timeout"] = self.timeout
        if self.retry:
            out["retry"] = self.retry
        return out


@dataclass
class PipelineDoc:
    nodes: list[NodeSpec] = field(default_factory=list)
    edges: list[dict[str, str]] | None = None
    config: RunConfig = field(default_factory=RunConfig)
    source_map: dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def node(self, node_id: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.id == node_id:
                return spec
        raise KeyError(node_id)

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def line(self, path: str, default: int | None = None) -> int | None:
        """Line of ``path``, falling back to the closest recorded ancestor."""
        while path:
            if path in self.source_map:
                return self.source_map[path]
            cut = max(path.rfind("."), path.rfind("["))
            if cut <= 0:
                break
            path = path[:cut]
        return self.source_map.get(path, default)

    def node_path(self, node_id: str) -> str:
        for i, spec in enumerate(self.nodes):
            if spec.id == node_id:
                return f"nodes[{i}]"
        return "nodes"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"nodes": [n.to_dict() for n in self.nodes]}
        if self.edges is not None:
            out["edges"] = [dict(e) for e in self.edges]
        out["config"] = {"max_rounds": self.config.max_rounds, "max_parallel": self.config.max_parallel}
        return out


@dataclass
class RawDoc:
    """Plain YAML tree plus ``path -> line`` (1-based). Mapping keys are always strings."""

    tree: Any
    source_map: dict[str, int]
    duplicate_keys: list[tuple[str, int]] = field(default_factory=list)


class _ScalarBuilder(SafeConstructor):
    pass


def _walk(node, path: str, source_map: dict[str, int], dups: list, builder: _ScalarBuilder) -> Any:
    source_map[path or "$"] = node.start_mark.line + 1
    if isinstance(node, MappingNode):
        builder.flatten_mapping(node)
        out: dict[str, Any] = {}
        for key_node, value_node in node.value:
            key = key_node.value if isinstance(key_node, ScalarNode) else str(
                builder.construct_object(key_node, deep=True)
            )
            child = f"{path}.{key}" if path else key
            if key in out:
                dups.append((child, key_node.start_mark.line + 1))
            out[key] = _walk(value_node, child, source_map, dups, builder)
            source_map[child] = key_node.start_mark.line + 1
        return out
    if isinstance(node, SequenceNode):
        return [_walk(item, f"{path}[{i}]", source_map, dups, builder) for i, item in enumerate(node.value)]
    return builder.construct_object(node, deep=True)


def load_raw(text: str) -> RawDoc:
    """Parse YAML text into a :class:`RawDoc`. Raises :class:`YamlSyntax` or :class:`NotAMapping`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise YamlSyntax(exc.problem or str(exc), mark.line + 1 if mark else None) from None
    except yaml.YAMLError as exc:
        raise YamlSyntax(str(exc), None) from None
    source_map: dict[str, int] = {}
    dups: list[tuple[str, int]] = []
    if root is None:
        return RawDoc({}, {"$": 1}, dups)
    tree = _walk(root, "", source_map, dups, _ScalarBuilder())
    if not isinstance(tree, dict):
        raise NotAMapping("pipeline document must be a mapping with nodes/edges/config")
    return RawDoc(tree, source_map, dups)


def _expect(cond: bool, message: str, raw: RawDoc, path: str) -> None:
    if not cond:
        raise MalformedPipeline(message, raw.source_map.get(path))


def _string_map(value: Any, raw: RawDoc, path: str) -> dict[str, str]:
    if value is None:
        return {}
    _expect(isinstance(value, dict), f"{path} must be a mapping", raw, path)
    for key, item in value.items():
        _expect(isinstance(item, str), f"{path}.{key} must be a string", raw, f"{path}.{key}")
    return dict(value)


def build_doc(raw: RawDoc) -> PipelineDoc:
    """Turn a raw tree into a :class:`PipelineDoc`, applying defaults."""
    tree = raw.tree
    for key in tree:
        if key not in TOP_LEVEL_KEYS:
            raise UnknownTopLevelKey(key, raw.source_map.get(key))
    nodes_raw = tree.get("nodes") or []
    _expect(isinstance(nodes_raw, list), "nodes must be a list", raw, "nodes")
    nodes: list[NodeSpec] = []
    for i, item in enumerate(nodes_raw):
        path = f"nodes[{i}]"
        _expect(isinstance(item, dict), f"{path} must be a mapping", raw, path)
        for key in item:
            _expect(key in NODE_FIELDS, f"unknown node field {key!r}", raw, f"{path}.{key}")
        for key in ("id", "module"):
            _expect(isinstance(item.get(key), str) and item[key] != "", f"{path}.{key} is required", raw, path)
        depends = item.get("depends_on") or []
        _expect(
            isinstance(depends, list) and all(isinstance(d, str) for d in depends),
            "depends_on must be a list of node ids",
            raw,
            f"{path}.depends_on",
        )
        params = item.get("params") or {}
        _expect(isinstance(params, dict), "params must be a mapping", raw, f"{path}.params")
        timeout = item.get("timeout", DEFAULT_TIMEOUT)
        _expect(
            isinstance(timeout, (int, float)) and not isinstance(timeout, bool) and timeout >= 0,
            "timeout must be a non-negative number",
            raw,
            f"{path}.timeout",
        )
        retry = item.get("retry", 0)
        _expect(
            isinstance(retry, int) and not isinstance(retry, bool) and retry >= 0,
            "retry must be a non-negative integer",
            raw,
            f"{path}.retry",
        )
        nodes.append(
            NodeSpec(
                id=item["id"],
                module=item["module"],
                depends_on=list(depends),
                params=dict(params),
                input_mapping=_string_map(item.get("input_mapping"), raw, f"{path}.input_mapping"),
                output_mapping=_string_map(item.get("output_mapping"), raw, f"{path}.output_mapping"),
                routes=_string_map(item.get("routes"), raw, f"{path}.routes"),
                timeout=timeout,
                retry=retry,
            )
        )
    edges = tree.get("edges")
    if edges is not None:
        _expect(isinstance(edges, list), "edges must be a list", raw, "edges")
        for j, edge in enumerate(edges):
            _expect(
                isinstance(edge, dict) and isinstance(edge.get("from"), str) and isinstance(edge.get("to"), str),
                "edges entries must be {from, to}",
                raw,
                f"edges[{j}]",
            )
        edges = [{"from": e["from"], "to": e["to"]} for e in edges]
    config_raw = tree.get("config") or {}
    _expect(isinstance(config_raw, dict), "config must be a mapping", raw, "config")
    max_rounds = config_raw.get("max_rounds", DEFAULT_MAX_ROUNDS)
    max_parallel = config_raw.get("max_parallel", 0)
    _expect(
        isinstance(max_rounds, int) and not isinstance(max_rounds, bool) and max_rounds >= 1,
        "config.max_rounds must be a positive integer",
        raw,
        "config.max_rounds",
    )
    _expect(
        isinstance(max_parallel, int) and not isinstance(max_parallel, bool) and max_parallel >= 0,
        "config.max_parallel must be a non-negative integer",
        raw,
        "config.max_parallel",
    )
    return PipelineDoc(nodes, edges, RunConfig(max_rounds, max_parallel), dict(raw.source_map))


def parse_pipeline(text: str) -> PipelineDoc:
    return build_doc(load_raw(text))


def serialize(doc: PipelineDoc) -> str:
    return yaml.safe_dump(doc.to_dict(), sort_keys=False, allow_unicode=True, default_flow_style=False)


def rename_node(spec: NodeSpec, new_id: str, mapping: dict[str, str], extra: dict[str, str] | None = None) -> NodeSpec:
    """Copy ``spec`` under ``new_id`` with node references rewritten through ``mapping``.

    ``extra`` maps whole reference strings to replacements and wins over ``mapping``.
    """
    extra = extra or {}

    def ref(value: str) -> str:
        if value in extra:
            return extra[value]
        source, sep, name = value.partition(".")
        if sep and source in mapping:
            return f"{mapping[source]}.{name}"
        return value

    return replace(
        spec,
        id=new_id,
        depends_on=[mapping.get(d, d) for d in spec.depends_on],
        input_mapping={k: ref(v) for k, v in spec.input_mapping.items()},
        output_mapping={k: ref(v) for k, v in spec.output_mapping.items()},
        routes={k: mapping.get(v, v) for k, v in spec.routes.items()},
    )
