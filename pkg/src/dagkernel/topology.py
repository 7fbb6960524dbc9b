"""Dependency inference, Kahn waves, loop-edge classification, fan-out extent, DOT."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

from .dsl import MalformedReference, PipelineDoc, resolve_reference
from .store import STORE_ALIASES


class CycleDetected(Exception):
    def __init__(self, cycle: list[str]):
        super().__init__(" -> ".join(cycle))
        self.cycle = cycle


@dataclass
class DepGraph:
    """Directed graph over node ids. ``edges`` holds ``(src, dst)`` pairs."""

    nodes: list[str] = field(default_factory=list)
    edges: set[tuple[str, str]] = field(default_factory=set)

    def preds(self, node: str) -> set[str]:
        return {s for s, d in self.edges if d == node}

    def succs(self, node: str) -> set[str]:
        return {d for s, d in self.edges if s == node}

    def pred_map(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {n: set() for n in self.nodes}
        for s, d in self.edges:
            out.setdefault(d, set()).add(s)
            out.setdefault(s, set())
        return out

    def descendants(self, node: str) -> set[str]:
        succ: dict[str, set[str]] = {}
        for s, d in self.edges:
            succ.setdefault(s, set()).add(d)
        seen, todo = set(), [node]
        while todo:
            for nxt in succ.get(todo.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return seen

    def ancestors(self, node: str) -> set[str]:
        pred = self.pred_map()
        seen, todo = set(), [node]
        while todo:
            for prev in pred.get(todo.pop(), ()):
                if prev not in seen:
                    seen.add(prev)
                    todo.append(prev)
        return seen


def implicit_edges(doc: PipelineDoc) -> list[tuple[str, str, str]]:
    """``(src, dst, local_field)`` for each input_mapping reference to another node.

    Store aliases, unknown sources and malformed references contribute nothing.
    """
    ids = set(doc.ids)
    out = []
    for spec in doc.nodes:
        for local, ref in spec.input_mapping.items():
            try:
                source, _ = resolve_reference(ref)
            except MalformedReference:
                continue
            if source in ids and source != spec.id:
                out.append((source, spec.id, local))
    return out


def infer_dependencies(doc: PipelineDoc) -> DepGraph:
    """depends_on edges plus edges implied by input_mapping references."""
    ids = set(doc.ids)
    graph = DepGraph(nodes=list(doc.ids))
    for spec in doc.nodes:
        for dep in spec.depends_on:
            if dep in ids:
                graph.edges.add((dep, spec.id))
    for src, dst, _ in implicit_edges(doc):
        graph.edges.add((src, dst))
    return graph


def find_cycle(pred: dict[str, set[str]]) -> list[str]:
    """Return one cycle (first node repeated at the end) in a graph given as ``node -> preds``."""
    succ: dict[str, list[str]] = {n: [] for n in pred}
    for node, ps in pred.items():
        for p in ps:
            succ.setdefault(p, []).append(node)
    for node in succ:
        succ[node].sort()
    color: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = 1
        stack.append(node)
        for nxt in succ.get(node, ()):
            if color.get(nxt) == 1:
                return stack[stack.index(nxt):] + [nxt]
            if color.get(nxt) is None:
                found = visit(nxt)
                if found:
                    return found
        color[node] = 2
        stack.pop()
        return None

    for node in sorted(succ):
        if color.get(node) is None:
            found = visit(node)
            if found:
                return found
    return []


def kahn_schedule(graph: DepGraph | dict[str, Iterable[str]]) -> list[list[str]]:
    """Waves of node ids: every node's predecessors sit in earlier waves.

    ``graph`` is a :class:`DepGraph` or a ``node -> predecessors`` mapping.
    Within a wave ids are sorted.
    """
    pred = graph.pred_map() if isinstance(graph, DepGraph) else {n: set(ps) for n, ps in graph.items()}
    sorter = TopologicalSorter(pred)
    try:
        sorter.prepare()
    except CycleError:
        raise CycleDetected(find_cycle(pred)) from None
    waves = []
    while sorter.is_active():
        wave = sorted(sorter.get_ready())
        waves.append(wave)
        sorter.done(*wave)
    return waves


@dataclass(frozen=True)
class RouteEdge:
    src: str
    label: str
    dst: str
    loop: bool


def classify_routes(doc: PipelineDoc, base: DepGraph | None = None) -> list[RouteEdge]:
    """Tag each route edge as forward or loop.

    A route edge is a loop edge when its target already reaches the routing
    node through dependency edges plus the route edges accepted as forward so
    far. Edges are visited in document order, then by label.
    """
    base = base or infer_dependencies(doc)
    ids = set(doc.ids)
    forward = DepGraph(list(base.nodes), set(base.edges))
    out = []
    for spec in doc.nodes:
        for label in sorted(spec.routes):
            target = spec.routes[label]
            if target not in ids:
                continue
            loop = target == spec.id or spec.id in forward.descendants(target)
            if not loop:
                forward.edges.add((spec.id, target))
            out.append(RouteEdge(spec.id, label, target, loop))
    return out


def execution_graph(doc: PipelineDoc, base: DepGraph | None = None) -> tuple[DepGraph, list[RouteEdge]]:
    """Dependency edges plus forward route edges; loop edges returned separately."""
    base = base or infer_dependencies(doc)
    routes = classify_routes(doc, base)
    graph = DepGraph(list(base.nodes), set(base.edges))
    graph.edges |= {(r.src, r.dst) for r in routes if not r.loop}
    return graph, routes


def fanout_extent(anchor: str, pred: dict[str, set[str]]) -> list[str]:
    """Nodes cloned when ``anchor`` fans out, in topological order.

    A direct successor of the anchor is cloned when all its other predecessors
    are upstream of the anchor. Deeper nodes are cloned when every predecessor
    is either cloned or upstream of the anchor and at least one is cloned; a
    node fed directly by the anchor or by a node outside the branch is a join
    and stays single.
    """
    succ: dict[str, set[str]] = {n: set() for n in pred}
    for node, ps in pred.items():
        for p in ps:
            succ.setdefault(p, set()).add(node)
    upstream: set[str] = set()
    todo = [anchor]
    while todo:
        for p in pred.get(todo.pop(), ()):
            if p not in upstream:
                upstream.add(p)
                todo.append(p)
    cloned: list[str] = []
    members: set[str] = set()
    for node in sorted(succ.get(anchor, ())):
        if pred[node] - {anchor} <= upstream:
            members.add(node)
            cloned.append(node)
    queue = deque(sorted(members))
    while queue:
        node = queue.popleft()
        for nxt in sorted(succ.get(node, ())):
            if nxt in members or nxt == anchor:
                continue
            ps = pred[nxt]
            if anchor in ps:
                continue
            if ps <= members | upstream and ps & members:
                members.add(nxt)
                cloned.append(nxt)
                queue.append(nxt)
    # order by topological position inside the branch
    order = {n: i for i, wave in enumerate(kahn_schedule({n: pred[n] & members for n in members})) for n in wave}
    return sorted(cloned, key=lambda n: (order[n], n))


def to_dot(doc: PipelineDoc, name: str = "pipeline") -> str:
    """Graphviz digraph: solid dependency/forward-route edges, dashed loop edges."""
    base = infer_dependencies(doc)
    routes = classify_routes(doc, base)
    explicit = {(d, n.id) for n in doc.nodes for d in n.depends_on}
    lines = [f'digraph "{name}" {{', "  rankdir=LR;", "  node [shape=box, style=rounded];"]
    for spec in doc.nodes:
        lines.append(f'  "{spec.id}" [label="{spec.id}\\n({spec.module})"];')
    for src, dst in sorted(base.edges):
        attrs = "" if (src, dst) in explicit else ' [color="gray40"]'
        lines.append(f'  "{src}" -> "{dst}"{attrs};')
    for r in routes:
        style = "dashed" if r.loop else "solid"
        lines.append(f'  "{r.src}" -> "{r.dst}" [style={style}, label="{r.label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def is_store_alias(name: str) -> bool:
    return name in STORE_ALIASES
