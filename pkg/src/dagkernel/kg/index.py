"""Typed knowledge graph on an embedded SQLite store.

Nodes are papers, ideas, experiments and code. Edges come in four kinds:
structural (replicated store references), internal (relations judged
inside one ingestion batch), semantic (vector neighbours kept by a relation
judge) and walk (long-range co-visits from weighted random walks).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .._sqlite import Database
from ..store import normalize_key
from .embedding import HashingEmbedder, cosine
from .walks import adjacency, covisit_counts, hop_distances

NODE_KINDS = ("paper", "idea", "experiment", "code")
EDGE_KINDS = ("structural", "internal", "semantic", "walk")
BUCKETS = ("related", "contradicts", "unrelated")
PRESETS = ("similar", "opposite", "cross_domain", "counter_intuitive")
PHASES = (
    "extract",
    "dedup",
    "embed",
    "write_node",
    "internal_edge",
    "struct_edge",
    "semantic_edge",
    "random_walk",
)

Embedder = Callable[[Sequence[str]], Sequence[Sequence[float]]]
Extractor = Callable[[Sequence[Any]], Sequence[Any]]
RelationJudge = Callable[["KgNode", "KgNode"], str]


class KgError(Exception):
    pass


class PortFailure(KgError):
    def __init__(self, phase: str, cause: BaseException | str):
        super().__init__(f"{phase}: {cause}")
        self.phase = phase
        self.cause = cause


class DimensionMismatch(KgError):
    pass


class DanglingReference(KgError):
    pass


class UnknownNode(KgError, KeyError):
    def __str__(self) -> str:
        return f"unknown node: {self.args[0]!r}"


class EmptyIndex(KgError):
    pass


class UnknownPreset(KgError, ValueError):
    pass


def node_id(kind: str, key: str) -> str:
    digest = hashlib.blake2b(normalize_key(key).encode("utf-8"), digest_size=5).hexdigest()
    return f"{kind}:{digest}"


@dataclass(frozen=True)
class KgRef:
    """Reference from an item to an existing parent row: ``(kind, key)`` or a node id."""

    kind: str | None = None
    key: str | None = None
    node: str | None = None
    label: str | None = None

    def target(self) -> str:
        if self.node:
            return self.node
        if self.kind is None or self.key is None:
            raise DanglingReference("reference needs a node id or a (kind, key) pair")
        return node_id(self.kind, self.key)


@dataclass
class KgItem:
    kind: str
    text: str
    key: str | None = None
    refs: list[KgRef] = field(default_factory=list)
    provenance: tuple | None = None
    id: str | None = None

    @classmethod
    def coerce(cls, raw: Any) -> "KgItem":
        if isinstance(raw, KgItem):
            return raw
        if not isinstance(raw, Mapping):
            raise TypeError(f"cannot build a KG item from {type(raw).__name__}")
        refs = []
        for ref in raw.get("refs", ()):
            if isinstance(ref, KgRef):
                refs.append(ref)
            elif isinstance(ref, str):
                refs.append(KgRef(node=ref))
            else:
                refs.append(KgRef(ref.get("kind"), ref.get("key"), ref.get("node"), ref.get("label")))
        prov = raw.get("provenance")
        return cls(raw["kind"], raw["text"], raw.get("key"), refs, tuple(prov) if prov else None, raw.get("id"))

    @property
    def norm_key(self) -> str:
        return normalize_key(self.key if self.key is not None else self.text)

    def node_id(self) -> str:
        return self.id or node_id(self.kind, self.key if self.key is not None else self.text)


@dataclass(frozen=True)
class KgNode:
    id: str
    kind: str
    text: str
    embedding: tuple[float, ...]
    provenance: tuple | None = None
    key: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "type": "node",
            "id": self.id,
            "kind": self.kind,
            "text": self.text,
            "key": self.key,
            "embedding": list(self.embedding),
            "provenance": list(self.provenance) if self.provenance else None,
        }


@dataclass(frozen=True)
class KgEdge:
    src: str
    dst: str
    kind: str
    weight: float = 1.0
    label: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"type": "edge", **asdict(self)}


@dataclass
class PhaseReport:
    counts: dict[str, int] = field(default_factory=lambda: {p: 0 for p in PHASES})
    skipped: list[str] = field(default_factory=list)
    new_nodes: list[str] = field(default_factory=list)

    @property
    def ran(self) -> list[str]:
        return [p for p in PHASES if p not in self.skipped]

    def to_json(self) -> dict[str, Any]:
        return {"counts": dict(self.counts), "skipped": list(self.skipped), "new_nodes": list(self.new_nodes)}


@dataclass
class Hit:
    id: str
    kind: str
    text: str
    score: float


@dataclass
class Subgraph:
    nodes: list[str]
    edges: list[KgEdge]


@dataclass(frozen=True)
class WalkParams:
    walks_per_node: int = 10
    walk_length: int = 6
    restart: float = 0.15
    min_covisit: int = 2
    seed: int = 7


_SCHEMA = """
CREATE TABLE IF NOT EXISTS nodes (
    id         TEXT PRIMARY KEY,
    kind       TEXT NOT NULL,
    norm_key   TEXT NOT NULL,
    text       TEXT NOT NULL,
    embedding  TEXT NOT NULL,
    provenance TEXT,
    seq        INTEGER NOT NULL,
    UNIQUE (kind, norm_key)
);
CREATE TABLE IF NOT EXISTS edges (
    src    TEXT NOT NULL,
    dst    TEXT NOT NULL,
    kind   TEXT NOT NULL,
    label  TEXT NOT NULL DEFAULT '',
    weight REAL NOT NULL,
    UNIQUE (src, dst, kind, label)
);
"""


def passthrough_extractor(items: Sequence[Any]) -> list[KgItem]:
    return [KgItem.coerce(i) for i in items]


class KgIndex:
    """Knowledge graph stored in one SQLite database (``path=None`` for memory)."""

    def __init__(
        self,
        path: str | os.PathLike | None = None,
        dim: int = 64,
        *,
        semantic_k: int = 5,
        semantic_threshold: float = 0.5,
        walk: WalkParams = WalkParams(),
    ):
        self.db = Database(path, "kg", _SCHEMA)
        self.dim = dim
        self.semantic_k = semantic_k
        self.semantic_threshold = semantic_threshold
        self.walk = walk

    # -- storage ------------------------------------------------------------

    def add_node(self, node: KgNode) -> bool:
        if node.kind not in NODE_KINDS:
            raise KgError(f"node kind must be one of {NODE_KINDS}")
        if len(node.embedding) != self.dim:
            raise DimensionMismatch(f"{node.id}: embedding has {len(node.embedding)} dims, index uses {self.dim}")
        conn = self.db.conn()
        with conn:
            seq = conn.execute("SELECT COALESCE(MAX(seq), 0) + 1 FROM nodes").fetchone()[0]
            cur = conn.execute(
                "INSERT OR IGNORE INTO nodes (id, kind, norm_key, text, embedding, provenance, seq)"
                " VALUES (?, ?, ?, ?, ?, ?, ?)",
                (
                    node.id,
                    node.kind,
                    normalize_key(node.key or node.text),
                    node.text,
                    json.dumps(list(node.embedding)),
                    json.dumps(list(node.provenance)) if node.provenance else None,
                    seq,
                ),
            )
        return cur.rowcount == 1

    def add_edge(self, edge: KgEdge) -> bool:
        if edge.kind not in EDGE_KINDS:
            raise KgError(f"edge kind must be one of {EDGE_KINDS}")
        if edge.src == edge.dst:
            raise KgError("self-loops are not allowed")
        if not 0.0 <= edge.weight <= 1.0:
            raise KgError(f"edge weight {edge.weight} outside [0, 1]")
        conn = self.db.conn()
        with conn:
            cur = conn.execute(
                "INSERT OR IGNORE INTO edges (src, dst, kind, label, weight) VALUES (?, ?, ?, ?, ?)",
                (edge.src, edge.dst, edge.kind, edge.label or "", edge.weight),
            )
        return cur.rowcount == 1

    def _row_to_node(self, row) -> KgNode:
        nid, kind, key, text, emb, prov = row
        return KgNode(nid, kind, text, tuple(json.loads(emb)), tuple(json.loads(prov)) if prov else None, key)

    def nodes(self, kind: str | None = None) -> list[KgNode]:
        sql = "SELECT id, kind, norm_key, text, embedding, provenance FROM nodes"
        args: tuple = ()
        if kind is not None:
            sql += " WHERE kind = ?"
            args = (kind,)
        return [self._row_to_node(r) for r in self.db.conn().execute(sql + " ORDER BY id", args)]

    def node(self, nid: str) -> KgNode:
        row = self.db.conn().execute(
            "SELECT id, kind, norm_key, text, embedding, provenance FROM nodes WHERE id = ?", (nid,)
        ).fetchone()
        if row is None:
            raise UnknownNode(nid)
        return self._row_to_node(row)

    def has_node(self, nid: str) -> bool:
        return self.db.conn().execute("SELECT 1 FROM nodes WHERE id = ?", (nid,)).fetchone() is not None

    def find(self, kind: str, key: str) -> str | None:
        row = self.db.conn().execute(
            "SELECT id FROM nodes WHERE kind = ? AND norm_key = ?", (kind, normalize_key(key))
        ).fetchone()
        return row[0] if row else None

    def edges(self, kinds: Iterable[str] | None = None) -> list[KgEdge]:
        rows = self.db.conn().execute("SELECT src, dst, kind, label, weight FROM edges ORDER BY kind, src, dst, label")
        wanted = set(kinds) if kinds is not None else None
        return [
            KgEdge(s, d, k, w, lab or None)
            for s, d, k, lab, w in rows
            if wanted is None or k in wanted
        ]

    def counts(self) -> tuple[int, int]:
        conn = self.db.conn()
        return (
            conn.execute("SELECT COUNT(*) FROM nodes").fetchone()[0],
            conn.execute("SELECT COUNT(*) FROM edges").fetchone()[0],
        )

    # -- ingestion ----------------------------------------------------------

    def ingest_batch(
        self,
        items: Sequence[Any],
        extractor: Extractor | None = None,
        embedder: Embedder | None = None,
        relation: RelationJudge | None = None,
    ) -> PhaseReport:
        """Eight phases in order. Edge phases only run when the batch added nodes."""
        extractor = extractor or passthrough_extractor
        embedder = embedder or HashingEmbedder(self.dim)
        report = PhaseReport()

        try:
            extracted = [KgItem.coerce(i) for i in extractor(items)]
        except Exception as exc:
            raise PortFailure("extract", exc) from exc
        report.counts["extract"] = len(extracted)

        fresh: list[KgItem] = []
        seen: set[tuple[str, str]] = set()
        for item in extracted:
            if item.kind not in NODE_KINDS:
                raise KgError(f"item kind must be one of {NODE_KINDS}")
            ident = (item.kind, item.norm_key)
            if not item.norm_key or ident in seen or self.find(*ident) or self.has_node(item.node_id()):
                report.counts["dedup"] += 1
                continue
            seen.add(ident)
            fresh.append(item)

        try:
            vectors = [list(v) for v in embedder([i.text for i in fresh])] if fresh else []
        except Exception as exc:
            raise PortFailure("embed", exc) from exc
        if len(vectors) != len(fresh):
            raise PortFailure("embed", f"embedder returned {len(vectors)} vectors for {len(fresh)} texts")
        for vec in vectors:
            if len(vec) != self.dim:
                raise DimensionMismatch(f"embedder returned {len(vec)} dims, index uses {self.dim}")
        report.counts["embed"] = len(vectors)

        new_nodes = []
        for item, vec in zip(fresh, vectors):
            node = KgNode(item.node_id(), item.kind, item.text, tuple(vec), item.provenance, item.norm_key)
            if self.add_node(node):
                new_nodes.append(node)
        report.counts["write_node"] = len(new_nodes)
        report.new_nodes = [n.id for n in new_nodes]

        if not new_nodes:
            report.skipped = list(PHASES[4:])
            return report

        if relation is not None:
            for a_idx, a in enumerate(new_nodes):
                for b in new_nodes[a_idx + 1:]:
                    bucket = _judge(relation, a, b, "internal_edge")
                    if bucket != "unrelated":
                        report.counts["internal_edge"] += self.add_edge(KgEdge(a.id, b.id, "internal", 1.0, bucket))
        else:
            report.skipped.append("internal_edge")

        references = [(item.node_id(), ref) for item in fresh for ref in item.refs]
        for edge in self.struct_edges(references):
            report.counts["struct_edge"] += self.add_edge(edge)

        if relation is not None:
            for edge in self.semantic_edges([n.id for n in new_nodes], self.semantic_k, self.semantic_threshold, relation):
                report.counts["semantic_edge"] += self.add_edge(edge)
        else:
            report.skipped.append("semantic_edge")

        w = self.walk
        for edge in self.random_walk_edges(w.walks_per_node, w.walk_length, w.restart, w.min_covisit, w.seed):
            report.counts["random_walk"] += self.add_edge(edge)
        return report

    def struct_edges(self, references: Iterable[tuple[str, KgRef | str]]) -> list[KgEdge]:
        """One structural edge per ``(child id, parent reference)``, parent -> child, weight 1."""
        out = []
        for child, ref in references:
            ref = KgRef(node=ref) if isinstance(ref, str) else ref
            parent = ref.target()
            for nid in (parent, child):
                if not self.has_node(nid):
                    raise DanglingReference(f"reference {child} -> {parent}: {nid!r} is not indexed")
            out.append(KgEdge(parent, child, "structural", 1.0, ref.label))
        return out

    def semantic_edges(
        self,
        new_ids: Sequence[str],
        k: int,
        threshold: float,
        relation: RelationJudge,
    ) -> list[KgEdge]:
        """Top-``k`` cosine neighbours at or above ``threshold``, kept if the judge relates them."""
        everything = {n.id: n for n in self.nodes()}
        have = {(e.src, e.dst, e.label) for e in self.edges(["semantic"])}
        out: list[KgEdge] = []
        for nid in sorted(new_ids):
            node = everything[nid]
            scored = sorted(
                (
                    (cosine(node.embedding, other.embedding), other.id)
                    for other in everything.values()
                    if other.id != nid
                ),
                key=lambda p: (-p[0], p[1]),
            )
            candidates = [(s, oid) for s, oid in scored if s >= threshold][:k]
            for sim, oid in candidates:
                if any((a, b) in {(nid, oid), (oid, nid)} for a, b, _ in have):
                    continue
                bucket = _judge(relation, node, everything[oid], "semantic_edge")
                if bucket == "unrelated":
                    continue
                edge = KgEdge(nid, oid, "semantic", min(1.0, max(0.0, sim)), bucket)
                out.append(edge)
                have.add((nid, oid, bucket))
        return out

    def random_walk_edges(
        self,
        walks_per_node: int,
        walk_length: int,
        restart: float,
        min_covisit: int,
        seed: int = 0,
    ) -> list[KgEdge]:
        """Walk edges between pairs co-visited at least ``min_covisit`` times and at least 3 hops apart."""
        base = [(e.src, e.dst, e.weight) for e in self.edges() if e.kind != "walk"]
        adj = adjacency(base, (n.id for n in self.nodes()))
        if not base:
            return []
        counts = covisit_counts(adj, walks_per_node, walk_length, restart, seed)
        out = []
        dist_cache: dict[str, dict[str, int]] = {}
        for (a, b), count in sorted(counts.items()):
            if count < min_covisit:
                continue
            dist = dist_cache.setdefault(a, hop_distances(adj, a))
            if dist.get(b, math.inf) < 3:
                continue
            out.append(KgEdge(a, b, "walk", count / (2 * walks_per_node)))
        return out

    # -- retrieval ----------------------------------------------------------

    def _embed_query(self, query: str | Sequence[float], embedder: Embedder | None) -> list[float]:
        if not isinstance(query, str):
            return list(query)
        embedder = embedder or HashingEmbedder(self.dim)
        return list(embedder([query])[0])

    def vector_search(self, query: str | Sequence[float], k: int = 5, embedder: Embedder | None = None) -> list[Hit]:
        vec = self._embed_query(query, embedder)
        scored = sorted(((cosine(vec, n.embedding), n) for n in self.nodes()), key=lambda p: (-p[0], p[1].id))
        return [Hit(n.id, n.kind, n.text, s) for s, n in scored[:k]]

    def _neighbors(self, edges: Iterable[KgEdge]) -> dict[str, list[tuple[str, KgEdge]]]:
        out: dict[str, list[tuple[str, KgEdge]]] = {}
        for e in edges:
            out.setdefault(e.src, []).append((e.dst, e))
            if e.kind != "structural":
                out.setdefault(e.dst, []).append((e.src, e))
        return out

    def scenario_retrieve(
        self,
        query: str | Sequence[float],
        preset: str = "similar",
        k: int = 5,
        embedder: Embedder | None = None,
    ) -> list[Hit]:
        """Ranked nodes for one retrieval scenario.

        ``similar`` is plain cosine ranking. The other presets start from the
        node nearest to the query (the anchor): ``opposite`` follows
        semantic edges labelled ``contradicts``; ``cross_domain`` follows walk
        edges by weight; ``counter_intuitive`` keeps the lowest-similarity
        decile of the anchor's 2-hop structural/internal neighbourhood.
        """
        if preset not in PRESETS:
            raise UnknownPreset(preset)
        nodes = {n.id: n for n in self.nodes()}
        if not nodes:
            raise EmptyIndex("the knowledge graph has no nodes")
        vec = self._embed_query(query, embedder)
        ranked = sorted(nodes.values(), key=lambda n: (-cosine(vec, n.embedding), n.id))
        if preset == "similar":
            return [Hit(n.id, n.kind, n.text, cosine(vec, n.embedding)) for n in ranked[:k]]
        anchor = ranked[0]
        if preset == "opposite":
            found: dict[str, float] = {}
            for e in self.edges(["semantic"]):
                if e.label != "contradicts" or anchor.id not in (e.src, e.dst):
                    continue
                other = e.dst if e.src == anchor.id else e.src
                found[other] = max(found.get(other, 0.0), e.weight)
            order = sorted(found.items(), key=lambda p: (-p[1], p[0]))[:k]
            return [Hit(i, nodes[i].kind, nodes[i].text, w) for i, w in order]
        if preset == "cross_domain":
            found = {}
            for e in self.edges(["walk"]):
                if anchor.id in (e.src, e.dst):
                    other = e.dst if e.src == anchor.id else e.src
                    found[other] = max(found.get(other, 0.0), e.weight)
            order = sorted(found.items(), key=lambda p: (-p[1], p[0]))[:k]
            return [Hit(i, nodes[i].kind, nodes[i].text, w) for i, w in order]
        # counter_intuitive
        near = self.within_hops(anchor.id, ("structural", "internal"), 2, undirected=True)
        near.discard(anchor.id)
        if not near:
            return []
        sims = sorted(((cosine(anchor.embedding, nodes[i].embedding), i) for i in near), key=lambda p: (p[0], p[1]))
        decile = sims[: math.ceil(len(sims) / 10)]
        return [Hit(i, nodes[i].kind, nodes[i].text, s) for s, i in decile[:k]]

    def within_hops(self, start: str, kinds: Iterable[str], depth: int, *, undirected: bool = False) -> set[str]:
        edges = self.edges(kinds)
        adj: dict[str, set[str]] = {}
        for e in edges:
            adj.setdefault(e.src, set()).add(e.dst)
            if undirected or e.kind != "structural":
                adj.setdefault(e.dst, set()).add(e.src)
        seen = {start}
        layer = {start}
        for _ in range(depth):
            layer = {n for x in layer for n in adj.get(x, ())} - seen
            seen |= layer
        return seen

    def graph_traverse(self, start: str, kinds: Iterable[str], max_depth: int) -> Subgraph:
        """Breadth-first walk over ``kinds``; structural edges are followed parent -> child only."""
        if not self.has_node(start):
            raise UnknownNode(start)
        nbrs = self._neighbors(self.edges(kinds))
        depth = {start: 0}
        order = [start]
        used: list[KgEdge] = []
        frontier = [start]
        for level in range(max_depth):
            nxt = []
            for node in frontier:
                for other, edge in sorted(nbrs.get(node, ()), key=lambda p: (p[0], p[1].kind, p[1].label or "")):
                    if edge not in used:
                        used.append(edge)
                    if other not in depth:
                        depth[other] = level + 1
                        order.append(other)
                        nxt.append(other)
            frontier = nxt
        return Subgraph(order, used)

    # -- export -------------------------------------------------------------

    def export_jsonl(self) -> str:
        lines = [json.dumps(n.to_json(), sort_keys=True) for n in self.nodes()]
        lines += [json.dumps(e.to_json(), sort_keys=True) for e in self.edges()]
        return "".join(line + "\n" for line in lines)

    def import_jsonl(self, text: str) -> tuple[int, int]:
        added_nodes = added_edges = 0
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.pop("type") == "node":
                prov = rec.get("provenance")
                added_nodes += self.add_node(
                    KgNode(rec["id"], rec["kind"], rec["text"], tuple(rec["embedding"]), tuple(prov) if prov else None, rec.get("key", ""))
                )
            else:
                added_edges += self.add_edge(KgEdge(**rec))
        return added_nodes, added_edges

    def to_dot(self) -> str:
        styles = {"structural": "solid", "internal": "dotted", "semantic": "dashed", "walk": "bold"}
        lines = ["graph kg {", "  node [shape=ellipse];"]
        for n in self.nodes():
            lines.append(f'  "{n.id}" [label="{n.kind}\\n{n.id}"];')
        for e in self.edges():
            label = f', label="{e.label}"' if e.label else ""
            lines.append(f'  "{e.src}" -- "{e.dst}" [style={styles[e.kind]}{label}];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _judge(relation: RelationJudge, a: KgNode, b: KgNode, phase: str) -> str:
    try:
        bucket = relation(a, b)
    except Exception as exc:
        raise PortFailure(phase, exc) from exc
    bucket = str(bucket).strip().lower()
    if bucket not in BUCKETS:
        raise PortFailure(phase, f"relation judge answered {bucket!r}, expected one of {BUCKETS}")
    return bucket


class ProviderRelationJudge:
    """Relation port answered by a completion provider (the mock in offline runs)."""

    def __init__(self, provider):
        self.provider = provider

    def __call__(self, a: KgNode, b: KgNode) -> str:
        prompt = f"classify relation\nA: {a.text}\nB: {b.text}"
        return self.provider.complete(prompt, {"task": "relation"})
