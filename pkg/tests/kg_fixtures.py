"""Shared knowledge-graph fixtures: a hand-built 10-node graph and a 20-item batch."""

from dagkernel.kg import KgEdge, KgIndex, KgNode, ProviderRelationJudge
from dagkernel.provider import make_provider

from oracles import reachable_within

VECTORS = {
    "n0": [1, 0, 0, 0],
    "n1": [0.9, 0.1, 0, 0],
    "n2": [0.8, 0, 0.2, 0],
    "n3": [0, 1, 0, 0],
    "n4": [0.5, 0.5, 0, 0],
    "n5": [0, 0, 1, 0],
    "n6": [0.7, 0.7, 0.1, 0],
    "n7": [0, 0, 0, 1],
    "n8": [-1, 0, 0, 0],
    "n9": [0.6, 0, 0, 0.8],
}
KINDS = {
    "n0": "paper", "n1": "idea", "n2": "idea", "n3": "idea", "n4": "experiment",
    "n5": "code", "n6": "paper", "n7": "idea", "n8": "experiment", "n9": "idea",
}
EDGES = [
    ("n0", "n1", "structural", 1.0, None),
    ("n0", "n5", "structural", 1.0, "derives"),
    ("n1", "n4", "structural", 1.0, None),
    ("n5", "n8", "structural", 1.0, None),
    ("n6", "n7", "structural", 1.0, None),
    ("n1", "n2", "internal", 1.0, "related"),
    ("n3", "n6", "internal", 1.0, "related"),
    ("n0", "n3", "semantic", 0.6, "contradicts"),
    ("n0", "n9", "semantic", 0.4, "contradicts"),
    ("n0", "n2", "semantic", 0.9, "related"),
    ("n7", "n8", "semantic", 0.5, "contradicts"),
    ("n0", "n7", "walk", 0.3, None),
    ("n0", "n6", "walk", 0.5, None),
    ("n4", "n9", "walk", 0.2, None),
]
QUERY = [1, 0, 0, 0]

# hand-derived from the vectors and edges above
EXPECTED = {
    "similar": ["n0", "n1", "n2"],
    "opposite": ["n3", "n9"],
    "cross_domain": ["n6", "n7"],
    "counter_intuitive": ["n8"],
}


def fixture_index(edges=EDGES, vectors=VECTORS):
    kg = KgIndex(dim=4)
    for nid, vec in vectors.items():
        kg.add_node(KgNode(nid, KINDS[nid], f"text of {nid}", tuple(vec), key=nid))
    for s, d, kind, w, label in edges:
        kg.add_edge(KgEdge(s, d, kind, w, label))
    return kg


def justified(preset, hit_id, kg):
    """Each preset's membership predicate, checked independently of ranking."""
    anchor = "n0"
    edges = kg.edges()
    if preset == "similar":
        return True
    if preset == "opposite":
        return any(e.kind == "semantic" and e.label == "contradicts" and {e.src, e.dst} == {anchor, hit_id} for e in edges)
    if preset == "cross_domain":
        return any(e.kind == "walk" and {e.src, e.dst} == {anchor, hit_id} for e in edges)
    pairs = [(e.src, e.dst) for e in edges if e.kind in ("structural", "internal")]
    return hit_id in reachable_within(anchor, pairs, 2)


TOPICS = ["lattice sampler", "benchmark leakage", "protein folding", "graph coarsening", "agent planning"]


def batch20():
    items = []
    for t in TOPICS:
        items.append({"kind": "paper", "text": f"Study of {t} behaviour", "key": t})
    for t in TOPICS:
        for j in range(2):
            items.append({
                "kind": "idea",
                "text": f"Idea {j} about {t} improvements",
                "refs": [{"kind": "paper", "key": t}],
                "provenance": [t, 1, None],
            })
    for t in TOPICS:
        items.append({
            "kind": "experiment",
            "text": f"Ablation of {t} that fails under shift",
            "refs": [{"kind": "idea", "key": f"Idea 0 about {t} improvements"}],
        })
    assert len(items) == 20
    return items


def judge():
    return ProviderRelationJudge(make_provider("mock"))
