from .embedding import HashingEmbedder, cosine
from .index import (
    BUCKETS,
    EDGE_KINDS,
    NODE_KINDS,
    PHASES,
    PRESETS,
    DanglingReference,
    DimensionMismatch,
    EmptyIndex,
    Hit,
    KgEdge,
    KgError,
    KgIndex,
    KgItem,
    KgNode,
    KgRef,
    PhaseReport,
    PortFailure,
    ProviderRelationJudge,
    Subgraph,
    UnknownNode,
    UnknownPreset,
    WalkParams,
    node_id,
)

__all__ = [
    "BUCKETS",
    "EDGE_KINDS",
    "NODE_KINDS",
    "PHASES",
    "PRESETS",
    "DanglingReference",
    "DimensionMismatch",
    "EmptyIndex",
    "HashingEmbedder",
    "Hit",
    "KgEdge",
    "KgError",
    "KgIndex",
    "KgItem",
    "KgNode",
    "KgRef",
    "PhaseReport",
    "PortFailure",
    "ProviderRelationJudge",
    "Subgraph",
    "UnknownNode",
    "UnknownPreset",
    "WalkParams",
    "cosine",
    "node_id",
]
