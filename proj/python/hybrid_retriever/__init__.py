"""Hybrid sparse-dense retrieval: ANN and inverted indices, re-ranking, fusion."""

from ._core import (
    PROTOCOL_VERSION,
    BruteForceIndex,
    ConfigError,
    ForwardIndex,
    FormatError,
    HnswIndex,
    InvertedIndex,
    Model1Table,
    ParseError,
    Pipeline,
    QueryServer,
    coordinate_ascent,
    evaluate,
    ingest,
    mrr,
    ndcg_at_k,
    server_banner,
    space_score,
    tokenize,
    train_model1,
)

__all__ = [
    "PROTOCOL_VERSION",
    "BruteForceIndex",
    "ConfigError",
    "ForwardIndex",
    "FormatError",
    "HnswIndex",
    "InvertedIndex",
    "Model1Table",
    "ParseError",
    "Pipeline",
    "QueryServer",
    "coordinate_ascent",
    "evaluate",
    "ingest",
    "mrr",
    "ndcg_at_k",
    "server_banner",
    "space_score",
    "tokenize",
    "train_model1",
]
