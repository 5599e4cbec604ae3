"""Generative-contrastive self-supervised learning on heterogeneous graphs."""

from .hetero_graph import (
    HeteroGraph,
    MetaPath,
    MetaPathView,
    Relation,
    build_view,
    compose_metapath_adjacency,
    load_hin,
    metapath_pair_count,
)

__version__ = "0.1.0"

__all__ = [
    "HeteroGraph",
    "MetaPath",
    "MetaPathView",
    "Relation",
    "build_view",
    "compose_metapath_adjacency",
    "load_hin",
    "metapath_pair_count",
    "__version__",
]
