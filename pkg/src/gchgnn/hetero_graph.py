"""Typed graph storage, meta-path composition, and meta-path views.

A heterogeneous graph holds nodes of several types and directed typed
relations between them, each relation backed by one sparse boolean
adjacency matrix (CSR, src-type rows by dst-type columns). Node ids are
global and dense (0..V-1); within each type, nodes get contiguous local
ids 0..n_type-1 assigned in ascending global-id order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    DuplicateEdgeWarning,
    GCHGNNError,
    IncompatibleMetaPath,
    MissingFile,
    RaggedFeatures,
    TypeMismatch,
    UnknownNode,
)
from .storage import read_fmat, write_fmat


@dataclass(frozen=True)
class Relation:
    name: str
    src_type: str
    dst_type: str


@dataclass(frozen=True)
class MetaPath:
    """Named chain of typed relation steps linking a type back to itself.

    Each step is (relation_name, reverse); a reversed step walks the
    relation from dst to src. The textual form uses `~` for reversal,
    e.g. "PA,~PA" for paper-author-paper over a paper->author relation.
    """

    name: str
    steps: tuple[tuple[str, bool], ...]

    @classmethod
    def parse(cls, name: str, spec: str) -> "MetaPath":
        steps = []
        for raw in spec.split(","):
            raw = raw.strip()
            if not raw:
                raise IncompatibleMetaPath(f"{name}: empty step in {spec!r}")
            if raw.startswith("~"):
                steps.append((raw[1:], True))
            else:
                steps.append((raw, False))
        return cls(name, tuple(steps))

    def spec_string(self) -> str:
        return ",".join(("~" + r) if rev else r for r, rev in self.steps)

    def resolve(self, g: "HeteroGraph") -> tuple[str, list[tuple[Relation, bool]]]:
        """Validate the chain against g's schema; returns (target_type, steps)."""
        resolved = []
        current = None
        for rel_name, reverse in self.steps:
            rel = g.relation(rel_name)
            if rel is None:
                raise IncompatibleMetaPath(f"{self.name}: unknown relation {rel_name!r}")
            start = rel.dst_type if reverse else rel.src_type
            end = rel.src_type if reverse else rel.dst_type
            if current is None:
                current = start
                target = start
            elif start != current:
                raise IncompatibleMetaPath(
                    f"{self.name}: step {rel_name!r} starts at {start!r}, chain is at {current!r}")
            resolved.append((rel, reverse))
            current = end
        if current is None:
            raise IncompatibleMetaPath(f"{self.name}: no steps")
        if current != target:
            raise IncompatibleMetaPath(
                f"{self.name}: chain ends at {current!r}, not the start type {target!r}")
        return target, resolved

    def is_palindromic(self) -> bool:
        rev = tuple((r, not b) for r, b in reversed(self.steps))
        return rev == self.steps


@dataclass
class MetaPathView:
    """Homogeneous subgraph over one node type induced by a meta-path."""

    metapath: MetaPath
    target_type: str
    nodes: np.ndarray            # global ids, ascending (local order)
    adjacency: sp.csr_matrix     # boolean, N x N over local ids, zero diagonal
    features: np.ndarray         # float32 [N, d_in]

    @property
    def n(self) -> int:
        return int(self.nodes.size)


class HeteroGraph:
    """Immutable-after-construction typed node/edge store."""

    def __init__(self, type_names: list[str], type_of: np.ndarray,
                 relations: list[Relation], adjacency: dict[str, sp.csr_matrix],
                 features_by_type: dict[str, np.ndarray],
                 labels: dict[int, int] | None = None):
        self.type_names = list(type_names)
        self._type_index = {t: i for i, t in enumerate(self.type_names)}
        self._type_of = np.asarray(type_of, dtype=np.int32)
        self.relations = list(relations)
        self._relation_index = {r.name: r for r in self.relations}
        self.adjacency = adjacency
        self.features_by_type = features_by_type
        self.labels = labels

        self.node_count_by_type = {
            t: int((self._type_of == i).sum()) for i, t in enumerate(self.type_names)}
        self._globals_by_type = {
            t: np.flatnonzero(self._type_of == i).astype(np.int64)
            for i, t in enumerate(self.type_names)}
        self._local_of = np.zeros(self._type_of.size, dtype=np.int64)
        for t in self.type_names:
            self._local_of[self._globals_by_type[t]] = np.arange(self.node_count_by_type[t])
        self.validate()

    # --- queries ------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return int(self._type_of.size)

    def relation(self, name: str) -> Relation | None:
        return self._relation_index.get(name)

    def node_type(self, gid: int) -> str:
        if gid < 0 or gid >= self.num_nodes:
            raise UnknownNode(f"node {gid}")
        return self.type_names[self._type_of[gid]]

    def local_id(self, gid: int) -> int:
        if gid < 0 or gid >= self.num_nodes:
            raise UnknownNode(f"node {gid}")
        return int(self._local_of[gid])

    def global_ids(self, type_name: str) -> np.ndarray:
        if type_name not in self._type_index:
            raise GCHGNNError(f"unknown node type {type_name!r}")
        return self._globals_by_type[type_name]

    def features(self, type_name: str) -> np.ndarray:
        return self.features_by_type[type_name]

    def label_array(self, type_name: str) -> np.ndarray:
        """Per-local-id class labels for one type; -1 where unlabeled."""
        out = np.full(self.node_count_by_type[type_name], -1, dtype=np.int64)
        if self.labels:
            for gid, cls in self.labels.items():
                if self.node_type(gid) == type_name:
                    out[self.local_id(gid)] = cls
        return out

    def one_hop_neighbors(self, gid: int) -> dict[str, list[int]]:
        """Neighbors grouped by relation, ascending global ids; empty
        relations are omitted (an isolated node yields an empty map)."""
        t = self.node_type(gid)
        local = self.local_id(gid)
        out: dict[str, list[int]] = {}
        for rel in self.relations:
            acc: set[int] = set()
            adj = self.adjacency[rel.name]
            if rel.src_type == t:
                cols = adj.indices[adj.indptr[local]:adj.indptr[local + 1]]
                acc.update(int(g) for g in self._globals_by_type[rel.dst_type][cols])
            if rel.dst_type == t:
                csc = adj.tocsc()
                rows = csc.indices[csc.indptr[local]:csc.indptr[local + 1]]
                acc.update(int(g) for g in self._globals_by_type[rel.src_type][rows])
            if acc:
                out[rel.name] = sorted(acc)
        return out

    # --- validation ---------------------------------------------------

    def validate(self) -> None:
        if len(self.type_names) + len(self.relations) <= 2:
            raise GCHGNNError(
                "not heterogeneous: need |node types| + |relations| > 2")
        for rel in self.relations:
            adj = self.adjacency.get(rel.name)
            if adj is None:
                raise GCHGNNError(f"relation {rel.name!r} has no adjacency")
            want = (self.node_count_by_type[rel.src_type], self.node_count_by_type[rel.dst_type])
            if adj.shape != want:
                raise TypeMismatch(
                    f"relation {rel.name!r}: adjacency {adj.shape}, schema wants {want}")
        for t, feats in self.features_by_type.items():
            if feats.shape[0] != self.node_count_by_type[t]:
                raise RaggedFeatures(
                    f"type {t!r}: {feats.shape[0]} feature rows, {self.node_count_by_type[t]} nodes")
        if self.labels:
            for gid in self.labels:
                if gid < 0 or gid >= self.num_nodes:
                    raise UnknownNode(f"label for unknown node {gid}")

    # --- persistence ----------------------------------------------------

    def save(self, dataset_dir) -> None:
        """Write the canonical on-disk layout (see load_hin)."""
        d = Path(dataset_dir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "nodes.tsv", "w", encoding="utf-8") as fh:
            for gid in range(self.num_nodes):
                fh.write(f"{gid}\t{self.type_names[self._type_of[gid]]}\n")
        with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
            for rel in self.relations:
                adj = self.adjacency[rel.name].tocoo()
                order = np.lexsort((adj.col, adj.row))
                src_g = self._globals_by_type[rel.src_type]
                dst_g = self._globals_by_type[rel.dst_type]
                for i in order:
                    fh.write(f"{src_g[adj.row[i]]}\t{dst_g[adj.col[i]]}\t{rel.name}\n")
        for t in self.type_names:
            if t in self.features_by_type:
                write_fmat(d / f"features_{t}.fmat", self.features_by_type[t])
        if self.labels:
            with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
                for gid in sorted(self.labels):
                    fh.write(f"{gid}\t{self.labels[gid]}\n")


def _read_tsv(path: Path, n_cols: int) -> list[tuple[str, ...]]:
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != n_cols:
                raise GCHGNNError(f"{path}:{ln}: expected {n_cols} tab-separated fields")
            rows.append(tuple(parts))
    return rows


def load_hin(dataset_dir) -> HeteroGraph:
    """Load a dataset directory: nodes.tsv, edges.tsv, features_<type>.fmat,
    optional labels.tsv. Parallel edges are deduplicated with a warning;
    an edge whose endpoint types contradict its relation's schema (fixed by
    the relation's first edge) is a TypeMismatch error."""
    d = Path(dataset_dir)
    node_rows = _read_tsv(d / "nodes.tsv", 2)
    ids = np.array([int(r[0]) for r in node_rows], dtype=np.int64)
    if ids.size == 0:
        raise GCHGNNError(f"{d}: no nodes")
    if np.unique(ids).size != ids.size:
        raise GCHGNNError(f"{d}: duplicate node ids")
    if ids.min() != 0 or ids.max() != ids.size - 1:
        raise GCHGNNError(f"{d}: node ids must densely cover 0..{ids.size - 1}")

    type_names: list[str] = []
    type_index: dict[str, int] = {}
    type_of = np.zeros(ids.size, dtype=np.int32)
    for (gid_s, tname) in node_rows:
        if tname not in type_index:
            type_index[tname] = len(type_names)
            type_names.append(tname)
        type_of[int(gid_s)] = type_index[tname]

    globals_by_type = {t: np.flatnonzero(type_of == i) for t, i in type_index.items()}
    local_of = np.zeros(ids.size, dtype=np.int64)
    for t, g in globals_by_type.items():
        local_of[g] = np.arange(g.size)

    edge_rows = _read_tsv(d / "edges.tsv", 3)

    rel_schema: dict[str, Relation] = {}
    rel_edges: dict[str, set[tuple[int, int]]] = {}
    rel_dupes: dict[str, int] = {}
    for (src_s, dst_s, rel_name) in edge_rows:
        src, dst = int(src_s), int(dst_s)
        if src < 0 or src >= ids.size or dst < 0 or dst >= ids.size:
            raise UnknownNode(f"edge endpoint {src} or {dst} not a node")
        st = type_names[type_of[src]]
        dt = type_names[type_of[dst]]
        rel = rel_schema.get(rel_name)
        if rel is None:
            rel = Relation(rel_name, st, dt)
            rel_schema[rel_name] = rel
            rel_edges[rel_name] = set()
            rel_dupes[rel_name] = 0
        elif (st, dt) != (rel.src_type, rel.dst_type):
            raise TypeMismatch(
                f"edge {src}->{dst} has types ({st},{dt}), relation {rel_name!r} "
                f"is ({rel.src_type},{rel.dst_type})")
        pair = (int(local_of[src]), int(local_of[dst]))
        if pair in rel_edges[rel_name]:
            rel_dupes[rel_name] += 1
        else:
            rel_edges[rel_name].add(pair)

    total_dupes = sum(rel_dupes.values())
    if total_dupes:
        warnings.warn(f"deduplicated {total_dupes} parallel edges", DuplicateEdgeWarning)

    relations = list(rel_schema.values())
    adjacency: dict[str, sp.csr_matrix] = {}
    for rel in relations:
        n_src = int(globals_by_type[rel.src_type].size)
        n_dst = int(globals_by_type[rel.dst_type].size)
        pairs = sorted(rel_edges[rel.name])
        if pairs:
            rows = np.array([p[0] for p in pairs], dtype=np.int64)
            cols = np.array([p[1] for p in pairs], dtype=np.int64)
            data = np.ones(rows.size, dtype=bool)
            adj = sp.csr_matrix((data, (rows, cols)), shape=(n_src, n_dst))
        else:
            adj = sp.csr_matrix((n_src, n_dst), dtype=bool)
        adj.sort_indices()
        adjacency[rel.name] = adj

    features_by_type: dict[str, np.ndarray] = {}
    for t in type_names:
        fpath = d / f"features_{t}.fmat"
        if not fpath.exists():
            raise MissingFile(str(fpath))
        feats = read_fmat(fpath)
        if feats.shape[0] != int(globals_by_type[t].size):
            raise RaggedFeatures(
                f"type {t!r}: {feats.shape[0]} feature rows, {globals_by_type[t].size} nodes")
        features_by_type[t] = feats

    labels = None
    if (d / "labels.tsv").exists():
        labels = {}
        for (gid_s, cls_s) in _read_tsv(d / "labels.tsv", 2):
            gid = int(gid_s)
            if gid < 0 or gid >= ids.size:
                raise UnknownNode(f"label for unknown node {gid}")
            labels[gid] = int(cls_s)

    return HeteroGraph(type_names, type_of, relations, adjacency, features_by_type, labels)


# ---------------------------------------------------------------------------
# meta-path composition
# ---------------------------------------------------------------------------

def compose_metapath_counts(g: HeteroGraph, mp: MetaPath) -> sp.csr_matrix:
    """Path-instance counts between target-type nodes, diagonal cleared."""
    _, steps = mp.resolve(g)
    product: sp.csr_matrix | None = None
    for rel, reverse in steps:
        m = g.adjacency[rel.name].astype(np.int64)
        if reverse:
            m = m.T.tocsr()
        product = m if product is None else (product @ m).tocsr()
    assert product is not None
    product = product.tolil()
    product.setdiag(0)
    product = product.tocsr()
    product.eliminate_zeros()
    product.sort_indices()
    return product


def compose_metapath_adjacency(g: HeteroGraph, mp: MetaPath) -> sp.csr_matrix:
    """Boolean meta-path adjacency: (u,v)=1 iff some path instance links
    u to v, u != v. Path multiplicity is discarded."""
    counts = compose_metapath_counts(g, mp)
    adj = counts.astype(bool).tocsr()
    adj.sort_indices()
    return adj


def build_view(g: HeteroGraph, mp: MetaPath) -> MetaPathView:
    target, _ = mp.resolve(g)
    if target not in g.features_by_type:
        raise MissingFile(f"no features for target type {target!r}")
    adjacency = compose_metapath_adjacency(g, mp)
    return MetaPathView(
        metapath=mp,
        target_type=target,
        nodes=g.global_ids(target).copy(),
        adjacency=adjacency,
        features=g.features(target).copy(),
    )


def metapath_pair_count(g: HeteroGraph, u: int, v: int, mps: list[MetaPath]) -> int:
    """How many of the given meta-paths connect u and v (self pairs are 0)."""
    if u == v:
        return 0
    count = 0
    for mp in mps:
        target, _ = mp.resolve(g)
        if g.node_type(u) != target or g.node_type(v) != target:
            raise TypeMismatch(f"nodes {u},{v} are not both of type {target!r}")
        adj = compose_metapath_adjacency(g, mp)
        if adj[g.local_id(u), g.local_id(v)]:
            count += 1
    return count
