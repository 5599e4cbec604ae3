"""Positive/negative sample construction for the contrastive objectives.

Location-aware positives come from typed random walks embedded by
skip-gram with negative sampling; semantic-aware positives rank nodes by
how many distinct meta-paths connect them to the anchor. Their union per
anchor forms the edge sampling set; the in-batch complement supplies the
negatives, and the highest-degree anchors form the node set used by the
view-alignment loss.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCorpus, GCHGNNError
from .hetero_graph import (
    HeteroGraph,
    MetaPath,
    compose_metapath_adjacency,
    compose_metapath_counts,
)
from .storage import read_fmat, write_fmat


@dataclass
class WalkCorpus:
    """Typed random walks; node ids are global, first node is target-type."""

    walks: list[np.ndarray]
    scheme: MetaPath
    target_type: str


@dataclass
class SampleSets:
    """Per-anchor positives over a fixed batch of target-local node ids.

    Negatives are implicit: everything in the batch that is neither the
    anchor nor one of its positives.
    """

    positives: dict[int, np.ndarray]
    batch: np.ndarray
    intra_set: np.ndarray

    def anchors(self) -> list[int]:
        return sorted(self.positives)

    def negatives(self, i: int) -> np.ndarray:
        pos = set(self.positives.get(i, ()).tolist())
        pos.add(i)
        return np.array([b for b in self.batch if b not in pos], dtype=np.int64)


def metapath_walks(g: HeteroGraph, scheme: MetaPath, walks_per_node: int,
                   walk_len: int, seed: int, workers: int = 1) -> WalkCorpus:
    """Random walks that follow the meta-path's typed steps cyclically.

    Every walk starts at a target-type node and, at each step, moves to a
    uniformly chosen neighbor under the current relation step; a node with
    no admissible neighbor truncates the walk. Start nodes are partitioned
    into `workers` chunks, each driven by a generator seeded with
    seed XOR chunk-id, so the corpus is independent of scheduling.
    """
    if walk_len < 2:
        raise GCHGNNError("walk_len must be >= 2")
    target, steps = scheme.resolve(g)
    mats = []
    for rel, reverse in steps:
        adj = g.adjacency[rel.name]
        mats.append((adj.T.tocsr() if reverse else adj.tocsr()))
    # the node type at each walk position, cycling through the step chain
    chain_types = [target]
    for rel, reverse in steps:
        chain_types.append(rel.src_type if reverse else rel.dst_type)

    n = g.node_count_by_type[target]
    workers = max(1, int(workers))
    starts = np.arange(n)
    chunks = np.array_split(starts, workers)
    walks: list[np.ndarray] = []
    for worker_id, chunk in enumerate(chunks):
        if chunk.size == 0:
            continue
        rng = np.random.default_rng(seed ^ worker_id)
        cur = np.repeat(chunk, walks_per_node)           # local ids, current type
        nwalks = cur.size
        hist = np.full((nwalks, walk_len), -1, dtype=np.int64)
        hist[:, 0] = g.global_ids(target)[cur]
        alive = np.ones(nwalks, dtype=bool)
        for pos in range(1, walk_len):
            m = mats[(pos - 1) % len(mats)]
            nxt_type = chain_types[(pos - 1) % len(steps) + 1]
            cur_safe = np.where(alive, cur, 0)  # dead walks parked on row 0, masked
            counts = m.indptr[cur_safe + 1] - m.indptr[cur_safe]
            alive = alive & (counts > 0)
            if not alive.any():
                break
            u = rng.random(nwalks)
            pick = m.indptr[cur_safe] + np.minimum(
                (u * np.maximum(counts, 1)).astype(np.int64), np.maximum(counts - 1, 0))
            pick = np.clip(pick, 0, m.indices.size - 1)
            nxt = m.indices[pick]
            hist[alive, pos] = g.global_ids(nxt_type)[nxt[alive]]
            cur = np.where(alive, nxt, 0)
        for row in hist:
            end = np.argmax(row < 0) if (row < 0).any() else walk_len
            walks.append(row[:end].copy())
    return WalkCorpus(walks=walks, scheme=scheme, target_type=target)


def _target_sequences(corpus: WalkCorpus, g: HeteroGraph) -> list[np.ndarray]:
    """Project walks onto target-type local ids (other types dropped)."""
    target_ids = g.global_ids(corpus.target_type)
    lookup = np.full(g.num_nodes, -1, dtype=np.int64)
    lookup[target_ids] = np.arange(target_ids.size)
    seqs = []
    for walk in corpus.walks:
        locals_ = lookup[walk]
        seqs.append(locals_[locals_ >= 0])
    return seqs


def skipgram_train(corpus: WalkCorpus, g: HeteroGraph, dim: int, window: int,
                   negatives_per_pair: int, epochs: int, lr: float,
                   seed: int) -> np.ndarray:
    """Skip-gram with negative sampling over co-window pairs of the
    target-projected walks; negatives follow unigram^0.75 over target nodes.
    Returns a [N_target, dim] float32 table. Zero epochs return the
    initialization unchanged."""
    if not corpus.walks:
        raise EmptyCorpus("no walks")
    seqs = _target_sequences(corpus, g)
    n = g.node_count_by_type[corpus.target_type]
    rng = np.random.default_rng(seed)
    emb_in = ((rng.random((n, dim)) - 0.5) / dim).astype(np.float64)
    emb_out = np.zeros((n, dim), dtype=np.float64)
    if epochs == 0:
        return emb_in.astype(np.float32)

    centers, contexts = [], []
    counts = np.zeros(n, dtype=np.float64)
    for s in seqs:
        counts += np.bincount(s, minlength=n)
        for i in range(s.size):
            lo = max(0, i - window)
            hi = min(s.size, i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(s[i])
                    contexts.append(s[j])
    if not centers:
        raise EmptyCorpus("no co-window pairs (walks too short)")
    centers = np.array(centers, dtype=np.int64)
    contexts = np.array(contexts, dtype=np.int64)

    noise = counts ** 0.75
    if noise.sum() == 0:
        noise = np.ones(n)
    cum = np.cumsum(noise / noise.sum())

    import scipy.sparse as sparse

    def scatter_update(table: np.ndarray, rows: np.ndarray, grads: np.ndarray) -> None:
        # mean (not sum) over duplicate rows within a batch: with a small
        # vocabulary every batch revisits the same rows many times and a
        # summed update would amplify the step size unboundedly
        m = sparse.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))),
                              shape=(table.shape[0], rows.size))
        hits = np.maximum(np.asarray(m.sum(axis=1)).ravel(), 1.0)
        table += (m @ grads) / hits[:, None]

    batch = 2048
    for _ in range(epochs):
        order = rng.permutation(centers.size)
        neg_all = np.searchsorted(cum, rng.random((order.size, negatives_per_pair)))
        for lo in range(0, order.size, batch):
            idx = order[lo:lo + batch]
            c = centers[idx]
            o = contexts[idx]
            neg = neg_all[lo:lo + batch]
            vc = emb_in[c]                                  # [B, d]
            vo = emb_out[o]
            vn = emb_out[neg]                               # [B, K, d]
            pos_score = 1.0 / (1.0 + np.exp(-np.clip((vc * vo).sum(axis=1), -30, 30)))
            neg_score = 1.0 / (1.0 + np.exp(-np.clip(
                np.einsum("bd,bkd->bk", vc, vn), -30, 30)))
            g_pos = (1.0 - pos_score)[:, None]              # d/dscore of log sigmoid
            g_neg = -neg_score                              # [B, K]
            grad_c = g_pos * vo + np.einsum("bk,bkd->bd", g_neg, vn)
            grad_o = g_pos * vc
            grad_n = g_neg[:, :, None] * vc[:, None, :]
            scatter_update(emb_in, c, lr * grad_c)
            scatter_update(emb_out, np.concatenate([o, neg.ravel()]),
                           lr * np.concatenate([grad_o, grad_n.reshape(-1, dim)]))
    return emb_in.astype(np.float32)


def location_positives(embeddings: np.ndarray, k: int) -> dict[int, np.ndarray]:
    """Top-k most cosine-similar other nodes per anchor; ties broken by
    ascending node id. k >= N returns all others."""
    if k < 1:
        raise GCHGNNError("k must be >= 1")
    x = np.float64(embeddings)
    norms = np.maximum(np.sqrt((x * x).sum(axis=1, keepdims=True)), 1e-12)
    s = (x / norms) @ (x / norms).T
    n = s.shape[0]
    np.fill_diagonal(s, -np.inf)
    ids = np.arange(n)
    out = {}
    kk = min(k, n - 1)
    for i in range(n):
        order = np.lexsort((ids, -s[i]))
        out[i] = np.sort(order[:kk]).astype(np.int64)
    return out


def semantic_positives(g: HeteroGraph, mps: list[MetaPath], k_sem: int
                       ) -> dict[int, np.ndarray]:
    """Nodes ranked per anchor by distinct-meta-path count (>= 1 required),
    then raw path-instance count, then ascending id; top k_sem kept."""
    if not mps:
        raise GCHGNNError("need at least one meta-path")
    distinct = None
    raw = None
    for mp in mps:
        a = compose_metapath_adjacency(g, mp).toarray().astype(np.int64)
        c = compose_metapath_counts(g, mp).toarray()
        distinct = a if distinct is None else distinct + a
        raw = c if raw is None else raw + c
    n = distinct.shape[0]
    ids = np.arange(n)
    out = {}
    for i in range(n):
        cand = np.flatnonzero(distinct[i] > 0)
        if cand.size == 0:
            out[i] = np.empty(0, dtype=np.int64)
            continue
        order = cand[np.lexsort((cand, -raw[i, cand], -distinct[i, cand]))]
        out[i] = np.sort(order[:k_sem]).astype(np.int64)
    return out


def build_sample_sets(loc: dict[int, np.ndarray], sem: dict[int, np.ndarray],
                      degrees: np.ndarray, batch: np.ndarray,
                      intra_fraction: float) -> SampleSets:
    """Union the two positive sources per anchor and pick the intra-contrast
    node set as the top-degree fraction of the anchors."""
    if set(loc) != set(sem):
        raise GCHGNNError("location and semantic positives must share anchors")
    positives = {}
    for i in loc:
        union = np.union1d(loc[i], sem[i]).astype(np.int64)
        union = union[union != i]
        if union.size:
            positives[i] = union
    anchors = np.array(sorted(positives), dtype=np.int64)
    want = int(np.ceil(intra_fraction * batch.size))
    take = min(want, anchors.size)
    if take > 0:
        order = anchors[np.lexsort((anchors, -degrees[anchors]))]
        intra = np.sort(order[:take]).astype(np.int64)
    else:
        intra = np.empty(0, dtype=np.int64)
    return SampleSets(positives=positives, batch=np.asarray(batch, dtype=np.int64),
                      intra_set=intra)


def metapath_degrees(g: HeteroGraph, mps: list[MetaPath]) -> np.ndarray:
    """Total meta-path neighbor count per target node, summed over paths."""
    deg = None
    for mp in mps:
        a = compose_metapath_adjacency(g, mp)
        d = np.asarray(a.sum(axis=1)).ravel()
        deg = d if deg is None else deg + d
    return deg.astype(np.int64)


# ---------------------------------------------------------------------------
# cached location embeddings
# ---------------------------------------------------------------------------

def _walk_cache_key(g: HeteroGraph, scheme: MetaPath, walks_per_node: int,
                    walk_len: int, window: int, negatives: int, dim: int,
                    epochs: int, lr: float, seed: int) -> str:
    h = hashlib.sha256()
    for rel in g.relations:
        adj = g.adjacency[rel.name].tocsr()
        h.update(rel.name.encode())
        h.update(adj.indptr.tobytes())
        h.update(adj.indices.tobytes())
    payload = (f"{scheme.name}|{scheme.spec_string()}|{walks_per_node}|{walk_len}|"
               f"{window}|{negatives}|{dim}|{epochs}|{lr}|{seed}")
    h.update(payload.encode())
    return h.hexdigest()[:16]


def cached_location_embeddings(g: HeteroGraph, scheme: MetaPath, walks_per_node: int,
                               walk_len: int, window: int, negatives: int, dim: int,
                               epochs: int, lr: float, seed: int,
                               cache_dir=None) -> np.ndarray:
    """Walk + skip-gram embeddings, cached as FMAT1 under `cache/` keyed by
    the graph structure and every walk hyperparameter. The GCHGNN_CACHE
    environment variable overrides the cache directory."""
    env_dir = os.environ.get("GCHGNN_CACHE")
    if env_dir:
        cache_dir = env_dir
    path = None
    if cache_dir is not None:
        key = _walk_cache_key(g, scheme, walks_per_node, walk_len, window,
                              negatives, dim, epochs, lr, seed)
        path = Path(cache_dir) / f"mp2v_{key}.fmat"
        if path.exists():
            return read_fmat(path)
    corpus = metapath_walks(g, scheme, walks_per_node, walk_len, seed)
    emb = skipgram_train(corpus, g, dim, window, negatives, epochs, lr, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_fmat(path, emb)
    return emb
