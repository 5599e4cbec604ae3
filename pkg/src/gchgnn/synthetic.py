"""Synthetic heterogeneous datasets with planted communities.

The generator emits a citation-shaped graph (target "paper" nodes plus
"author" and "subject" auxiliaries). Every node belongs to one of
n_communities blocks; papers attach to auxiliaries of their own block with
intra_edge_prob and to others with inter_edge_prob, so meta-path views
(papers sharing an author or subject) are community-assortative. Features
are Gaussian class prototypes plus isotropic noise; labels are the
community ids of the papers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidSpec
from .hetero_graph import HeteroGraph, MetaPathView, Relation


@dataclass
class SyntheticSpec:
    n_target: int = 900
    n_aux_per_type: int = 300
    n_communities: int = 3
    intra_edge_prob: float = 0.04
    inter_edge_prob: float = 0.001
    feature_dim: int = 32
    feature_noise_sigma: float = 4.0
    seed: int = 7

    def validate(self) -> None:
        if self.n_target < 1 or self.n_aux_per_type < 1:
            raise InvalidSpec("node counts must be positive")
        if self.n_communities < 1 or self.n_communities > self.n_target:
            raise InvalidSpec("n_communities must be in [1, n_target]")
        for p in (self.intra_edge_prob, self.inter_edge_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidSpec("edge probabilities must be in [0, 1]")
        if self.intra_edge_prob <= self.inter_edge_prob:
            raise InvalidSpec("intra_edge_prob must exceed inter_edge_prob")
        if self.feature_dim < 1:
            raise InvalidSpec("feature_dim must be positive")
        if self.feature_noise_sigma < 0:
            raise InvalidSpec("feature_noise_sigma must be nonnegative")


def _block_labels(n: int, k: int) -> np.ndarray:
    return (np.arange(n) * k) // n


def _community_edges(rng, src_comm: np.ndarray, dst_comm: np.ndarray,
                     p_intra: float, p_inter: float) -> sp.csr_matrix:
    probs = np.where(src_comm[:, None] == dst_comm[None, :], p_intra, p_inter)
    dense = rng.random(probs.shape) < probs
    return sp.csr_matrix(dense)


def synthetic_graph(spec: SyntheticSpec) -> HeteroGraph:
    """Build the planted-community graph in memory."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k = spec.n_communities
    comm_paper = _block_labels(spec.n_target, k)
    comm_author = _block_labels(spec.n_aux_per_type, k)
    comm_subject = _block_labels(spec.n_aux_per_type, k)

    pa = _community_edges(rng, comm_paper, comm_author,
                          spec.intra_edge_prob, spec.inter_edge_prob)
    ps = _community_edges(rng, comm_paper, comm_subject,
                          spec.intra_edge_prob, spec.inter_edge_prob)

    d = spec.feature_dim
    protos = {
        "paper": rng.normal(size=(k, d)),
        "author": rng.normal(size=(k, d)),
        "subject": rng.normal(size=(k, d)),
    }
    sigma = spec.feature_noise_sigma
    feats = {
        "paper": (protos["paper"][comm_paper]
                  + sigma * rng.normal(size=(spec.n_target, d))).astype(np.float32),
        "author": (protos["author"][comm_author]
                   + sigma * rng.normal(size=(spec.n_aux_per_type, d))).astype(np.float32),
        "subject": (protos["subject"][comm_subject]
                    + sigma * rng.normal(size=(spec.n_aux_per_type, d))).astype(np.float32),
    }

    type_of = np.concatenate([
        np.zeros(spec.n_target, dtype=np.int32),
        np.ones(spec.n_aux_per_type, dtype=np.int32),
        np.full(spec.n_aux_per_type, 2, dtype=np.int32),
    ])
    labels = {int(i): int(c) for i, c in enumerate(comm_paper)}
    return HeteroGraph(
        ["paper", "author", "subject"], type_of,
        [Relation("PA", "paper", "author"), Relation("PS", "paper", "subject")],
        {"PA": pa, "PS": ps}, feats, labels)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> HeteroGraph:
    """Generate and write the dataset directory; deterministic per seed."""
    g = synthetic_graph(spec)
    g.save(out_dir)
    return g


def community_assortativity(view: MetaPathView, communities: np.ndarray) -> float:
    """Fraction of view edges that join nodes of the same community."""
    coo = view.adjacency.tocoo()
    if coo.nnz == 0:
        return 0.0
    same = (communities[coo.row] == communities[coo.col]).sum()
    return float(same / coo.nnz)
