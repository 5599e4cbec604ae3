"""Training objectives: scaled cosine error between views, bidirectional
InfoNCE between the schema and fused meta-path embeddings, the masked
reconstruction term, and pairwise ranking for link prediction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import Tensor, constant
from .errors import EmptyPositives, EmptyTriples, GCHGNNError, ZeroVectorRowWarning
from .sampler import SampleSets


@dataclass
class LossWeights:
    """Weights and shape parameters of the combined objectives."""

    tau: float = 0.5              # contrastive temperature
    eta: float = 2.0              # cosine-error exponent
    view_balance: float = 0.5     # directional mix inside the inter loss
    intra: float = 0.3
    inter: float = 0.6
    gen: float = 0.1
    hcl: float = 1.0
    bpr: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise GCHGNNError("temperature must be positive")
        if self.eta < 1:
            raise GCHGNNError("cosine-error exponent must be >= 1")
        if not 0.0 <= self.view_balance <= 1.0:
            raise GCHGNNError("view balance must be in [0, 1]")
        for name in ("intra", "inter", "gen", "hcl", "bpr"):
            if getattr(self, name) < 0:
                raise GCHGNNError(f"loss weight {name} must be nonnegative")


def sce_loss(x_view: Tensor, z_view: Tensor, nodes: np.ndarray, eta: float) -> Tensor:
    """Mean over the node set of (1 - cos(x_v, z_v))^eta.

    All-zero rows (cosine undefined) are treated as cosine 0 with a warning.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise GCHGNNError("sce_loss needs a nonempty node set")
    if eta < 1:
        raise GCHGNNError("eta must be >= 1")
    x = diff.gather_rows(x_view, nodes)
    z = diff.gather_rows(z_view, nodes)
    for side, mat in (("first", x), ("second", z)):
        zero = ~mat.value.any(axis=1)
        if zero.any():
            warnings.warn(f"{int(zero.sum())} all-zero rows in {side} view; cosine set to 0",
                          ZeroVectorRowWarning)
    cos = diff.row_sum(diff.elementwise_mul(diff.l2_normalize_rows(x),
                                            diff.l2_normalize_rows(z)))
    base = diff.sub(constant(np.ones((nodes.size, 1), dtype=x.value.dtype)), cos)
    # rounding can push cos a hair past 1; clamp at 0 before a fractional power
    base = diff.leaky_relu(base, 0.0)
    return diff.mean_all(diff.power(base, eta))


def multiview_sce(views: list[Tensor], nodes: np.ndarray, eta: float) -> Tensor:
    """Pairwise cosine-error alignment, averaged over unordered view pairs."""
    if len(views) < 2:
        return constant(np.zeros((1, 1), dtype=views[0].value.dtype))
    terms = []
    for a in range(len(views)):
        for b in range(a + 1, len(views)):
            terms.append(sce_loss(views[a], views[b], nodes, eta))
    total = terms[0]
    for t in terms[1:]:
        total = diff.add(total, t)
    return diff.scalar_mul(total, 1.0 / len(terms))


def info_nce_directional(h_a: Tensor, h_b: Tensor, positives: dict[int, np.ndarray],
                         batch: np.ndarray, tau: float,
                         diagnostics: dict | None = None) -> Tensor:
    """Mean over anchors of -log(sum_pos exp(cos/tau) / sum_all exp(cos/tau)).

    The denominator runs over the whole batch except the anchor itself, so
    the loss is nonnegative. Anchors with no positives are skipped and
    counted in `diagnostics["skipped_anchors"]` when a dict is supplied.
    """
    batch = np.asarray(batch, dtype=np.int64)
    anchors = [i for i in sorted(positives) if len(positives[i]) > 0]
    skipped = len(positives) - len(anchors)
    if diagnostics is not None:
        diagnostics["skipped_anchors"] = diagnostics.get("skipped_anchors", 0) + skipped
    if not anchors:
        raise EmptyPositives("every anchor has an empty positive set")
    col_of = {int(b): j for j, b in enumerate(batch)}
    a_idx = np.array(anchors, dtype=np.int64)
    sims = diff.scalar_mul(
        diff.cosine_similarity_matrix(diff.gather_rows(h_a, a_idx), h_b), 1.0 / tau)
    pos_mask = np.zeros((len(anchors), batch.size), dtype=bool)
    den_mask = np.ones((len(anchors), batch.size), dtype=bool)
    for row, i in enumerate(anchors):
        den_mask[row, col_of[int(i)]] = False
        for p in positives[i]:
            pos_mask[row, col_of[int(p)]] = True
    num = diff.masked_row_logsumexp(sims, pos_mask)
    den = diff.masked_row_logsumexp(sims, den_mask)
    return diff.mean_all(diff.sub(den, num))


def inter_loss(h1: Tensor, h2: Tensor, sets: SampleSets, balance: float, tau: float,
               diagnostics: dict | None = None) -> Tensor:
    """Bidirectional InfoNCE between the two views, mixed by `balance`:
    balance * (schema vs meta-path) + (1 - balance) * (meta-path vs schema)."""
    if not 0.0 <= balance <= 1.0:
        raise GCHGNNError("balance must be in [0, 1]")
    l1 = info_nce_directional(h1, h2, sets.positives, sets.batch, tau, diagnostics)
    l2 = info_nce_directional(h2, h1, sets.positives, sets.batch, tau, diagnostics)
    return diff.add(diff.scalar_mul(l1, balance), diff.scalar_mul(l2, 1.0 - balance))


def hcl_total(l_intra: Tensor, l_inter: Tensor, l_gen: Tensor,
              weights: LossWeights) -> Tensor:
    return diff.add(
        diff.add(diff.scalar_mul(l_intra, weights.intra),
                 diff.scalar_mul(l_inter, weights.inter)),
        diff.scalar_mul(l_gen, weights.gen))


def bpr_loss(user_emb: Tensor, item_emb: Tensor, triples: np.ndarray) -> Tensor:
    """-mean log sigmoid(score(i,j) - score(i,k)) over (user, pos, neg)."""
    triples = np.asarray(triples, dtype=np.int64)
    if triples.size == 0:
        raise EmptyTriples("no (user, positive, negative) triples")
    if triples.ndim != 2 or triples.shape[1] != 3:
        raise GCHGNNError(f"triples must be [m, 3], got {triples.shape}")
    u = diff.gather_rows(user_emb, triples[:, 0])
    pj = diff.gather_rows(item_emb, triples[:, 1])
    nk = diff.gather_rows(item_emb, triples[:, 2])
    pos = diff.row_sum(diff.elementwise_mul(u, pj))
    neg = diff.row_sum(diff.elementwise_mul(u, nk))
    return diff.scalar_mul(diff.mean_all(diff.log_sigmoid(diff.sub(pos, neg))), -1.0)


def link_total(l_hcl: Tensor, l_bpr: Tensor, lambda_hcl: float, lambda_bpr: float) -> Tensor:
    if lambda_hcl < 0 or lambda_bpr < 0:
        raise GCHGNNError("task weights must be nonnegative")
    return diff.add(diff.scalar_mul(l_hcl, lambda_hcl), diff.scalar_mul(l_bpr, lambda_bpr))
