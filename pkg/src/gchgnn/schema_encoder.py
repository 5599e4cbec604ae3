"""Network-schema view: project typed features to a shared space and
aggregate one-hop neighbors with relation-specific additive attention.

Attention for anchor e over neighbor w under relation r is
softmax_w(leaky_relu(a_r^T [h_e || h_w])) on the projected embeddings;
per-relation aggregations are averaged over the relations present at the
anchor, then passed through ELU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diff
from .diff import Parameter, ParameterSet, Tensor, constant
from .errors import EmptyNeighborhood, ShapeMismatch
from .hetero_graph import HeteroGraph


@dataclass
class SchemaEncoderParams:
    dim: int
    projections: dict[str, Parameter]   # node type -> [d_in(type), dim]
    attention: dict[str, Parameter]     # relation name -> [2*dim, 1]
    slope: float = 0.2


def init_schema_params(g: HeteroGraph, dim: int, rng: np.random.Generator,
                       pset: ParameterSet, dtype=np.float32) -> SchemaEncoderParams:
    projections = {
        t: pset.new(f"schema.proj.{t}", "xavier-uniform",
                    (g.features(t).shape[1], dim), rng, dtype=dtype)
        for t in g.type_names if t in g.features_by_type
    }
    attention = {
        rel.name: pset.new(f"schema.attn.{rel.name}", "xavier-uniform",
                           (2 * dim, 1), rng, dtype=dtype)
        for rel in g.relations
    }
    return SchemaEncoderParams(dim=dim, projections=projections, attention=attention)


def project_all(g: HeteroGraph, params: SchemaEncoderParams,
                dtype=np.float32) -> dict[str, Tensor]:
    """h0 per type: features times the type's projection matrix."""
    out = {}
    for t, proj in params.projections.items():
        feats = g.features(t)
        if feats.shape[1] != proj.value.shape[0]:
            raise ShapeMismatch(
                f"type {t!r}: features dim {feats.shape[1]} vs projection {proj.value.shape}")
        out[t] = diff.matmul(constant(feats, dtype=dtype), proj)
    return out


def _split_attention(attn: Parameter, dim: int) -> tuple[Tensor, Tensor]:
    top = diff.gather_rows(attn, np.arange(dim))
    bot = diff.gather_rows(attn, np.arange(dim, 2 * dim))
    return top, bot


def relation_attention(anchor_h: Tensor, neighbors_h: Tensor, attn: Parameter,
                       slope: float = 0.2) -> Tensor:
    """Attention weights [1, m] of one anchor over its m neighbors."""
    if neighbors_h.shape[0] == 0:
        raise EmptyNeighborhood("anchor has no neighbors under this relation")
    dim = anchor_h.shape[1]
    a_top, a_bot = _split_attention(attn, dim)
    s_anchor = diff.matmul(anchor_h, a_top)                 # [1, 1]
    s_nb = diff.transpose(diff.matmul(neighbors_h, a_bot))  # [1, m]
    scores = diff.leaky_relu(diff.add(s_anchor, s_nb), slope)
    return diff.row_softmax(scores)


def _incidence(g: HeteroGraph, rel, target: str) -> tuple[str, np.ndarray] | None:
    """Dense anchor-by-neighbor mask for one relation, or None if the
    target type does not touch the relation."""
    masks = []
    if rel.src_type == target:
        masks.append(("fwd", g.adjacency[rel.name].toarray()))
    if rel.dst_type == target:
        masks.append(("rev", g.adjacency[rel.name].T.toarray()))
    if not masks:
        return None
    if len(masks) == 1:
        _, m = masks[0]
        neighbor_type = rel.dst_type if masks[0][0] == "fwd" else rel.src_type
        return neighbor_type, m.astype(bool)
    # self-type relation: neighbors in either direction
    combined = masks[0][1] | masks[1][1]
    return rel.src_type, combined.astype(bool)


def schema_forward(g: HeteroGraph, params: SchemaEncoderParams,
                   h0: dict[str, Tensor], target_type: str) -> Tensor:
    """One-hop attention aggregation for every target-type node.

    Nodes with no neighbor under any relation come out as ELU(0) = 0 so the
    output stays row-aligned with the target node set.
    """
    n = g.node_count_by_type[target_type]
    h_t = h0[target_type]
    contributions: list[Tensor] = []
    present = np.zeros((n, 1), dtype=np.int64)
    for rel in g.relations:
        inc = _incidence(g, rel, target_type)
        if inc is None:
            continue
        neighbor_type, mask = inc
        if neighbor_type not in h0:
            continue
        h_nb = h0[neighbor_type]
        a_top, a_bot = _split_attention(params.attention[rel.name], params.dim)
        s_anchor = diff.matmul(h_t, a_top)                  # [n, 1]
        s_nb = diff.transpose(diff.matmul(h_nb, a_bot))     # [1, m]
        scores = diff.leaky_relu(diff.add(s_anchor, s_nb), params.slope)
        alpha = diff.masked_row_softmax(scores, mask, allow_empty_rows=True)
        contributions.append(diff.matmul(alpha, h_nb))
        present += mask.any(axis=1)[:, None]
    if not contributions:
        return diff.elu(constant(np.zeros((n, params.dim)), dtype=h_t.value.dtype))
    total = contributions[0]
    for c in contributions[1:]:
        total = diff.add(total, c)
    inv = constant(1.0 / np.maximum(present, 1), dtype=h_t.value.dtype)
    return diff.elu(diff.elementwise_mul(total, inv))
