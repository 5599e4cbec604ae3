"""Masked autoencoder over meta-path views plus semantic-attention fusion.

Per view: uniformly mask node feature rows with a learnable token, encode
with a stack of GNN layers, re-hide a second node set in the code space,
decode, and map back to the shared embedding dimension. Per-view outputs
are fused by semantic attention into one embedding matrix, trained with a
mean-squared reconstruction loss on the masked rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diff
from .diff import Parameter, ParameterSet, Tensor, constant
from .errors import GCHGNNError
from .hetero_graph import MetaPathView


# ---------------------------------------------------------------------------
# masking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskPlan:
    """Node sets hidden before encoding (mask) and before decoding (remask)."""

    mask_set: np.ndarray
    remask_set: np.ndarray
    mask_ratio: float
    remask_ratio: float
    seed: int


def sample_mask(n: int, p: float, rng) -> np.ndarray:
    """Uniform without-replacement subset of round(p*n) node ids, sorted."""
    if not 0.0 <= p < 1.0:
        raise GCHGNNError(f"mask ratio must be in [0, 1), got {p}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    m = int(round(p * n))
    if m == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(n, size=m, replace=False)).astype(np.int64)


def make_mask_plan(n: int, p: float, p_remask: float, seed: int) -> MaskPlan:
    ss = np.random.SeedSequence(seed).spawn(2)
    return MaskPlan(
        mask_set=sample_mask(n, p, np.random.default_rng(ss[0])),
        remask_set=sample_mask(n, p_remask, np.random.default_rng(ss[1])),
        mask_ratio=p,
        remask_ratio=p_remask,
        seed=seed,
    )


def apply_mask(x: Tensor, node_set: np.ndarray, mask_token: Parameter) -> Tensor:
    """Replace the given rows of x with the (learnable) token row."""
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        return x
    n = x.shape[0]
    keep = np.ones((n, 1), dtype=x.value.dtype)
    keep[node_set] = 0.0
    hide = 1.0 - keep
    kept = diff.elementwise_mul(x, constant(keep))
    token_rows = diff.matmul(constant(hide), mask_token)
    return diff.add(kept, token_rows)


# ---------------------------------------------------------------------------
# GNN layers over one view
# ---------------------------------------------------------------------------

@dataclass
class ViewRuntime:
    """Per-view constants shared by encoder and decoder layers."""

    n: int
    norm: sp.csr_matrix          # D^{-1/2}(A+I)D^{-1/2}, float
    att_mask: np.ndarray         # boolean adjacency with self-loops, dense

    @classmethod
    def from_view(cls, view: MetaPathView, dtype=np.float32) -> "ViewRuntime":
        return cls.from_adjacency(view.adjacency, dtype=dtype)

    @classmethod
    def from_adjacency(cls, adjacency: sp.spmatrix, dtype=np.float32) -> "ViewRuntime":
        n = adjacency.shape[0]
        a = adjacency.astype(np.float64) + sp.eye(n, format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        dinv = 1.0 / np.sqrt(deg)
        norm = (sp.diags(dinv) @ a @ sp.diags(dinv)).tocsr().astype(dtype)
        att_mask = adjacency.toarray().astype(bool) | np.eye(n, dtype=bool)
        return cls(n=n, norm=norm, att_mask=att_mask)


@dataclass
class GNNLayer:
    kind: str                     # "gcn" | "gat"
    weight: Parameter
    att_src: Parameter | None = None
    att_dst: Parameter | None = None
    slope: float = 0.2

    def forward(self, rt: ViewRuntime, x: Tensor) -> Tensor:
        if self.kind == "gcn":
            return diff.elu(diff.matmul(diff.sparse_dense_matmul(rt.norm, x), self.weight))
        z = diff.matmul(x, self.weight)
        s_src = diff.matmul(z, self.att_src)
        s_dst = diff.transpose(diff.matmul(z, self.att_dst))
        scores = diff.leaky_relu(diff.add(s_src, s_dst), self.slope)
        alpha = diff.masked_row_softmax(scores, rt.att_mask)
        return diff.elu(diff.matmul(alpha, z))


def _make_layer(kind: str, d_in: int, d_out: int, rng, pset: ParameterSet,
                name: str, dtype) -> GNNLayer:
    if kind not in ("gcn", "gat"):
        raise GCHGNNError(f"unknown layer kind {kind!r}")
    w = pset.new(f"{name}.w", "xavier-uniform", (d_in, d_out), rng, dtype=dtype)
    if kind == "gcn":
        return GNNLayer("gcn", w)
    return GNNLayer(
        "gat", w,
        att_src=pset.new(f"{name}.asrc", "xavier-uniform", (d_out, 1), rng, dtype=dtype),
        att_dst=pset.new(f"{name}.adst", "xavier-uniform", (d_out, 1), rng, dtype=dtype),
    )


@dataclass
class MAEParams:
    """Encoder/decoder stacks, mask token, and the output head of one view."""

    mask_token: Parameter                 # [1, d_in]
    encoder: list[GNNLayer]
    decoder: list[GNNLayer]
    remask_proj: Parameter                # [d_in, hidden]: token into code space
    head: Parameter                       # [hidden, d_model]
    hidden: int = field(default=0)


def init_mae_params(d_in: int, hidden: int, d_model: int, enc_layers: int,
                    dec_layers: int, enc_kind: str, dec_kind: str,
                    rng: np.random.Generator, pset: ParameterSet, prefix: str,
                    dtype=np.float32) -> MAEParams:
    if enc_layers < 1 or dec_layers < 1:
        raise GCHGNNError("encoder and decoder need at least one layer each")
    encoder = []
    d = d_in
    for i in range(enc_layers):
        encoder.append(_make_layer(enc_kind, d, hidden, rng, pset,
                                   f"{prefix}.enc{i}", dtype))
        d = hidden
    decoder = []
    for i in range(dec_layers):
        decoder.append(_make_layer(dec_kind, hidden, hidden, rng, pset,
                                   f"{prefix}.dec{i}", dtype))
    return MAEParams(
        mask_token=pset.new(f"{prefix}.mask_token", "xavier-uniform", (1, d_in), rng,
                            dtype=dtype),
        encoder=encoder,
        decoder=decoder,
        remask_proj=pset.new(f"{prefix}.remask_proj", "xavier-uniform", (d_in, hidden),
                             rng, dtype=dtype),
        head=pset.new(f"{prefix}.head", "xavier-uniform", (hidden, d_model), rng,
                      dtype=dtype),
        hidden=hidden,
    )


def encode(rt: ViewRuntime, x_masked: Tensor, params: MAEParams) -> Tensor:
    h = x_masked
    for layer in params.encoder:
        h = layer.forward(rt, h)
    return h


def remask_decode(rt: ViewRuntime, h: Tensor, remask_set: np.ndarray,
                  params: MAEParams) -> Tensor:
    """Re-hide `remask_set` rows of the code with the projected token,
    run the decoder stack, and map back to the shared dimension."""
    token_hidden = diff.matmul(params.mask_token, params.remask_proj)
    h_tilde = _apply_mask_tensor(h, remask_set, token_hidden)
    out = h_tilde
    for layer in params.decoder:
        out = layer.forward(rt, out)
    return diff.matmul(out, params.head)


def _apply_mask_tensor(x: Tensor, node_set: np.ndarray, token: Tensor) -> Tensor:
    node_set = np.asarray(node_set, dtype=np.int64)
    if node_set.size == 0:
        return x
    keep = np.ones((x.shape[0], 1), dtype=x.value.dtype)
    keep[node_set] = 0.0
    kept = diff.elementwise_mul(x, constant(keep))
    token_rows = diff.matmul(constant(1.0 - keep), token)
    return diff.add(kept, token_rows)


# ---------------------------------------------------------------------------
# semantic fusion and reconstruction loss
# ---------------------------------------------------------------------------

@dataclass
class SemanticAttentionParams:
    w: Parameter      # [d, d]
    b: Parameter      # [1, d]
    q: Parameter      # [d, 1]


def init_semantic_params(d: int, rng: np.random.Generator, pset: ParameterSet,
                         prefix: str = "semantic", dtype=np.float32) -> SemanticAttentionParams:
    return SemanticAttentionParams(
        w=pset.new(f"{prefix}.w", "xavier-uniform", (d, d), rng, dtype=dtype),
        b=pset.new(f"{prefix}.b", "zeros", (1, d), rng, dtype=dtype),
        q=pset.new(f"{prefix}.q", "xavier-uniform", (d, 1), rng, dtype=dtype),
    )


def semantic_attention(views: list[Tensor], params: SemanticAttentionParams) -> Tensor:
    """Softmax weights [1, M] over the views: each view scored by the mean
    over nodes of q^T tanh(W h + b)."""
    if not views:
        raise GCHGNNError("semantic attention needs at least one view")
    scores = []
    for h in views:
        t = diff.tanh(diff.add(diff.matmul(h, params.w), params.b))
        scores.append(diff.mean_all(diff.matmul(t, params.q)))
    stacked = diff.concat_rows(scores)        # [M, 1]
    return diff.row_softmax(diff.transpose(stacked))


def fuse_views(views: list[Tensor], gamma: Tensor) -> Tensor:
    """Weighted sum of the view embeddings with weights gamma [1, M]."""
    if gamma.shape != (1, len(views)):
        raise GCHGNNError(f"gamma shape {gamma.shape} for {len(views)} views")
    gcol = diff.transpose(gamma)
    fused = None
    for j, h in enumerate(views):
        gj = diff.gather_rows(gcol, [j])      # [1, 1]
        term = diff.elementwise_mul(h, gj)
        fused = term if fused is None else diff.add(fused, term)
    return fused


def generative_loss(h0_target: Tensor, h2: Tensor, mask_set: np.ndarray) -> Tensor:
    """Mean over masked rows of the squared difference, summed over dims;
    an empty mask set gives 0."""
    mask_set = np.asarray(mask_set, dtype=np.int64)
    if h0_target.shape != h2.shape:
        raise GCHGNNError(f"shape mismatch {h0_target.shape} vs {h2.shape}")
    if mask_set.size == 0:
        return constant(np.zeros((1, 1), dtype=h2.value.dtype))
    d = diff.sub(diff.gather_rows(h0_target, mask_set), diff.gather_rows(h2, mask_set))
    return diff.mean_all(diff.row_sum(diff.elementwise_mul(d, d)))
