"""Self-supervised training loops: node-level pretraining with the schema
and meta-path views, and link-prediction training where parameter-free
propagation over the interaction graph stands in for the schema view."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diff
from .diff import AdamState, ParameterSet, Tape, Tensor, adam_step, backward, constant
from .errors import Divergence, GCHGNNError, NoTestInteractions, NonFiniteValue
from .config import TrainConfig
from .evaluate import interaction_norm, lightgcn_propagate
from .hetero_graph import HeteroGraph, MetaPathView, build_view
from .losses import (
    LossWeights,
    bpr_loss,
    hcl_total,
    inter_loss,
    link_total,
    multiview_sce,
)
from .metapath_encoder import (
    MAEParams,
    ViewRuntime,
    apply_mask,
    encode,
    fuse_views,
    generative_loss,
    init_mae_params,
    init_semantic_params,
    make_mask_plan,
    remask_decode,
    semantic_attention,
)
from .sampler import (
    SampleSets,
    build_sample_sets,
    cached_location_embeddings,
    location_positives,
    metapath_degrees,
    semantic_positives,
)
from .schema_encoder import init_schema_params, project_all, schema_forward


@dataclass
class PretrainResult:
    h1: np.ndarray
    h2: np.ndarray
    params: ParameterSet
    losses: list[float]
    epoch_seconds: float | None
    diagnostics: dict = field(default_factory=dict)


def prepare_sample_sets(g: HeteroGraph, cfg: TrainConfig, target_type: str,
                        metapaths, cache_dir=None) -> SampleSets:
    """Location positives (walk embeddings over the first meta-path) plus
    semantic positives (meta-path co-occurrence), assembled into the
    anchor->positives map, with the intra-contrast node set by degree."""
    emb = cached_location_embeddings(
        g, metapaths[0], cfg.walks_per_node, cfg.walk_length, cfg.window,
        cfg.negatives_per_pair, cfg.mp2v_dim, cfg.mp2v_epochs, cfg.mp2v_lr,
        cfg.seed, cache_dir=cache_dir)
    loc = location_positives(emb, cfg.k_location)
    sem = semantic_positives(g, metapaths, cfg.k_semantic)
    degrees = metapath_degrees(g, metapaths)
    batch = np.arange(g.node_count_by_type[target_type], dtype=np.int64)
    return build_sample_sets(loc, sem, degrees, batch, cfg.intra_fraction)


def _mask_seeds(seed: int, epochs: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0xA5])
    return rng.integers(0, 2 ** 62, size=max(epochs, 1))


def _check_loss(value: float, epoch: int, parts: dict[str, float]) -> None:
    if not np.isfinite(value):
        detail = ", ".join(f"{k}={v:.4g}" for k, v in parts.items())
        raise Divergence(f"non-finite loss at epoch {epoch} ({detail})")


class _NodeModel:
    """Parameters and precomputed view runtimes for node-level training."""

    def __init__(self, g: HeteroGraph, cfg: TrainConfig, dtype=np.float32):
        if not cfg.metapaths:
            raise GCHGNNError("at least one meta-path is required")
        self.g = g
        self.cfg = cfg
        self.dtype = dtype
        self.target = cfg.target_type
        self.views: list[MetaPathView] = []
        for mp in cfg.metapaths:
            view = build_view(g, mp)
            if view.target_type != cfg.target_type:
                raise GCHGNNError(
                    f"meta-path {mp.name} targets {view.target_type!r}, "
                    f"config says {cfg.target_type!r}")
            self.views.append(view)
        self.runtimes = [ViewRuntime.from_view(v, dtype=dtype) for v in self.views]
        rng = np.random.default_rng([cfg.seed, 0x11])
        self.pset = ParameterSet()
        self.schema = init_schema_params(g, cfg.dim, rng, self.pset, dtype=dtype)
        d_in = self.views[0].features.shape[1]
        self.mae = [
            init_mae_params(d_in, cfg.dim, cfg.dim, cfg.encoder_layers,
                            cfg.decoder_layers, cfg.encoder_kind, cfg.decoder_kind,
                            rng, self.pset, prefix=f"mae.{v.metapath.name}", dtype=dtype)
            for v in self.views
        ]
        self.semantic = init_semantic_params(cfg.dim, rng, self.pset, dtype=dtype)
        self.features = [constant(v.features, dtype=dtype) for v in self.views]

    def forward(self, mask_set: np.ndarray, remask_set: np.ndarray
                ) -> tuple[Tensor, Tensor, Tensor, list[Tensor]]:
        """Returns (h1, h2, gen_target, per-view reconstructions)."""
        h0 = project_all(self.g, self.schema, dtype=self.dtype)
        h1 = schema_forward(self.g, self.schema, h0, self.target)
        recon = []
        for feats, rt, mae in zip(self.features, self.runtimes, self.mae):
            x_masked = apply_mask(feats, mask_set, mae.mask_token)
            h = encode(rt, x_masked, mae)
            recon.append(remask_decode(rt, h, remask_set, mae))
        gamma = semantic_attention(recon, self.semantic)
        h2 = fuse_views(recon, gamma)
        if self.cfg.gen_target_raw:
            target_h0 = self.features[0]
        else:
            target_h0 = h0[self.target]
        return h1, h2, target_h0, recon


def pretrain_node(g: HeteroGraph, cfg: TrainConfig, cache_dir=None) -> PretrainResult:
    """Full training loop over the combined objective; deterministic per
    (seed, config, dataset). Zero epochs return the initialized model's
    embeddings without touching the sampler."""
    weights = cfg.loss_weights()
    model = _NodeModel(g, cfg)
    n = g.node_count_by_type[cfg.target_type]
    diagnostics: dict = {}
    losses: list[float] = []
    epoch_times: list[float] = []

    sets = None
    if cfg.epochs > 0:
        sets = prepare_sample_sets(g, cfg, cfg.target_type, cfg.metapaths, cache_dir)
    seeds = _mask_seeds(cfg.seed, cfg.epochs)
    state = AdamState()
    best = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter() if cfg.timing else 0.0
        plan = make_mask_plan(n, cfg.mask_ratio, cfg.remask_ratio, int(seeds[epoch]))
        try:
            with Tape():
                h1, h2, target_h0, recon = model.forward(plan.mask_set, plan.remask_set)
                l_gen = generative_loss(target_h0, h2, plan.mask_set)
                if sets.intra_set.size and len(recon) >= 2:
                    l_intra = multiview_sce(recon, sets.intra_set, cfg.eta)
                else:
                    l_intra = constant(np.zeros((1, 1), dtype=h2.value.dtype))
                if weights.inter > 0:
                    l_inter = inter_loss(h1, h2, sets, cfg.view_balance, cfg.tau,
                                         diagnostics)
                else:
                    l_inter = constant(np.zeros((1, 1), dtype=h2.value.dtype))
                total = hcl_total(l_intra, l_inter, l_gen, weights)
                value = total.item()
                _check_loss(value, epoch, {"intra": l_intra.item(),
                                           "inter": l_inter.item(),
                                           "gen": l_gen.item()})
                backward(total, model.pset)
        except NonFiniteValue as exc:
            raise Divergence(f"epoch {epoch}: {exc}") from exc
        adam_step(model.pset, state, lr=cfg.lr)
        losses.append(value)
        if cfg.timing:
            epoch_times.append(time.perf_counter() - t0)
        if cfg.early_stop_patience > 0:
            if value < best - 1e-9:
                best = value
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break

    empty = np.empty(0, dtype=np.int64)
    h1, h2, _, _ = model.forward(empty, empty)
    return PretrainResult(
        h1=np.asarray(h1.value, dtype=np.float32),
        h2=np.asarray(h2.value, dtype=np.float32),
        params=model.pset,
        losses=losses,
        epoch_seconds=float(np.median(epoch_times)) if epoch_times else None,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# link prediction
# ---------------------------------------------------------------------------

@dataclass
class LinkSplit:
    """Per-user train/test item sets (local ids) over one interaction relation."""

    train: dict[int, np.ndarray]
    test: dict[int, np.ndarray]
    train_matrix: sp.csr_matrix


def split_interactions(interactions: sp.spmatrix, test_fraction: float,
                       seed: int) -> LinkSplit:
    """Hold out a fraction of each user's interactions (at least one kept
    for training; users with a single interaction contribute no test item)."""
    csr = interactions.tocsr()
    n_u, n_i = csr.shape
    train: dict[int, np.ndarray] = {}
    test: dict[int, np.ndarray] = {}
    rows, cols = [], []
    rng = np.random.default_rng([seed, 0x71])
    for u in range(n_u):
        items = csr.indices[csr.indptr[u]:csr.indptr[u + 1]]
        if items.size == 0:
            continue
        perm = rng.permutation(items)
        n_test = min(int(np.floor(test_fraction * items.size)), items.size - 1)
        te, tr = perm[:n_test], perm[n_test:]
        train[u] = np.sort(tr)
        if te.size:
            test[u] = np.sort(te)
        rows.extend([u] * tr.size)
        cols.extend(tr.tolist())
    mat = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(n_u, n_i))
    return LinkSplit(train=train, test=test, train_matrix=mat)


@dataclass
class LinkModel:
    user_final: np.ndarray
    item_final: np.ndarray
    params: ParameterSet
    split: LinkSplit
    losses: list[float]
    epoch_seconds: float | None
    user_type: str
    item_type: str


def _train_graph(g: HeteroGraph, relation: str, train_matrix: sp.csr_matrix,
                 transposed: bool) -> HeteroGraph:
    """Copy of g with the interaction relation reduced to its train edges."""
    adjacency = dict(g.adjacency)
    adjacency[relation] = (train_matrix.T.tocsr() if transposed else train_matrix).astype(bool)
    return HeteroGraph(g.type_names, g._type_of, g.relations, adjacency,
                       g.features_by_type, g.labels)


def _sample_bpr_triples(train_matrix: sp.csr_matrix, rng: np.random.Generator
                        ) -> np.ndarray:
    """One uniform negative item per observed (user, item) pair."""
    coo = train_matrix.tocoo()
    users = coo.row.astype(np.int64)
    pos = coo.col.astype(np.int64)
    n_items = train_matrix.shape[1]
    neg = rng.integers(0, n_items, size=users.size)
    dense_lookup = train_matrix.astype(bool)
    for _ in range(100):
        bad = np.asarray(dense_lookup[users, neg]).ravel()
        if not bad.any():
            break
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
    return np.stack([users, pos, neg], axis=1)


def train_link(g: HeteroGraph, cfg: TrainConfig, cache_dir=None) -> LinkModel:
    """Optimize the ranking objective plus the self-supervised losses, with
    LightGCN propagation over train interactions replacing the schema view.

    Meta-path views are built on the train-only graph; each declared
    meta-path contributes to the contrast losses of its own target type
    (user or item side)."""
    if not cfg.user_type or not cfg.item_type or not cfg.interaction_relation:
        raise GCHGNNError("link training needs user_type, item_type, interaction_relation")
    rel = g.relation(cfg.interaction_relation)
    if rel is None:
        raise GCHGNNError(f"unknown relation {cfg.interaction_relation!r}")
    if (rel.src_type, rel.dst_type) == (cfg.user_type, cfg.item_type):
        interactions = g.adjacency[rel.name].tocsr()
        transposed = False
    elif (rel.src_type, rel.dst_type) == (cfg.item_type, cfg.user_type):
        interactions = g.adjacency[rel.name].T.tocsr()
        transposed = True
    else:
        raise GCHGNNError(f"relation {rel.name!r} does not connect "
                          f"{cfg.user_type!r} and {cfg.item_type!r}")

    split = split_interactions(interactions, cfg.link_test_fraction, cfg.seed)
    g_train = _train_graph(g, rel.name, split.train_matrix, transposed)
    norm = interaction_norm(split.train_matrix)
    n_users = g.node_count_by_type[cfg.user_type]
    n_items = g.node_count_by_type[cfg.item_type]

    rng = np.random.default_rng([cfg.seed, 0x12])
    pset = ParameterSet()
    e_user = pset.new("link.user", "xavier-uniform", (n_users, cfg.dim), rng)
    e_item = pset.new("link.item", "xavier-uniform", (n_items, cfg.dim), rng)

    # group declared meta-paths per side and set up one MAE branch per side
    weights = cfg.loss_weights()
    sides = []
    for side_type, base in ((cfg.user_type, e_user), (cfg.item_type, e_item)):
        side_mps = []
        for mp in cfg.metapaths:
            if mp.resolve(g_train)[0] == side_type:
                side_mps.append(mp)
        if not side_mps:
            continue
        views = [build_view(g_train, mp) for mp in side_mps]
        runtimes = [ViewRuntime.from_view(v) for v in views]
        d_in = views[0].features.shape[1]
        mae = [init_mae_params(d_in, cfg.dim, cfg.dim, cfg.encoder_layers,
                               cfg.decoder_layers, cfg.encoder_kind, cfg.decoder_kind,
                               rng, pset, prefix=f"mae.{v.metapath.name}")
               for v in views]
        semantic = init_semantic_params(cfg.dim, rng, pset, prefix=f"semantic.{side_type}")
        sets = prepare_sample_sets(g_train, cfg, side_type, side_mps, cache_dir) \
            if cfg.epochs > 0 else None
        sides.append({
            "type": side_type, "base": base, "views": views, "runtimes": runtimes,
            "mae": mae, "semantic": semantic, "sets": sets,
            "features": [constant(v.features) for v in views],
            "n": g.node_count_by_type[side_type],
            "index": len(sides),
        })

    def side_hcl(side, h1_side, plan, diagnostics):
        recon = []
        for feats, rt, mae in zip(side["features"], side["runtimes"], side["mae"]):
            x_masked = apply_mask(feats, plan.mask_set, mae.mask_token)
            h = encode(rt, x_masked, mae)
            recon.append(remask_decode(rt, h, plan.remask_set, mae))
        gamma = semantic_attention(recon, side["semantic"])
        h2 = fuse_views(recon, gamma)
        l_gen = generative_loss(side["base"], h2, plan.mask_set)
        if side["sets"] is not None and side["sets"].intra_set.size and len(recon) >= 2:
            l_intra = multiview_sce(recon, side["sets"].intra_set, cfg.eta)
        else:
            l_intra = constant(np.zeros((1, 1), dtype=h2.value.dtype))
        if side["sets"] is not None and weights.inter > 0:
            l_inter = inter_loss(h1_side, h2, side["sets"], cfg.view_balance,
                                 cfg.tau, diagnostics)
        else:
            l_inter = constant(np.zeros((1, 1), dtype=h2.value.dtype))
        return hcl_total(l_intra, l_inter, l_gen, weights)

    diagnostics: dict = {}
    losses: list[float] = []
    epoch_times: list[float] = []
    seeds = _mask_seeds(cfg.seed, cfg.epochs)
    neg_rng = np.random.default_rng([cfg.seed, 0x13])
    state = AdamState()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter() if cfg.timing else 0.0
        triples = _sample_bpr_triples(split.train_matrix, neg_rng)
        try:
            with Tape():
                u_fin, i_fin = lightgcn_propagate(norm, e_user, e_item, cfg.link_layers)
                hcl_terms = []
                for side in sides:
                    plan = make_mask_plan(side["n"], cfg.mask_ratio, cfg.remask_ratio,
                                          int(seeds[epoch]) ^ side["index"])
                    h1_side = u_fin if side["type"] == cfg.user_type else i_fin
                    hcl_terms.append(side_hcl(side, h1_side, plan, diagnostics))
                if hcl_terms:
                    l_hcl = hcl_terms[0]
                    for t in hcl_terms[1:]:
                        l_hcl = diff.add(l_hcl, t)
                    l_hcl = diff.scalar_mul(l_hcl, 1.0 / len(hcl_terms))
                else:
                    l_hcl = constant(np.zeros((1, 1), dtype=np.float32))
                l_bpr = bpr_loss(u_fin, i_fin, triples)
                total = link_total(l_hcl, l_bpr, weights.hcl, weights.bpr)
                value = total.item()
                _check_loss(value, epoch, {"hcl": l_hcl.item(), "bpr": l_bpr.item()})
                backward(total, pset)
        except NonFiniteValue as exc:
            raise Divergence(f"epoch {epoch}: {exc}") from exc
        adam_step(pset, state, lr=cfg.lr)
        losses.append(value)
        if cfg.timing:
            epoch_times.append(time.perf_counter() - t0)

    u_fin, i_fin = lightgcn_propagate(norm, e_user, e_item, cfg.link_layers)
    return LinkModel(
        user_final=np.asarray(u_fin.value, dtype=np.float32),
        item_final=np.asarray(i_fin.value, dtype=np.float32),
        params=pset,
        split=split,
        losses=losses,
        epoch_seconds=float(np.median(epoch_times)) if epoch_times else None,
        user_type=cfg.user_type,
        item_type=cfg.item_type,
    )
