"""End-to-end float64 gradient-check cases through the full model paths.

Each case wires a tiny planted-community graph through the actual encoder
and loss code and exposes (name, build, leaves) for central-difference
checking: the schema attention path, the masked-autoencoder path per view
(including the mask token), semantic fusion, every objective term, and the
combined training losses.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import diff
from .diff import ParameterSet, Tensor, constant
from .hetero_graph import MetaPath, build_view
from .losses import (
    LossWeights,
    bpr_loss,
    hcl_total,
    inter_loss,
    multiview_sce,
    sce_loss,
)
from .metapath_encoder import (
    ViewRuntime,
    apply_mask,
    encode,
    fuse_views,
    generative_loss,
    init_mae_params,
    init_semantic_params,
    remask_decode,
    semantic_attention,
)
from .evaluate import interaction_norm, lightgcn_propagate
from .sampler import SampleSets
from .schema_encoder import init_schema_params, project_all, schema_forward
from .synthetic import SyntheticSpec, synthetic_graph


def _scalarize(t: Tensor, rng: np.random.Generator) -> Tensor:
    w = constant(rng.uniform(-1.0, 1.0, size=t.shape))
    return diff.mean_all(diff.elementwise_mul(t, w))


def build_gradcheck_cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    spec = SyntheticSpec(n_target=6, n_aux_per_type=3, n_communities=2,
                         intra_edge_prob=0.9, inter_edge_prob=0.3,
                         feature_dim=3, feature_noise_sigma=0.5, seed=seed + 3)
    g = synthetic_graph(spec)
    dim = 4
    dt = np.float64

    pap = MetaPath.parse("PAP", "PA,~PA")
    psp = MetaPath.parse("PSP", "PS,~PS")
    views = [build_view(g, pap), build_view(g, psp)]
    runtimes = [ViewRuntime.from_view(v, dtype=dt) for v in views]
    feats = [constant(v.features, dtype=dt) for v in views]

    pset = ParameterSet()
    schema = init_schema_params(g, dim, rng, pset, dtype=dt)
    maes = [
        init_mae_params(spec.feature_dim, dim, dim, 1, 1, "gcn", "gat",
                        rng, pset, prefix=f"mae{i}", dtype=dt)
        for i in range(2)
    ]
    semantic = init_semantic_params(dim, rng, pset, prefix="sem", dtype=dt)
    all_params = list(pset)

    mask_set = np.array([0, 2, 4], dtype=np.int64)
    remask_set = np.array([1, 3], dtype=np.int64)
    intra_set = np.array([0, 1, 2, 3], dtype=np.int64)
    batch = np.arange(6, dtype=np.int64)
    positives = {0: np.array([1, 2]), 1: np.array([0]), 2: np.array([0, 3]),
                 3: np.array([2]), 4: np.array([5]), 5: np.array([4])}
    sets = SampleSets(positives=positives, batch=batch, intra_set=intra_set)
    weights = LossWeights()

    schema_params = list(schema.projections.values()) + list(schema.attention.values())
    mae_params = [p for p in all_params if p.name.startswith("mae")]
    sem_params = [semantic.w, semantic.b, semantic.q]

    def forward_h1():
        h0 = project_all(g, schema, dtype=dt)
        return h0, schema_forward(g, schema, h0, "paper")

    def forward_views():
        recon = []
        for f, rt, mae in zip(feats, runtimes, maes):
            xm = apply_mask(f, mask_set, mae.mask_token)
            h = encode(rt, xm, mae)
            recon.append(remask_decode(rt, h, remask_set, mae))
        return recon

    def forward_h2():
        recon = forward_views()
        gamma = semantic_attention(recon, semantic)
        return fuse_views(recon, gamma), recon

    cases = []

    w1 = _scalarize
    rng_sc = np.random.default_rng(seed + 100)
    sc_h1 = constant(rng_sc.uniform(-1, 1, size=(6, dim)))
    cases.append((
        "pipeline_schema_attention",
        lambda: diff.mean_all(diff.elementwise_mul(forward_h1()[1], sc_h1)),
        schema_params,
    ))

    sc_h2 = constant(rng_sc.uniform(-1, 1, size=(6, dim)))
    cases.append((
        "pipeline_mae_fusion",
        lambda: diff.mean_all(diff.elementwise_mul(forward_h2()[0], sc_h2)),
        mae_params + sem_params,
    ))

    def build_gen():
        h0, _ = forward_h1()
        h2, _ = forward_h2()
        return generative_loss(h0["paper"], h2, mask_set)

    cases.append(("pipeline_generative_loss", build_gen, all_params))

    def build_intra():
        recon = forward_views()
        return multiview_sce(recon, intra_set, weights.eta)

    cases.append(("pipeline_intra_sce", build_intra, mae_params))

    def build_inter():
        _, h1 = forward_h1()
        h2, _ = forward_h2()
        return inter_loss(h1, h2, sets, weights.view_balance, weights.tau)

    cases.append(("pipeline_inter_infonce", build_inter, all_params))

    def build_combined():
        h0, h1 = forward_h1()
        recon = forward_views()
        gamma = semantic_attention(recon, semantic)
        h2 = fuse_views(recon, gamma)
        l_gen = generative_loss(h0["paper"], h2, mask_set)
        l_intra = multiview_sce(recon, intra_set, weights.eta)
        l_inter = inter_loss(h1, h2, sets, weights.view_balance, weights.tau)
        return hcl_total(l_intra, l_inter, l_gen, weights)

    cases.append(("pipeline_hcl_combined", build_combined, all_params))

    # ranking side: propagation over a small bipartite matrix plus BPR
    bip_rng = np.random.default_rng(seed + 7)
    inter_mat = (bip_rng.random((5, 6)) < 0.4)
    inter_mat[inter_mat.sum(axis=1) == 0, 0] = True
    norm = interaction_norm(sp.csr_matrix(inter_mat), dtype=dt)
    lset = ParameterSet()
    eu = lset.new("eu", "xavier-uniform", (5, dim), bip_rng, dtype=dt)
    ei = lset.new("ei", "xavier-uniform", (6, dim), bip_rng, dtype=dt)
    triples = np.array([[0, 0, 3], [1, 2, 4], [2, 1, 5], [4, 0, 2]], dtype=np.int64)

    def build_bpr():
        u, i = lightgcn_propagate(norm, eu, ei, layers=2)
        return bpr_loss(u, i, triples)

    cases.append(("pipeline_lightgcn_bpr", build_bpr, [eu, ei]))

    def build_sce_direct():
        recon = forward_views()
        return sce_loss(recon[0], recon[1], intra_set, 3.0)

    cases.append(("pipeline_sce_eta3", build_sce_direct, mae_params))

    return cases
