import numpy as np
import pytest

from gchgnn.diff import Parameter, ParameterSet, Tensor
from gchgnn.errors import EmptyNeighborhood
from gchgnn.gradcheck import DEFAULT_TOLERANCE, finite_difference_check
from gchgnn.hetero_graph import HeteroGraph, Relation
from gchgnn.schema_encoder import (
    SchemaEncoderParams,
    init_schema_params,
    project_all,
    relation_attention,
    schema_forward,
)
from gchgnn.selfcheck import check_schema_attention, schema_attention_oracle

from conftest import make_toy_graph

import scipy.sparse as sp


def _params_for(g, dim, seed=0, dtype=np.float64):
    pset = ParameterSet()
    return init_schema_params(g, dim, np.random.default_rng(seed), pset, dtype=dtype), pset


def _elu(x):
    return np.where(x > 0, x, np.exp(np.minimum(x, 0)) - 1.0)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_identity_projection_returns_input(toy_graph):
    params, _ = _params_for(toy_graph, 4)
    for t in params.projections:
        params.projections[t].value = np.eye(4)
    h0 = project_all(toy_graph, params, dtype=np.float64)
    for t in ("paper", "author", "subject"):
        assert np.allclose(h0[t].value, toy_graph.features(t))


def test_zero_features_project_to_zero():
    g = make_toy_graph()
    for t in g.features_by_type:
        g.features_by_type[t] = np.zeros_like(g.features_by_type[t])
    params, _ = _params_for(g, 4)
    h0 = project_all(g, params, dtype=np.float64)
    for t in h0:
        assert not h0[t].value.any()


def test_projection_gradient_matches_fd(toy_graph):
    params, pset = _params_for(toy_graph, 3)
    leaves = list(pset)

    def build():
        h0 = project_all(toy_graph, params, dtype=np.float64)
        h1 = schema_forward(toy_graph, params, h0, "paper")
        import gchgnn.diff as diff
        return diff.mean_all(diff.elementwise_mul(h1, h1))

    assert finite_difference_check(build, leaves) < DEFAULT_TOLERANCE


# ---------------------------------------------------------------------------
# relation attention
# ---------------------------------------------------------------------------

def test_identical_neighbors_get_uniform_weights():
    rng = np.random.default_rng(1)
    anchor = Tensor(rng.normal(size=(1, 5)))
    nb = Tensor(np.tile(rng.normal(size=(1, 5)), (4, 1)))
    attn = Parameter("a", rng.normal(size=(10, 1)))
    w = relation_attention(anchor, nb, attn).value
    assert np.allclose(w, 0.25, atol=1e-6)


def test_single_neighbor_gets_weight_one():
    rng = np.random.default_rng(2)
    w = relation_attention(Tensor(rng.normal(size=(1, 3))),
                           Tensor(rng.normal(size=(1, 3))),
                           Parameter("a", rng.normal(size=(6, 1)))).value
    assert np.allclose(w, 1.0)


def test_no_neighbors_raises():
    rng = np.random.default_rng(3)
    with pytest.raises(EmptyNeighborhood):
        relation_attention(Tensor(rng.normal(size=(1, 3))),
                           Tensor(np.zeros((0, 3))),
                           Parameter("a", rng.normal(size=(6, 1))))


def test_attention_matches_exp_normalize_oracle():
    check_schema_attention(seed=5, tol=1e-6)


def test_attention_weights_positive_and_sum_to_one():
    rng = np.random.default_rng(9)
    for m in (1, 3, 7):
        w = relation_attention(Tensor(rng.normal(size=(1, 4))),
                               Tensor(rng.normal(size=(m, 4))),
                               Parameter("a", rng.normal(size=(8, 1)))).value
        assert (w > 0).all()
        assert abs(w.sum() - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# full forward
# ---------------------------------------------------------------------------

def _tiny_graph(pa_edges, n_papers=3, n_authors=2):
    type_of = np.array([0] * n_papers + [1] * n_authors, dtype=np.int32)
    rows = [e[0] for e in pa_edges]
    cols = [e[1] for e in pa_edges]
    pa = sp.csr_matrix((np.ones(len(rows), dtype=bool), (rows, cols)),
                       shape=(n_papers, n_authors))
    rng = np.random.default_rng(4)
    feats = {"paper": rng.normal(size=(n_papers, 3)).astype(np.float32),
             "author": rng.normal(size=(n_authors, 3)).astype(np.float32)}
    return HeteroGraph(["paper", "author"], type_of,
                       [Relation("PA", "paper", "author"), Relation("PP", "paper", "paper")],
                       {"PA": pa, "PP": sp.csr_matrix((n_papers, n_papers), dtype=bool)},
                       feats)


def test_single_neighbor_anchor_gets_elu_of_neighbor():
    g = _tiny_graph([(0, 0)])
    params, _ = _params_for(g, 4)
    h0 = project_all(g, params, dtype=np.float64)
    h1 = schema_forward(g, params, h0, "paper")
    assert np.allclose(h1.value[0], _elu(h0["author"].value[0]), atol=1e-9)
    # papers 1 and 2 are isolated: ELU(0) = 0 keeps rows aligned
    assert np.allclose(h1.value[1], 0.0)
    assert np.allclose(h1.value[2], 0.0)


def test_two_identical_neighbors_match_single():
    g1 = _tiny_graph([(0, 0)], n_authors=2)
    g2 = _tiny_graph([(0, 0), (0, 1)], n_authors=2)
    g2.features_by_type["author"] = np.tile(g1.features("author")[0], (2, 1))
    g1.features_by_type["author"] = g2.features_by_type["author"].copy()
    params, _ = _params_for(g1, 4)
    h0_1 = project_all(g1, params, dtype=np.float64)
    h0_2 = project_all(g2, params, dtype=np.float64)
    out1 = schema_forward(g1, params, h0_1, "paper").value[0]
    out2 = schema_forward(g2, params, h0_2, "paper").value[0]
    assert np.allclose(out1, out2, atol=1e-9)


def test_forward_matches_dense_per_anchor_oracle(toy_graph):
    params, _ = _params_for(toy_graph, 4, seed=11)
    h0 = project_all(toy_graph, params, dtype=np.float64)
    h1 = schema_forward(toy_graph, params, h0, "paper").value

    h0v = {t: h0[t].value for t in h0}
    for e in range(5):
        nb = toy_graph.one_hop_neighbors(e)
        agg_sum = np.zeros(4)
        n_rel = 0
        for rel_name, nbs in nb.items():
            rel = toy_graph.relation(rel_name)
            nb_type = rel.dst_type if rel.src_type == "paper" else rel.src_type
            nb_local = [toy_graph.local_id(w) for w in nbs]
            nb_h = h0v[nb_type][nb_local]
            alpha = schema_attention_oracle(
                h0v["paper"][e], nb_h, params.attention[rel_name].value, 0.2)
            agg_sum += alpha @ nb_h
            n_rel += 1
        expected = _elu(agg_sum / max(n_rel, 1))
        assert np.allclose(h1[e], expected, atol=1e-5), f"anchor {e}"


def test_neighbor_relabeling_leaves_h1_unchanged(toy_graph):
    # permute the author block (globals 5..7) and remap PA accordingly
    g1 = make_toy_graph()
    perm = np.array([2, 0, 1])  # author local relabeling
    pa = g1.adjacency["PA"].toarray()
    pa2 = pa[:, np.argsort(perm)]
    g2 = make_toy_graph()
    g2.adjacency["PA"] = sp.csr_matrix(pa2)
    g2.features_by_type["author"] = g1.features("author")[np.argsort(perm)]

    params, _ = _params_for(g1, 4, seed=7)
    out1 = schema_forward(g1, params, project_all(g1, params, dtype=np.float64),
                          "paper").value
    out2 = schema_forward(g2, params, project_all(g2, params, dtype=np.float64),
                          "paper").value
    assert np.allclose(out1, out2, atol=1e-6)


def test_graph_without_target_relations_gives_zero_rows():
    g = _tiny_graph([])
    params, _ = _params_for(g, 4)
    h0 = project_all(g, params, dtype=np.float64)
    h1 = schema_forward(g, params, h0, "author")
    assert h1.value.shape == (2, 4)


def test_schema_params_shapes(toy_graph):
    params, pset = _params_for(toy_graph, 6)
    assert set(params.projections) == {"paper", "author", "subject"}
    assert set(params.attention) == {"PA", "PS"}
    for t, p in params.projections.items():
        assert p.value.shape == (toy_graph.features(t).shape[1], 6)
    for p in params.attention.values():
        assert p.value.shape == (12, 1)
    assert len(pset) == 5
