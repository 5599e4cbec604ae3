"""Independent brute-force oracles and the equivalence checks built on them.

Each oracle recomputes a quantity by a deliberately different algorithm
(explicit path enumeration, scalar double loops in float64, dense matrix
arithmetic) so the production path can be checked against it. The `check_*`
functions power the `selftest` CLI subcommand and the acceptance suite.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .hetero_graph import HeteroGraph, MetaPath, Relation, compose_metapath_counts


# ---------------------------------------------------------------------------
# graph oracles
# ---------------------------------------------------------------------------

def enumerate_metapath_counts(g: HeteroGraph, mp: MetaPath) -> np.ndarray:
    """Dense path-instance counts by walking every instance recursively."""
    target, steps = mp.resolve(g)
    n = g.node_count_by_type[target]
    neighbors_per_step = []
    for rel, reverse in steps:
        adj = g.adjacency[rel.name]
        m = adj.T.tocsr() if reverse else adj
        neighbors_per_step.append(
            [m.indices[m.indptr[i]:m.indptr[i + 1]].tolist() for i in range(m.shape[0])])

    counts = np.zeros((n, n), dtype=np.int64)

    def walk(node: int, depth: int, start: int) -> None:
        if depth == len(neighbors_per_step):
            counts[start, node] += 1
            return
        for nxt in neighbors_per_step[depth][node]:
            walk(nxt, depth + 1, start)

    for start in range(n):
        walk(start, 0, start)
    np.fill_diagonal(counts, 0)
    return counts


def random_hin(rng: np.random.Generator, max_nodes: int = 30
               ) -> tuple[HeteroGraph, list[MetaPath]]:
    """Small random typed graph plus 1-2 valid meta-paths over it."""
    while True:
        n_types = int(rng.integers(2, 4))
        type_names = [f"t{i}" for i in range(n_types)]
        counts = rng.integers(2, 9, size=n_types)
        while counts.sum() > max_nodes:
            counts[rng.integers(n_types)] = max(2, counts[rng.integers(n_types)] - 2)
        type_of = np.concatenate([np.full(c, i, dtype=np.int32)
                                  for i, c in enumerate(counts)])

        n_rel = int(rng.integers(2, 4))
        relations = []
        adjacency = {}
        for r in range(n_rel):
            st = type_names[rng.integers(n_types)]
            dt = type_names[rng.integers(n_types)]
            name = f"R{r}"
            relations.append(Relation(name, st, dt))
            ns = int(counts[type_names.index(st)])
            nd = int(counts[type_names.index(dt)])
            dense = rng.random((ns, nd)) < 0.3
            if st == dt:
                np.fill_diagonal(dense, False)
            adjacency[name] = sp.csr_matrix(dense)

        g = HeteroGraph(type_names, type_of, relations, adjacency, {})

        # assemble out-and-back meta-paths and one random 3-step chain
        mps: list[MetaPath] = []
        for rel in relations:
            cand = MetaPath(f"{rel.name}ob", ((rel.name, False), (rel.name, True)))
            try:
                cand.resolve(g)
            except Exception:
                continue
            mps.append(cand)
            if len(mps) == 2:
                break
        for _ in range(20):
            if len(mps) >= 2:
                break
            picks = [relations[rng.integers(n_rel)] for _ in range(3)]
            dirs = [bool(rng.integers(2)) for _ in range(3)]
            cand = MetaPath("mp3", tuple((p.name, dv) for p, dv in zip(picks, dirs)))
            try:
                cand.resolve(g)
            except Exception:
                continue
            mps.append(cand)
        if mps:
            return g, mps


def check_metapath_composition(n_graphs: int = 100, seed: int = 0) -> int:
    """Sparse-product composition vs explicit path enumeration; returns the
    number of (graph, meta-path) cases compared. Raises on any mismatch."""
    rng = np.random.default_rng(seed)
    cases = 0
    for _ in range(n_graphs):
        g, mps = random_hin(rng)
        for mp in mps:
            oracle = enumerate_metapath_counts(g, mp)
            got = compose_metapath_counts(g, mp).toarray()
            if not np.array_equal(oracle, got):
                raise AssertionError(f"meta-path composition mismatch for {mp}")
            cases += 1
    return cases


# ---------------------------------------------------------------------------
# scalar float64 loss oracles
# ---------------------------------------------------------------------------

def cosine_oracle(x: np.ndarray, z: np.ndarray) -> float:
    nx = float(np.sqrt(np.sum(np.float64(x) ** 2)))
    nz = float(np.sqrt(np.sum(np.float64(z) ** 2)))
    if nx == 0.0 or nz == 0.0:
        return 0.0
    return float(np.dot(np.float64(x), np.float64(z)) / (nx * nz))


def sce_oracle(x: np.ndarray, z: np.ndarray, nodes, eta: float) -> float:
    total = 0.0
    for v in nodes:
        total += (1.0 - cosine_oracle(x[v], z[v])) ** eta
    return total / len(nodes)


def info_nce_oracle(h_a: np.ndarray, h_b: np.ndarray, positives: dict[int, np.ndarray],
                    batch: np.ndarray, tau: float) -> float:
    """Scalar double-loop InfoNCE in float64; anchors without positives skipped."""
    batch = list(batch)
    losses = []
    for i, pos in positives.items():
        pos = [p for p in pos]
        if not pos:
            continue
        num = 0.0
        den = 0.0
        for k in batch:
            if k == i:
                continue
            s = np.exp(cosine_oracle(h_a[i], h_b[k]) / tau)
            den += s
            if k in pos:
                num += s
        losses.append(-np.log(num / den))
    return float(np.mean(losses))


def bpr_oracle(user_emb: np.ndarray, item_emb: np.ndarray, triples) -> float:
    total = 0.0
    for (i, j, k) in triples:
        xj = float(np.dot(np.float64(user_emb[i]), np.float64(item_emb[j])))
        xk = float(np.dot(np.float64(user_emb[i]), np.float64(item_emb[k])))
        total += -np.log(1.0 / (1.0 + np.exp(-(xj - xk))))
    return total / len(triples)


# ---------------------------------------------------------------------------
# metric oracles
# ---------------------------------------------------------------------------

def f1_oracle(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> tuple[float, float]:
    """(macro_f1, micro_f1) from an explicitly assembled confusion matrix."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    f1s = []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0)
    macro = float(np.mean(f1s))
    micro = float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0
    return macro, micro


def ranking_oracle(ranked_items: list[int], relevant: set[int], k: int) -> tuple[float, float]:
    """(recall@k, ndcg@k) for one user given a full ranking."""
    topk = ranked_items[:k]
    hits = sum(1 for it in topk if it in relevant)
    recall = hits / len(relevant) if relevant else 0.0
    dcg = 0.0
    for pos, it in enumerate(topk, start=1):
        if it in relevant:
            dcg += 1.0 / np.log2(pos + 1)
    ideal = sum(1.0 / np.log2(pos + 1) for pos in range(1, min(k, len(relevant)) + 1))
    ndcg = dcg / ideal if ideal > 0 else 0.0
    return float(recall), float(ndcg)


# ---------------------------------------------------------------------------
# dense layer oracles
# ---------------------------------------------------------------------------

def gcn_layer_oracle(adj: np.ndarray, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Dense D^{-1/2}(A+I)D^{-1/2} X W with ELU, all in float64."""
    a = np.float64(adj) + np.eye(adj.shape[0])
    d = a.sum(axis=1)
    dinv = 1.0 / np.sqrt(d)
    norm = dinv[:, None] * a * dinv[None, :]
    out = norm @ np.float64(x) @ np.float64(w)
    return np.where(out > 0, out, np.exp(np.minimum(out, 0.0)) - 1.0)


def lightgcn_oracle(interactions: np.ndarray, user_emb: np.ndarray, item_emb: np.ndarray,
                    layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense symmetric-normalized propagation, mean over layer outputs 0..layers."""
    a = np.float64(interactions)
    du = np.maximum(a.sum(axis=1), 1e-12)
    di = np.maximum(a.sum(axis=0), 1e-12)
    norm = a / np.sqrt(du)[:, None] / np.sqrt(di)[None, :]
    u = np.float64(user_emb)
    i = np.float64(item_emb)
    u_acc, i_acc = u.copy(), i.copy()
    for _ in range(layers):
        u, i = norm @ i, norm.T @ u
        u_acc += u
        i_acc += i
    return u_acc / (layers + 1), i_acc / (layers + 1)


def schema_attention_oracle(anchor_h: np.ndarray, neighbor_h: np.ndarray,
                            attn: np.ndarray, slope: float) -> np.ndarray:
    """Per-neighbor attention weights via explicit exp-normalize in float64."""
    scores = []
    for w_row in np.float64(neighbor_h):
        cat = np.concatenate([np.float64(anchor_h).ravel(), w_row])
        s = float(cat @ np.float64(attn).ravel())
        scores.append(s if s > 0 else slope * s)
    scores = np.array(scores)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def semantic_scores_oracle(views: list[np.ndarray], w: np.ndarray, b: np.ndarray,
                           q: np.ndarray) -> np.ndarray:
    """Per-view pre-softmax scores by an explicit loop over nodes."""
    out = []
    for h in views:
        total = 0.0
        for row in np.float64(h):
            total += float(np.float64(q).ravel()
                           @ np.tanh(np.float64(w).T @ row + np.float64(b).ravel()))
        out.append(total / h.shape[0])
    return np.array(out)


# ---------------------------------------------------------------------------
# equivalence checks (used by the selftest subcommand and acceptance tests)
# ---------------------------------------------------------------------------

def check_composition(seed: int = 0) -> str:
    cases = check_metapath_composition(n_graphs=100, seed=seed)
    return f"{cases} graph/meta-path cases, exact"


def check_contrastive_losses(seed: int = 0, tol: float = 1e-6) -> str:
    from .losses import info_nce_directional, sce_loss
    from .diff import Tensor

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        n, d = 30, 8
        ha = rng.normal(size=(n, d)).astype(np.float32)
        hb = rng.normal(size=(n, d)).astype(np.float32)
        positives = {}
        for i in range(n):
            k = int(rng.integers(1, 6))
            cand = np.setdiff1d(rng.integers(0, n, size=k + 4), [i])[:k]
            positives[i] = np.sort(cand) if cand.size else np.array([int((i + 1) % n)])
        batch = np.arange(n)
        tau = float(rng.uniform(0.2, 1.0))
        got = info_nce_directional(Tensor(ha), Tensor(hb), positives, batch, tau).item()
        want = info_nce_oracle(ha, hb, positives, batch, tau)
        worst = max(worst, abs(got - want))

        nodes = np.sort(rng.choice(n, size=12, replace=False))
        eta = float(rng.integers(1, 4))
        got = sce_loss(Tensor(ha), Tensor(hb), nodes, eta).item()
        want = sce_oracle(ha, hb, nodes, eta)
        worst = max(worst, abs(got - want))
    assert worst < tol, f"contrastive loss mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_bpr(seed: int = 0, tol: float = 1e-6) -> str:
    from .losses import bpr_loss
    from .diff import Tensor

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        u = rng.normal(size=(10, 6)).astype(np.float32)
        v = rng.normal(size=(12, 6)).astype(np.float32)
        triples = np.stack([rng.integers(0, 10, 20), rng.integers(0, 12, 20),
                            rng.integers(0, 12, 20)], axis=1)
        got = bpr_loss(Tensor(u), Tensor(v), triples).item()
        want = bpr_oracle(u, v, triples)
        worst = max(worst, abs(got - want))
    assert worst < tol, f"bpr mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_gcn_layer(seed: int = 0, tol: float = 1e-5) -> str:
    import scipy.sparse as sp

    from .diff import Parameter, Tensor
    from .metapath_encoder import GNNLayer, ViewRuntime

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        n, d_in, d_out = 20, 6, 5
        adj = sp.csr_matrix(np.triu(rng.random((n, n)) < 0.2, 1))
        adj = (adj + adj.T).astype(bool)
        x = rng.normal(size=(n, d_in)).astype(np.float32)
        w = rng.normal(scale=0.5, size=(d_in, d_out)).astype(np.float32)
        rt = ViewRuntime.from_adjacency(adj)
        got = GNNLayer("gcn", Parameter("w", w)).forward(rt, Tensor(x)).value
        want = gcn_layer_oracle(adj.toarray(), x, w)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst < tol, f"gcn layer mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_lightgcn(seed: int = 0, tol: float = 1e-5) -> str:
    import scipy.sparse as sp

    from .diff import Tensor
    from .evaluate import interaction_norm, lightgcn_propagate

    rng = np.random.default_rng(seed)
    worst = 0.0
    for layers in (0, 1, 2, 3):
        a = rng.random((15, 12)) < 0.25
        a[a.sum(axis=1) == 0, 0] = True
        u = rng.normal(size=(15, 6)).astype(np.float32)
        v = rng.normal(size=(12, 6)).astype(np.float32)
        norm = interaction_norm(sp.csr_matrix(a))
        gu, gi = lightgcn_propagate(norm, Tensor(u), Tensor(v), layers)
        wu, wi = lightgcn_oracle(a, u, v, layers)
        worst = max(worst, float(np.max(np.abs(gu.value - wu))),
                    float(np.max(np.abs(gi.value - wi))))
    assert worst < tol, f"lightgcn mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_f1(seed: int = 0, tol: float = 1e-9) -> str:
    from .evaluate import f1_scores

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        n_classes = int(rng.integers(2, 6))
        y_true = rng.integers(0, n_classes, size=200)
        y_pred = rng.integers(0, n_classes, size=200)
        got = f1_scores(y_true, y_pred, n_classes)
        want = f1_oracle(y_true, y_pred, n_classes)
        worst = max(worst, abs(got[0] - want[0]), abs(got[1] - want[1]))
    assert worst < tol, f"f1 mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_ranking(seed: int = 0, tol: float = 1e-9) -> str:
    from .evaluate import rank_eval

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        n_u, n_i, k = 8, 30, 5
        uf = rng.normal(size=(n_u, 4))
        vf = rng.normal(size=(n_i, 4))
        train = {u: np.sort(rng.choice(n_i, size=4, replace=False)) for u in range(n_u)}
        test = {}
        for u in range(n_u):
            rest = np.setdiff1d(np.arange(n_i), train[u])
            test[u] = np.sort(rng.choice(rest, size=3, replace=False))
        got = rank_eval(uf, vf, train, test, k=k)
        recalls, ndcgs = [], []
        ids = np.arange(n_i)
        for u in range(n_u):
            scores = uf[u] @ vf.T
            scores[train[u]] = -np.inf
            ranked = list(ids[np.lexsort((ids, -scores))])
            r, nd = ranking_oracle(ranked, set(test[u].tolist()), k)
            recalls.append(r)
            ndcgs.append(nd)
        worst = max(worst, abs(got.recall_at_k - float(np.mean(recalls))),
                    abs(got.ndcg_at_k - float(np.mean(ndcgs))))
    assert worst < tol, f"ranking mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_schema_attention(seed: int = 0, tol: float = 1e-6) -> str:
    from .diff import Parameter, Tensor
    from .schema_encoder import relation_attention

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        d, m = 6, int(rng.integers(1, 8))
        anchor = rng.normal(size=(1, d)).astype(np.float32)
        nbs = rng.normal(size=(m, d)).astype(np.float32)
        attn = rng.normal(size=(2 * d, 1)).astype(np.float32)
        got = relation_attention(Tensor(anchor), Tensor(nbs),
                                 Parameter("a", attn), 0.2).value.ravel()
        want = schema_attention_oracle(anchor, nbs, attn, 0.2)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst < tol, f"schema attention mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def check_semantic_attention(seed: int = 0, tol: float = 1e-6) -> str:
    from .diff import Parameter, Tensor
    from .metapath_encoder import SemanticAttentionParams, semantic_attention

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        m, n, d = int(rng.integers(1, 5)), 12, 5
        views = [rng.normal(size=(n, d)).astype(np.float32) for _ in range(m)]
        w = rng.normal(size=(d, d)).astype(np.float32)
        b = rng.normal(size=(1, d)).astype(np.float32)
        q = rng.normal(size=(d, 1)).astype(np.float32)
        params = SemanticAttentionParams(Parameter("w", w), Parameter("b", b),
                                         Parameter("q", q))
        got = semantic_attention([Tensor(v) for v in views], params).value.ravel()
        scores = semantic_scores_oracle(views, w, b, q)
        e = np.exp(scores - scores.max())
        worst = max(worst, float(np.max(np.abs(got - e / e.sum()))))
    assert worst < tol, f"semantic attention mismatch {worst:.2e}"
    return f"max abs diff {worst:.1e}"


def all_checks():
    """(name, callable(seed) -> detail) pairs for every oracle equivalence."""
    return [
        ("metapath_composition", check_composition),
        ("contrastive_losses", check_contrastive_losses),
        ("bpr_loss", check_bpr),
        ("gcn_layer", check_gcn_layer),
        ("lightgcn_propagation", check_lightgcn),
        ("f1_scores", check_f1),
        ("ranking_metrics", check_ranking),
        ("schema_attention", check_schema_attention),
        ("semantic_attention", check_semantic_attention),
    ]
