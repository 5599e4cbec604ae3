"""Downstream evaluation: linear probing of frozen embeddings, ranking
metrics for link prediction, and the JSON metrics report."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diff
from .diff import AdamState, Parameter, Tape, Tensor, adam_step, backward, constant
from .errors import GCHGNNError, InsufficientLabels, NoTestInteractions


@dataclass
class MetricsReport:
    """Evaluation summary; fields that do not apply to a run stay None.

    `epoch_seconds` is the median wall-clock seconds per training epoch and
    is only populated when timing was explicitly requested, so that default
    reports are byte-reproducible.
    """

    macro_f1_mean: float | None = None
    macro_f1_std: float | None = None
    micro_f1_mean: float | None = None
    micro_f1_std: float | None = None
    recall_at_k: float | None = None
    ndcg_at_k: float | None = None
    epoch_seconds: float | None = None
    losses: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "macro_f1_mean": self.macro_f1_mean,
            "macro_f1_std": self.macro_f1_std,
            "micro_f1_mean": self.micro_f1_mean,
            "micro_f1_std": self.micro_f1_std,
            "recall_at_k": self.recall_at_k,
            "ndcg_at_k": self.ndcg_at_k,
            "epoch_seconds": self.epoch_seconds,
            "losses": self.losses,
        }
        return json.dumps(payload)


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> tuple[float, float]:
    """(macro, micro) F1 over classes 0..n_classes-1; empty classes score 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    per_class = []
    for c in range(n_classes):
        tp = int(((y_pred == c) & (y_true == c)).sum())
        fp = int(((y_pred == c) & (y_true != c)).sum())
        fn = int(((y_pred != c) & (y_true == c)).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class.append(2 * precision * recall / (precision + recall)
                         if precision + recall else 0.0)
    macro = float(np.mean(per_class))
    micro = float((y_true == y_pred).mean()) if y_true.size else 0.0
    return macro, micro


def _train_softmax_probe(x: np.ndarray, y: np.ndarray, n_classes: int,
                         steps: int, lr: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch Adam on a single linear layer + softmax, float64."""
    d = x.shape[1]
    w = Parameter("probe.w", np.zeros((d, n_classes), dtype=np.float64))
    b = Parameter("probe.b", np.zeros((1, n_classes), dtype=np.float64))
    onehot = np.zeros((y.size, n_classes), dtype=np.float64)
    onehot[np.arange(y.size), y] = 1.0
    xt = constant(np.float64(x))
    oh = constant(onehot)
    state = AdamState()
    for _ in range(steps):
        with Tape(dtype=np.float64):
            logits = diff.add(diff.matmul(xt, w), b)
            logp = diff.row_log_softmax(logits)
            loss = diff.scalar_mul(diff.mean_all(diff.row_sum(
                diff.elementwise_mul(logp, oh))), -1.0)
            backward(loss, params=[w, b])
        adam_step([w, b], state, lr=lr)
    return w.value, b.value


def linear_probe(embeddings: np.ndarray, labels: np.ndarray, n_per_class: int,
                 repeats: int = 10, seed: int = 0, steps: int = 200,
                 lr: float = 1e-2) -> MetricsReport:
    """Train a linear classifier on frozen embeddings with n_per_class
    labeled nodes per class; evaluate macro/micro F1 on the held-out
    labeled nodes; repeat with reseeded splits and report mean and std.

    `labels` uses -1 for unlabeled nodes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.flatnonzero(labels >= 0)
    if labeled.size == 0:
        raise InsufficientLabels("no labeled nodes")
    classes = np.unique(labels[labeled])
    n_classes = int(classes.max()) + 1
    if classes.size == 1:
        warnings.warn("single-class labels: micro-F1 is trivially 1", UserWarning)
    for c in classes:
        if (labels == c).sum() < n_per_class:
            raise InsufficientLabels(
                f"class {c} has {(labels == c).sum()} labeled nodes, need {n_per_class}")

    macros, micros = [], []
    for rep in range(repeats):
        rng = np.random.default_rng([seed, rep])
        train_idx = []
        for c in classes:
            ids = np.flatnonzero(labels == c)
            train_idx.append(rng.permutation(ids)[:n_per_class])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.setdiff1d(labeled, train_idx)
        w, b = _train_softmax_probe(embeddings[train_idx], labels[train_idx],
                                    n_classes, steps, lr)
        pred = np.argmax(np.float64(embeddings[test_idx]) @ w + b, axis=1)
        macro, micro = f1_scores(labels[test_idx], pred, n_classes)
        macros.append(macro)
        micros.append(micro)
    return MetricsReport(
        macro_f1_mean=float(np.mean(macros)),
        macro_f1_std=float(np.std(macros)),
        micro_f1_mean=float(np.mean(micros)),
        micro_f1_std=float(np.std(micros)),
    )


# ---------------------------------------------------------------------------
# link prediction
# ---------------------------------------------------------------------------

def interaction_norm(interactions: sp.spmatrix, dtype=np.float32) -> sp.csr_matrix:
    """Symmetrically normalized user-item matrix D_u^{-1/2} A D_i^{-1/2}."""
    a = interactions.astype(np.float64).tocsr()
    du = np.asarray(a.sum(axis=1)).ravel()
    di = np.asarray(a.sum(axis=0)).ravel()
    du_inv = 1.0 / np.sqrt(np.maximum(du, 1e-12))
    di_inv = 1.0 / np.sqrt(np.maximum(di, 1e-12))
    return (sp.diags(du_inv) @ a @ sp.diags(di_inv)).tocsr().astype(dtype)


def lightgcn_propagate(norm: sp.csr_matrix, user_emb: Tensor, item_emb: Tensor,
                       layers: int) -> tuple[Tensor, Tensor]:
    """Parameter-free propagation over the normalized interaction matrix;
    final embeddings are the mean of layers 0..layers."""
    if layers < 0:
        raise GCHGNNError("layers must be >= 0")
    if layers == 0:
        return user_emb, item_emb
    norm_t = norm.T.tocsr()
    u_layers = [user_emb]
    i_layers = [item_emb]
    u, i = user_emb, item_emb
    for _ in range(layers):
        u, i = diff.sparse_dense_matmul(norm, i), diff.sparse_dense_matmul(norm_t, u)
        u_layers.append(u)
        i_layers.append(i)

    def mean_of(ts):
        total = ts[0]
        for t in ts[1:]:
            total = diff.add(total, t)
        return diff.scalar_mul(total, 1.0 / len(ts))

    return mean_of(u_layers), mean_of(i_layers)


def rank_eval(user_final: np.ndarray, item_final: np.ndarray,
              train_items: dict[int, np.ndarray], test_items: dict[int, np.ndarray],
              k: int = 20) -> MetricsReport:
    """Recall@k and NDCG@k averaged over test users; items already seen in
    training are excluded from each user's candidate ranking. NDCG uses
    binary relevance, log2 position discount, and ideal-DCG normalization."""
    if k < 1:
        raise GCHGNNError("k must be >= 1")
    users = sorted(u for u, items in test_items.items() if len(items) > 0)
    if not users:
        raise NoTestInteractions("no users with held-out interactions")
    n_items = item_final.shape[0]
    ids = np.arange(n_items)
    ideal_curve = 1.0 / np.log2(np.arange(2, k + 2))
    recalls, ndcgs = [], []
    for u in users:
        scores = np.float64(user_final[u]) @ np.float64(item_final).T
        seen = train_items.get(u)
        if seen is not None and len(seen):
            scores[np.asarray(seen, dtype=np.int64)] = -np.inf
        order = np.lexsort((ids, -scores))
        topk = order[:k]
        relevant = np.zeros(n_items, dtype=bool)
        relevant[np.asarray(test_items[u], dtype=np.int64)] = True
        hits = relevant[topk]
        n_rel = int(relevant.sum())
        recalls.append(hits.sum() / n_rel)
        dcg = float((hits * ideal_curve[:hits.size]).sum())
        idcg = float(ideal_curve[:min(k, n_rel)].sum())
        ndcgs.append(dcg / idcg if idcg > 0 else 0.0)
    return MetricsReport(
        recall_at_k=float(np.mean(recalls)),
        ndcg_at_k=float(np.mean(ndcgs)),
    )
