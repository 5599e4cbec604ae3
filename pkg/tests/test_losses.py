import numpy as np
import pytest

import gchgnn.diff as diff
from gchgnn.diff import Tape, Tensor, backward, constant
from gchgnn.errors import EmptyPositives, EmptyTriples, GCHGNNError, ZeroVectorRowWarning
from gchgnn.losses import (
    LossWeights,
    bpr_loss,
    hcl_total,
    info_nce_directional,
    inter_loss,
    link_total,
    multiview_sce,
    sce_loss,
)
from gchgnn.sampler import SampleSets
from gchgnn.selfcheck import bpr_oracle, info_nce_oracle, sce_oracle


# ---------------------------------------------------------------------------
# scaled cosine error
# ---------------------------------------------------------------------------

def test_sce_zero_when_views_equal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 4))
    loss = sce_loss(Tensor(x), Tensor(x.copy()), np.arange(6), eta=2.0)
    assert loss.item() < 1e-12


def test_sce_antipodal_is_two_at_eta_one():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 3))
    loss = sce_loss(Tensor(x), Tensor(-x), np.arange(5), eta=1.0)
    assert loss.item() == pytest.approx(2.0, abs=1e-6)


def test_sce_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 6))
    z = rng.normal(size=(10, 6))
    nodes = np.array([0, 2, 3, 7, 9])
    for eta in (1.0, 2.0, 3.0):
        got = sce_loss(Tensor(x), Tensor(z), nodes, eta).item()
        assert got == pytest.approx(sce_oracle(x, z, nodes, eta), abs=1e-7)


def test_sce_invariant_to_row_rescaling():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 4))
    z = rng.normal(size=(6, 4))
    nodes = np.arange(6)
    base = sce_loss(Tensor(x), Tensor(z), nodes, 2.0).item()
    x2 = x.copy()
    x2[2] *= 7.5
    z2 = z.copy()
    z2[4] *= 0.01
    scaled = sce_loss(Tensor(x2), Tensor(z2), nodes, 2.0).item()
    assert scaled == pytest.approx(base, abs=1e-9)


def test_sce_zero_row_warns_and_counts_as_cos_zero():
    x = np.ones((3, 4))
    z = np.ones((3, 4))
    x[1] = 0.0
    with pytest.warns(ZeroVectorRowWarning):
        loss = sce_loss(Tensor(x), Tensor(z), np.arange(3), 1.0)
    # rows 0 and 2 contribute 0, row 1 contributes (1 - 0)^1 = 1
    assert loss.item() == pytest.approx(1.0 / 3.0, abs=1e-7)


def test_sce_rejects_bad_args():
    x = Tensor(np.ones((3, 2)))
    with pytest.raises(GCHGNNError):
        sce_loss(x, x, np.empty(0, dtype=np.int64), 2.0)
    with pytest.raises(GCHGNNError):
        sce_loss(x, x, np.arange(3), 0.5)


def test_multiview_sce_averages_over_pairs():
    rng = np.random.default_rng(4)
    views = [Tensor(rng.normal(size=(5, 3))) for _ in range(3)]
    nodes = np.arange(5)
    got = multiview_sce(views, nodes, 2.0).item()
    pairs = [(0, 1), (0, 2), (1, 2)]
    want = np.mean([sce_loss(views[a], views[b], nodes, 2.0).item() for a, b in pairs])
    assert got == pytest.approx(want, abs=1e-7)
    single = multiview_sce(views[:1], nodes, 2.0)
    assert single.item() == 0.0


# ---------------------------------------------------------------------------
# InfoNCE
# ---------------------------------------------------------------------------

def _sets(positives, n):
    return SampleSets(positives=positives, batch=np.arange(n),
                      intra_set=np.arange(n))


def test_info_nce_no_negatives_gives_zero():
    rng = np.random.default_rng(5)
    h = rng.normal(size=(4, 3))
    positives = {i: np.array([j for j in range(4) if j != i]) for i in range(4)}
    loss = info_nce_directional(Tensor(h), Tensor(rng.normal(size=(4, 3))),
                                positives, np.arange(4), tau=0.5)
    assert loss.item() == pytest.approx(0.0, abs=1e-7)


def test_info_nce_equal_similarities_forced_value():
    # identical rows in h_b make every similarity equal
    rng = np.random.default_rng(6)
    h_a = rng.normal(size=(6, 4))
    h_b = np.tile(rng.normal(size=(1, 4)), (6, 1))
    positives = {0: np.array([1, 2]), 3: np.array([4])}
    loss = info_nce_directional(Tensor(h_a), Tensor(h_b), positives,
                                np.arange(6), tau=0.7)
    want = np.mean([-np.log(2 / 5), -np.log(1 / 5)])
    assert loss.item() == pytest.approx(want, abs=1e-6)


def test_info_nce_matches_scalar_oracle():
    rng = np.random.default_rng(7)
    h_a = rng.normal(size=(30, 8)).astype(np.float32)
    h_b = rng.normal(size=(30, 8)).astype(np.float32)
    positives = {}
    for i in range(30):
        cand = np.setdiff1d(rng.integers(0, 30, size=5), [i])
        positives[i] = cand[:3]
    got = info_nce_directional(Tensor(h_a), Tensor(h_b), positives,
                               np.arange(30), 0.4).item()
    want = info_nce_oracle(h_a, h_b, positives, np.arange(30), 0.4)
    assert got == pytest.approx(want, abs=1e-6)


def test_info_nce_nonnegative():
    rng = np.random.default_rng(8)
    for _ in range(10):
        h_a = rng.normal(size=(12, 5))
        h_b = rng.normal(size=(12, 5))
        positives = {i: np.array([(i + 1) % 12, (i + 5) % 12]) for i in range(12)}
        loss = info_nce_directional(Tensor(h_a), Tensor(h_b), positives,
                                    np.arange(12), 0.5)
        assert loss.item() >= -1e-9


def test_info_nce_skips_empty_anchors_and_reports():
    rng = np.random.default_rng(9)
    h = rng.normal(size=(5, 3))
    positives = {0: np.array([1]), 1: np.empty(0, dtype=np.int64),
                 2: np.empty(0, dtype=np.int64)}
    diag = {}
    info_nce_directional(Tensor(h), Tensor(h), positives, np.arange(5), 0.5,
                         diagnostics=diag)
    assert diag["skipped_anchors"] == 2
    with pytest.raises(EmptyPositives):
        info_nce_directional(Tensor(h), Tensor(h),
                             {0: np.empty(0, dtype=np.int64)}, np.arange(5), 0.5)


def test_logit_shift_invariance():
    # adding a constant to one anchor's logits leaves its term unchanged
    rng = np.random.default_rng(10)
    s = rng.normal(size=(3, 6))
    pos_mask = rng.random((3, 6)) < 0.4
    pos_mask[np.arange(3), [0, 1, 2]] = True
    den_mask = np.ones((3, 6), dtype=bool)

    def term(values):
        t = Tensor(values)
        num = diff.masked_row_logsumexp(t, pos_mask)
        den = diff.masked_row_logsumexp(t, den_mask)
        return diff.sub(den, num).value

    base = term(s)
    shifted = s.copy()
    shifted[1] += 123.456
    assert np.allclose(term(shifted), base, atol=1e-6)


# ---------------------------------------------------------------------------
# combination losses
# ---------------------------------------------------------------------------

def test_inter_loss_balance_extremes():
    rng = np.random.default_rng(11)
    h1 = Tensor(rng.normal(size=(8, 4)))
    h2 = Tensor(rng.normal(size=(8, 4)))
    positives = {i: np.array([(i + 1) % 8]) for i in range(8)}
    sets = _sets(positives, 8)
    l1 = info_nce_directional(h1, h2, positives, sets.batch, 0.5).item()
    l2 = info_nce_directional(h2, h1, positives, sets.batch, 0.5).item()
    assert inter_loss(h1, h2, sets, 1.0, 0.5).item() == pytest.approx(l1, abs=1e-7)
    assert inter_loss(h1, h2, sets, 0.0, 0.5).item() == pytest.approx(l2, abs=1e-7)
    assert inter_loss(h1, h2, sets, 0.5, 0.5).item() == pytest.approx(
        0.5 * (l1 + l2), abs=1e-7)


def test_hcl_total_weighting():
    a = constant(np.array([[2.0]]))
    b = constant(np.array([[3.0]]))
    c = constant(np.array([[5.0]]))
    zero = LossWeights(intra=0.0, inter=0.0, gen=0.0)
    assert hcl_total(a, b, c, zero).item() == 0.0
    unit = LossWeights(intra=1.0, inter=1.0, gen=1.0)
    assert hcl_total(a, b, c, unit).item() == pytest.approx(10.0)
    mixed = LossWeights(intra=0.3, inter=0.6, gen=0.1)
    assert hcl_total(a, b, c, mixed).item() == pytest.approx(0.3 * 2 + 0.6 * 3 + 0.1 * 5)


def test_bpr_equal_scores_is_log_two():
    emb = np.ones((4, 3))
    triples = np.array([[0, 1, 2], [1, 0, 3]])
    loss = bpr_loss(Tensor(emb), Tensor(emb.copy()), triples)
    assert loss.item() == pytest.approx(np.log(2.0), abs=1e-7)


def test_bpr_vanishes_with_large_margin():
    user = np.array([[10.0, 0.0]])
    items = np.array([[10.0, 0.0], [-10.0, 0.0]])
    loss = bpr_loss(Tensor(user), Tensor(items), np.array([[0, 0, 1]]))
    assert loss.item() < 1e-6


def test_bpr_matches_scalar_oracle():
    rng = np.random.default_rng(12)
    u = rng.normal(size=(6, 4)).astype(np.float32)
    v = rng.normal(size=(9, 4)).astype(np.float32)
    triples = np.stack([rng.integers(0, 6, 15), rng.integers(0, 9, 15),
                        rng.integers(0, 9, 15)], axis=1)
    got = bpr_loss(Tensor(u), Tensor(v), triples).item()
    assert got == pytest.approx(bpr_oracle(u, v, triples), abs=1e-7)


def test_bpr_empty_triples_rejected():
    with pytest.raises(EmptyTriples):
        bpr_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))),
                 np.empty((0, 3), dtype=np.int64))


def test_link_total_extremes():
    h = constant(np.array([[4.0]]))
    b = constant(np.array([[7.0]]))
    assert link_total(h, b, 0.0, 1.0).item() == pytest.approx(7.0)
    assert link_total(h, b, 1.0, 0.0).item() == pytest.approx(4.0)
    assert link_total(h, b, 0.5, 2.0).item() == pytest.approx(16.0)


def test_loss_weight_validation():
    with pytest.raises(GCHGNNError):
        LossWeights(tau=0.0)
    with pytest.raises(GCHGNNError):
        LossWeights(eta=0.5)
    with pytest.raises(GCHGNNError):
        LossWeights(view_balance=1.5)
    with pytest.raises(GCHGNNError):
        LossWeights(gen=-0.1)


def test_losses_differentiate_end_to_end():
    from gchgnn.gradcheck import DEFAULT_TOLERANCE, finite_difference_check

    rng = np.random.default_rng(13)
    h1 = Tensor(rng.normal(size=(6, 4)))
    h1.requires_grad = True
    h2 = Tensor(rng.normal(size=(6, 4)))
    h2.requires_grad = True
    positives = {i: np.array([(i + 2) % 6]) for i in range(6)}
    sets = _sets(positives, 6)
    w = LossWeights()

    def build():
        l_intra = sce_loss(h1, h2, np.arange(6), w.eta)
        l_inter = inter_loss(h1, h2, sets, w.view_balance, w.tau)
        l_gen = diff.mean_all(diff.elementwise_mul(diff.sub(h1, h2), diff.sub(h1, h2)))
        return hcl_total(l_intra, l_inter, l_gen, w)

    assert finite_difference_check(build, [h1, h2]) < DEFAULT_TOLERANCE
