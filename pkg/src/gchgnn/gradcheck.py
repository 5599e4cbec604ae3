"""Central finite-difference verification of the differentiation engine.

Every check builds a scalar loss twice: once on a float64 tape for the
analytic gradient, and once per perturbed entry for the numeric one.
Probe inputs stay away from kinks (|x| >= 0.1 for elu / leaky_relu) and
from zero norms so the comparison is meaningful.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import diff
from .diff import Tape, Tensor, backward, constant

DEFAULT_TOLERANCE = 1e-4


def finite_difference_check(build: Callable[[], Tensor], leaves: Sequence[Tensor],
                            eps: float = 1e-6, guard: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build` must construct the scalar loss from the `leaves` tensors (all
    float64, requires_grad) reading their current `.value`. The relative
    error denominator is floored at `guard` so entries whose true gradient
    is zero compare absolutely.
    """
    with Tape(dtype=np.float64):
        loss = build()
        backward(loss, params=leaves)  # type: ignore[arg-type]
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad
        assert analytic is not None
        flat = leaf.value.ravel()
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = build().item()
            flat[i] = orig - h
            fm = build().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
        a = analytic.ravel()
        denom = np.maximum(guard, np.maximum(np.abs(a), np.abs(numeric)))
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


def _leaf(rng: np.random.Generator, rows: int, cols: int, positive: bool = False,
          away_from_zero: bool = False) -> Tensor:
    x = rng.uniform(0.25, 1.5, size=(rows, cols))
    if not positive:
        sign = rng.choice([-1.0, 1.0], size=(rows, cols))
        x = x * sign
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, 0.1 * np.sign(x), x)
    t = Tensor(x)
    t.requires_grad = True
    return t


def _scalarizer(rng: np.random.Generator, shape: tuple[int, int]):
    """Fixed random projection to a scalar, frozen per case so repeated
    builds evaluate the same function."""
    w = constant(rng.uniform(-1.0, 1.0, size=shape))

    def scalarize(out: Tensor) -> Tensor:
        return diff.mean_all(diff.elementwise_mul(out, w))

    return scalarize


def _mask_with_nonempty_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    mask = rng.random((rows, cols)) < 0.6
    for i in range(rows):
        if not mask[i].any():
            mask[i, rng.integers(cols)] = True
    return mask


def _primitive_cases(rng: np.random.Generator):
    """One (name, build, leaves) triple per primitive, with random shapes."""
    r = int(rng.integers(1, 5))
    c = int(rng.integers(1, 5))
    k = int(rng.integers(1, 5))
    cases = []

    def case(name, out_shape, make, leaves):
        w = _scalarizer(rng, out_shape)
        cases.append((name, lambda: w(make()), leaves))

    a = _leaf(rng, r, k)
    b = _leaf(rng, k, c)
    case("matmul", (r, c), lambda: diff.matmul(a, b), [a, b])

    dense = _leaf(rng, k, c)
    s = sp.random(r, k, density=0.5, random_state=int(rng.integers(1 << 30)), format="csr")
    s.data[:] = rng.uniform(0.5, 1.5, size=s.data.shape)
    case("sparse_dense_matmul", (r, c), lambda: diff.sparse_dense_matmul(s, dense), [dense])

    x = _leaf(rng, r, c)
    y = _leaf(rng, r, c)
    rowv = _leaf(rng, r, 1)
    colv = _leaf(rng, 1, c)
    case("add", (r, c), lambda: diff.add(x, y), [x, y])
    case("add_broadcast", (r, c), lambda: diff.add(rowv, colv), [rowv, colv])
    case("sub", (r, c), lambda: diff.sub(x, y), [x, y])
    case("elementwise_mul", (r, c), lambda: diff.elementwise_mul(x, y), [x, y])
    case("elementwise_mul_broadcast", (r, c),
         lambda: diff.elementwise_mul(x, rowv), [x, rowv])
    case("scalar_mul", (r, c), lambda: diff.scalar_mul(x, -1.7), [x])
    case("transpose", (c, r), lambda: diff.transpose(x), [x])

    p1 = _leaf(rng, r, c)
    p2 = _leaf(rng, k, c)
    case("concat_rows", (r + k, c), lambda: diff.concat_rows([p1, p2]), [p1, p2])

    idx = rng.integers(0, r, size=r + 2)
    case("gather_rows", (r + 2, c), lambda: diff.gather_rows(x, idx), [x])

    wide = _leaf(rng, r, c + 1)
    mask = _mask_with_nonempty_rows(rng, r, c + 1)
    case("row_softmax", (r, c + 1), lambda: diff.row_softmax(wide), [wide])
    case("row_log_softmax", (r, c + 1), lambda: diff.row_log_softmax(wide), [wide])
    case("masked_row_softmax", (r, c + 1),
         lambda: diff.masked_row_softmax(wide, mask), [wide])
    case("masked_row_logsumexp", (r, 1),
         lambda: diff.masked_row_logsumexp(wide, mask), [wide])

    z = _leaf(rng, r, c, away_from_zero=True)
    pos = _leaf(rng, r, c, positive=True)
    case("tanh", (r, c), lambda: diff.tanh(x), [x])
    case("elu", (r, c), lambda: diff.elu(z), [z])
    case("leaky_relu", (r, c), lambda: diff.leaky_relu(z, 0.2), [z])
    case("exp", (r, c), lambda: diff.exp(x), [x])
    case("log", (r, c), lambda: diff.log(pos), [pos])
    case("log_sigmoid", (r, c), lambda: diff.log_sigmoid(x), [x])
    case("power", (r, c), lambda: diff.power(pos, 2.5), [pos])
    case("l2_normalize_rows", (r, c), lambda: diff.l2_normalize_rows(z), [z])
    case("row_sum", (r, 1), lambda: diff.row_sum(x), [x])
    cases.append(("mean_all", lambda: diff.mean_all(x), [x]))

    qa = _leaf(rng, r, k, away_from_zero=True)
    qb = _leaf(rng, c, k, away_from_zero=True)
    case("cosine_similarity_matrix", (r, c),
         lambda: diff.cosine_similarity_matrix(qa, qb), [qa, qb])
    return cases


def check_primitives(shapes_per_op: int = 20, seed: int = 0) -> dict[str, float]:
    """Max relative FD error per primitive over `shapes_per_op` random shapes."""
    worst: dict[str, float] = {}
    for rep in range(shapes_per_op):
        rng = np.random.default_rng(seed * 10_000 + rep)
        for name, build, leaves in _primitive_cases(rng):
            err = finite_difference_check(build, leaves)
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def check_pipelines(seed: int = 0) -> dict[str, float]:
    """FD checks through the full encoder and loss compositions on a toy graph.

    Covers: schema attention aggregation, the masked-autoencoder path per
    view including the mask token, semantic fusion, and each training
    objective both alone and combined.
    """
    from .pipelines import build_gradcheck_cases

    results: dict[str, float] = {}
    for name, build, leaves in build_gradcheck_cases(seed):
        results[name] = finite_difference_check(build, leaves)
    return results


def run_full_suite(seed: int = 0, shapes_per_op: int = 20) -> dict[str, float]:
    out = check_primitives(shapes_per_op=shapes_per_op, seed=seed)
    out.update(check_pipelines(seed=seed))
    return out
