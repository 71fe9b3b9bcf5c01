"""Dense numerical kernels with hand-derived adjoints.

Each kernel is a pure function pair: a forward computation and an adjoint
that maps the gradient of the output back to the gradients of the inputs.
The :mod:`resus.core.tape` module replays these adjoints in reverse order.
Linear solves always run in float64, whatever the precision of the callers.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import GradientCheckError, ShapeError, SingularSystemError

logger = logging.getLogger(__name__)

DenseMatrix = np.ndarray

BCE_EPS = 1e-7
JITTER_START = 1e-8
JITTER_GROWTH = 10.0
JITTER_TRIES = 3


def _shape_error(op: str, a: np.ndarray, b: np.ndarray) -> ShapeError:
    return ShapeError(f"{op}: incompatible operands A{a.shape} and B{b.shape}")


# --- matmul -----------------------------------------------------------------


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """C = A @ B for 2-D A and 1-D or 2-D B."""
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return a @ b


def matmul_adjoint(
    a: DenseMatrix, b: DenseMatrix, dc: DenseMatrix
) -> tuple[DenseMatrix, DenseMatrix]:
    """Return (dA, dB) = (dC @ B^T, A^T @ dC)."""
    if b.ndim == 1:
        return np.outer(dc, b), a.T @ dc
    return dc @ b.T, a.T @ dc


# --- SPD solve --------------------------------------------------------------


@dataclass(frozen=True)
class SpdFactor:
    """Cholesky factor of a (possibly jittered) symmetric matrix."""

    cho: tuple[np.ndarray, bool]
    jitter: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve(self.cho, np.asarray(b, dtype=np.float64))


def factor_spd(m: DenseMatrix) -> SpdFactor:
    """Cholesky-factor ``m``, escalating diagonal jitter on failure.

    The first attempt uses ``m`` as is. Subsequent attempts add
    ``1e-8 * trace(m) / n`` to the diagonal, growing tenfold each time.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"solve_spd: matrix must be square, got {m.shape}")
    n = m.shape[0]
    try:
        return SpdFactor(linalg.cho_factor(m, lower=True, check_finite=True), 0.0)
    except (linalg.LinAlgError, ValueError):
        pass

    scale = abs(np.trace(m)) / max(n, 1) or 1.0
    jitter = JITTER_START * scale
    eye = np.eye(n)
    for _ in range(JITTER_TRIES):
        try:
            factor = linalg.cho_factor(m + jitter * eye, lower=True)
            logger.debug("SPD factorization needed jitter %.3e", jitter)
            return SpdFactor(factor, jitter)
        except (linalg.LinAlgError, ValueError):
            jitter *= JITTER_GROWTH

    try:
        condition = float(np.linalg.cond(m))
    except np.linalg.LinAlgError:
        condition = float("inf")
    raise SingularSystemError(
        f"Cholesky failed for {n}x{n} system after {JITTER_TRIES} jitter steps",
        condition,
    )


def solve_spd(m: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Solve ``m x = b`` for symmetric positive-definite ``m``."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != np.shape(m)[0]:
        raise _shape_error("solve_spd", np.asarray(m), b)
    return factor_spd(m).solve(b)


def solve_spd_adjoint(
    m: DenseMatrix,
    b: DenseMatrix,
    x: DenseMatrix,
    dx: DenseMatrix,
    factor: SpdFactor | None = None,
) -> tuple[DenseMatrix, DenseMatrix]:
    """Adjoints of ``x = solve_spd(m, b)``.

    ``db = m^{-1} dx`` and ``dm = -db x^T``, symmetrized because ``m`` is
    symmetric. Pass the forward ``factor`` to avoid refactorizing.
    """
    factor = factor or factor_spd(m)
    db = factor.solve(dx)
    x = np.asarray(x, dtype=np.float64)
    dm = -np.outer(db, x) if x.ndim == 1 else -(db @ x.T)
    dm = 0.5 * (dm + dm.T)
    return dm, db


# --- elementwise ------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    return special.expit(x)


def sigmoid_adjoint(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus_adjoint(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * special.expit(x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_adjoint(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def clamp_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, BCE_EPS, 1.0 - BCE_EPS)


def bce_loss(labels: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy on clamped probabilities."""
    p = clamp_probs(probs)
    return -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))


def bce_adjoint(labels: np.ndarray, probs: np.ndarray, dloss: np.ndarray) -> np.ndarray:
    p = clamp_probs(probs)
    inside = (probs >= BCE_EPS) & (probs <= 1.0 - BCE_EPS)
    return dloss * (p - labels) / (p * (1.0 - p)) * inside


def softmax_weights(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis``; invariant to adding a constant to ``scores``."""
    return special.softmax(scores, axis=axis)


def softmax_adjoint(weights: np.ndarray, dw: np.ndarray, axis: int = -1) -> np.ndarray:
    return weights * (dw - np.sum(dw * weights, axis=axis, keepdims=True))


# --- interaction kernels ----------------------------------------------------


def fm_pool(embeddings: np.ndarray) -> np.ndarray:
    """Pairwise interaction pooling over the field axis.

    ``embeddings`` has shape (..., F, d); the result (..., d) is
    ``(sum e)^2 - sum e^2``, i.e. twice the sum of all pairwise products.
    """
    total = embeddings.sum(axis=-2)
    return total * total - np.sum(embeddings * embeddings, axis=-2)


def fm_pool_adjoint(embeddings: np.ndarray, dy: np.ndarray) -> np.ndarray:
    total = embeddings.sum(axis=-2, keepdims=True)
    return 2.0 * np.expand_dims(dy, -2) * (total - embeddings)


def abs_similarity(
    query: np.ndarray, support: np.ndarray, w: np.ndarray, b: float
) -> np.ndarray:
    """Similarity ``w^T |q - s| + b`` for every (query, support) pair.

    ``query`` is (nq, K), ``support`` is (ns, K); the result is (nq, ns).
    """
    if query.shape[-1] != support.shape[-1] or w.shape != (query.shape[-1],):
        raise ShapeError(
            f"abs_similarity: query{query.shape}, support{support.shape}, w{w.shape}"
        )
    diff = np.abs(query[:, None, :] - support[None, :, :])
    return diff @ w + b


def abs_similarity_adjoint(
    query: np.ndarray, support: np.ndarray, w: np.ndarray, ds: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Return (dquery, dsupport, dw, db)."""
    diff = query[:, None, :] - support[None, :, :]
    sign = np.sign(diff)
    weighted = ds[:, :, None] * sign * w
    dquery = weighted.sum(axis=1)
    dsupport = -weighted.sum(axis=0)
    dw = np.einsum("qs,qsk->k", ds, np.abs(diff))
    return dquery, dsupport, dw, float(ds.sum())


# --- gradient checking ------------------------------------------------------

LossAndGrads = Callable[[Mapping[str, np.ndarray]], tuple[float, Mapping[str, np.ndarray]]]


def _default_step(dtype: np.dtype) -> float:
    return 1e-6 if dtype == np.float64 else 1e-3


def grad_check(
    f: LossAndGrads,
    params: Mapping[str, np.ndarray],
    h: float | None = None,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients with central finite differences.

    ``f`` maps a parameter dict to ``(loss, grads)``. Returns the maximum over
    checked entries of ``|analytic - numeric| / max(1, |numeric|)``. With
    ``max_entries`` set, each parameter is checked on a random subset of that
    many entries.
    """
    base = {name: np.array(value, copy=True) for name, value in params.items()}
    _, analytic = f(base)
    worst = 0.0
    for name, value in base.items():
        step = h if h is not None else _default_step(value.dtype)
        grad = np.asarray(analytic.get(name, np.zeros_like(value)))
        flat_ids = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_ids = (rng or np.random.default_rng(0)).choice(
                value.size, size=max_entries, replace=False
            )
        for flat in flat_ids:
            idx = np.unravel_index(flat, value.shape) if value.ndim else ()
            original = value[idx]
            value[idx] = original + step
            plus, _ = f(base)
            value[idx] = original - step
            minus, _ = f(base)
            value[idx] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise GradientCheckError(
                    f"non-finite loss while perturbing {name}{list(idx)}"
                )
            numeric = (plus - minus) / (2.0 * step)
            error = abs(float(grad[idx]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)
    return worst
