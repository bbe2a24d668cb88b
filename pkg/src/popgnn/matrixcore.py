"""Dense f64 matrix helpers shared by every stage of the pipeline.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The functions
here add the shape checks, finiteness guarantees and the few deterministic
numerical routines (power iteration, Pearson correlation) the rest of the
package relies on.
"""

from __future__ import annotations

import warnings

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class PowerIterationWarning(RuntimeWarning):
    """Power iteration hit ``max_iter`` and fell back to the bound 2.0."""


LAMBDA_FALLBACK = 2.0


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {m.shape}")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name}: expected a 1-D vector, got shape {x.shape}")
    return x


def _check_finite(m: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"{op}: result contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return _check_finite(a @ b, "matmul")


def hadamard(a, b) -> np.ndarray:
    """Element-wise product of two equally shaped matrices."""
    a = as_matrix(a, "hadamard lhs")
    b = as_matrix(b, "hadamard rhs")
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    return _check_finite(a * b, "hadamard")


def _start_vector(n: int) -> np.ndarray:
    # All-ones plus a fixed ramp: all-ones alone is a null vector of the
    # normalized Laplacian of every regular graph.
    v = 1.0 + 0.5 * np.sin(np.arange(1, n + 1, dtype=np.float64))
    return v / np.linalg.norm(v)


def power_iteration_lambda_max(m, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Dominant eigenvalue magnitude of a symmetric matrix.

    Iterates ``v <- Mv / |Mv|`` from a fixed start vector. For symmetric ``M``
    the estimate ``|Mv|`` rises monotonically to ``max |lambda|``, also when
    ``lambda`` and ``-lambda`` are both dominant. Stops when one step changes
    the estimate by at most ``tol`` (relative, for estimates above 1).

    On non-convergence a :class:`PowerIterationWarning` is emitted and 2.0 is
    returned (a valid upper bound for normalized Laplacians).
    """
    m = as_matrix(m, "power_iteration")
    n = m.shape[0]
    if m.shape[1] != n:
        raise ShapeError(f"power_iteration: matrix must be square, got {m.shape}")
    if n == 0:
        return 0.0
    v = _start_vector(n)
    prev = -1.0
    for _ in range(max_iter):
        w = m @ v
        est = float(np.sqrt(w @ w))
        if est == 0.0:
            return 0.0
        if abs(est - prev) <= tol * max(1.0, est):
            return est
        prev = est
        v = w / est
    warnings.warn(
        f"power iteration did not converge in {max_iter} iterations; using {LAMBDA_FALLBACK}",
        PowerIterationWarning,
        stacklevel=2,
    )
    return LAMBDA_FALLBACK


def pearson_correlation(x, y) -> float:
    """Pearson correlation of two vectors; 0.0 if either is constant."""
    x = as_vector(x, "pearson x")
    y = as_vector(y, "pearson y")
    if x.shape != y.shape:
        raise ShapeError(f"pearson: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("pearson: need at least 2 observations")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return 0.0
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    return min(1.0, max(-1.0, r))


def correlation_matrix(rows) -> np.ndarray:
    """Pairwise Pearson correlation between the rows of ``rows``.

    Agrees with :func:`pearson_correlation` entry by entry (to rounding):
    constant rows correlate 0 with everything, themselves included. The
    result is exactly symmetric with a unit diagonal for non-constant rows.
    """
    x = as_matrix(rows, "correlation_matrix")
    if x.shape[1] < 2:
        raise ShapeError("correlation_matrix: need at least 2 observations per row")
    constant = np.ptp(x, axis=1) == 0.0
    xc = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", xc, xc))
    norms[constant] = 1.0
    xn = xc / norms[:, None]
    c = xn @ xn.T
    c = 0.5 * (c + c.T)
    np.clip(c, -1.0, 1.0, out=c)
    c[constant, :] = 0.0
    c[:, constant] = 0.0
    diag = np.where(constant, 0.0, 1.0)
    np.fill_diagonal(c, diag)
    return c
