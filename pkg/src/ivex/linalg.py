"""Hermitian linear algebra kernels used by the extraction updates.

Every routine accepts stacked operands: a matrix argument may have shape
``(..., d, d)`` and vector results follow the leading (typically frequency)
axes.  Nothing here ever forms an explicit inverse; systems are solved through
pivoted LAPACK factorizations.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

__all__ = [
    "NotPositiveDefinite",
    "SingularMatrix",
    "GeneralizedEigenpair",
    "mh",
    "hermitize",
    "phase_normalize",
    "phase_normalize_columns",
    "cholesky",
    "solve_linear",
    "log_abs_det",
    "inv_sqrt",
    "gevd_top",
    "gevd_full",
]


class NotPositiveDefinite(np.linalg.LinAlgError):
    """A matrix that must be Hermitian positive definite is not.

    ``index`` is the position of the first offending matrix in the leading
    (stacked) axes, or None for a single matrix.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularMatrix(np.linalg.LinAlgError):
    """A linear system's coefficient matrix is singular to working precision."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class GeneralizedEigenpair(NamedTuple):
    """Top eigenpair of a Hermitian-definite pencil, stacked over leading axes."""

    values: np.ndarray   # (...,)
    vectors: np.ndarray  # (..., d), unit Euclidean norm, phase-fixed


def mh(a: np.ndarray) -> np.ndarray:
    """Conjugate (Hermitian) transpose of the trailing two axes."""
    return np.conjugate(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return the Hermitian part (a + a^H) / 2."""
    return 0.5 * (a + mh(a))


def _first_bad_index(flags: np.ndarray):
    """Index (along flattened leading axes) of the first True entry, else None."""
    bad = np.flatnonzero(flags)
    return int(bad[0]) if bad.size else None


def phase_normalize(vec: np.ndarray) -> np.ndarray:
    """Rotate vectors (last axis) so the largest-magnitude entry is real >= 0.

    Ties take the first index; zero vectors are returned unchanged.  The map is
    idempotent, which makes eigenvector comparisons across solvers meaningful.
    """
    vec = np.asarray(vec)
    mag = np.abs(vec)
    idx = np.argmax(mag, axis=-1)
    pivot = np.take_along_axis(vec, idx[..., None], axis=-1)[..., 0]
    scale = np.abs(pivot)
    # unit phase factor; leave zero vectors alone
    phase = np.where(scale > 0, np.conj(pivot) / np.where(scale > 0, scale, 1.0), 1.0)
    return vec * phase[..., None]


def phase_normalize_columns(mat: np.ndarray) -> np.ndarray:
    """Apply :func:`phase_normalize` to each column of (..., d, k) matrices."""
    return np.swapaxes(phase_normalize(np.swapaxes(mat, -1, -2)), -1, -2)


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of Hermitian positive definite matrices.

    Raises NotPositiveDefinite (with the stacked index of the first offender)
    when any matrix in the stack fails.
    """
    a = hermitize(np.asarray(a))
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        eig_min = np.linalg.eigvalsh(a.reshape(-1, *a.shape[-2:])).min(axis=-1)
        idx = _first_bad_index(~(eig_min > 0))
        raise NotPositiveDefinite(
            f"matrix not positive definite (stack index {idx}, "
            f"min eigenvalue {eig_min.min():.3e})",
            index=idx,
        ) from None


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b by pivoted LU; raises SingularMatrix with a stack index."""
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        a = np.asarray(a)
        _, ld = np.linalg.slogdet(a.reshape(-1, *a.shape[-2:]))
        idx = _first_bad_index(~np.isfinite(ld))
        raise SingularMatrix(
            f"singular coefficient matrix (stack index {idx})", index=idx
        ) from None


def log_abs_det(a: np.ndarray) -> np.ndarray:
    """log |det a| from the pivoted-factorization diagonal; -inf when singular."""
    _, ld = np.linalg.slogdet(a)
    return ld


def inv_sqrt(a: np.ndarray) -> np.ndarray:
    """Unique Hermitian-PD inverse square root, via eigendecomposition."""
    a = hermitize(np.asarray(a))
    w, u = np.linalg.eigh(a)
    if not np.all(w > 0):
        flat = w.reshape(-1, w.shape[-1])
        idx = _first_bad_index(~(flat.min(axis=-1) > 0))
        raise NotPositiveDefinite(
            f"inv_sqrt needs positive definite input (stack index {idx})",
            index=idx,
        )
    return (u / w[..., None, :] ** 0.5) @ mh(u)


def _rayleigh(a, b, x):
    """(x^H a x) / (x^H b x) for stacked Hermitian a, b and vectors x."""
    ax = (a @ x[..., None])[..., 0]
    bx = (b @ x[..., None])[..., 0]
    num = np.sum(np.conj(x) * ax, axis=-1).real
    den = np.sum(np.conj(x) * bx, axis=-1).real
    return num / den


def gevd_top(
    a: np.ndarray,
    b: np.ndarray,
    iterations: int = 30,
    rtol: float = 1e-12,
    init: np.ndarray | None = None,
) -> GeneralizedEigenpair:
    """Dominant eigenpair of the pencil (a, b): a x = lambda b x, lambda largest.

    The pencil is reduced to the standard problem for b^-1 a and run through
    plain power iteration, tracking the generalized Rayleigh quotient and
    stopping early once its relative change drops below ``rtol`` for the whole
    stack.  ``init`` warm-starts the iteration (batches whose init is zero
    fall back to the deterministic all-ones start); callers that re-solve a
    slowly moving pencil should pass their previous solution.  ``b`` must be
    positive definite; a singular ``b`` raises SingularMatrix.
    """
    a = hermitize(np.asarray(a))
    b = hermitize(np.asarray(b))
    c = solve_linear(b, a)
    d = a.shape[-1]
    x = np.full(a.shape[:-1], 1.0 / np.sqrt(d), dtype=a.dtype)
    if init is not None:
        init = np.asarray(init, dtype=a.dtype)
        norm = np.linalg.norm(init, axis=-1, keepdims=True)
        ok = norm > 0
        x = np.where(ok, init / np.where(ok, norm, 1.0), x)
    lam = _rayleigh(a, b, x)
    for _ in range(iterations):
        y = (c @ x[..., None])[..., 0]
        norm = np.linalg.norm(y, axis=-1, keepdims=True)
        x = y / np.where(norm > 0, norm, 1.0)
        lam_new = _rayleigh(a, b, x)
        done = np.abs(lam_new - lam) <= rtol * np.abs(lam_new)
        lam = lam_new
        if np.all(done):
            break
    return GeneralizedEigenpair(lam, phase_normalize(x))


def gevd_full(a: np.ndarray, b: np.ndarray):
    """All eigenpairs of the Hermitian-definite pencil (a, b), descending.

    Reduction: b = L L^H, C = L^-1 a L^-H, Hermitian eigendecomposition of C,
    back-substitution X = L^-H U.  Columns of X are b-orthonormal
    (X^H b X = I) and phase-fixed.  Returns (values, vectors) with values
    shaped (..., d) descending and vectors (..., d, d), column j matching
    values[..., j].
    """
    a = hermitize(np.asarray(a))
    lower = cholesky(b)
    y = solve_linear(lower, a)
    c = solve_linear(lower, mh(y))
    w, u = np.linalg.eigh(hermitize(c))
    # ascending -> descending
    w = w[..., ::-1]
    u = u[..., ::-1]
    x = solve_linear(mh(lower), u)
    return w, phase_normalize_columns(x)
