"""Demixing-matrix update rules and related per-frequency operations.

All functions are batched over the frequency axis and operate on raw arrays:
spectrograms ``(F, T, M)``, demixing stacks ``(F, M, M)`` whose *columns* are
the filters (estimate i is ``x @ conj(W)[..., i]``), covariance stacks
``(F, M, M)`` or ``(K, F, M, M)``.  Updates mutate the demixing stack in
place; the first ``num_sources`` columns are target filters, the rest the
background block.
"""

from __future__ import annotations

import numpy as np

from .linalg import (
    gevd_full,
    gevd_top,
    hermitize,
    inv_sqrt,
    mh,
    solve_linear,
)

__all__ = [
    "AllFramesZero",
    "weighted_covariances",
    "ip1_source_update",
    "oc_noise_update",
    "ip2_k1_update",
    "ip2_pair_update",
    "lcmv_update",
    "lcmv_residual",
    "semi_reduction",
    "semi_ive_update",
    "semi_noise_completion",
    "oc_residual",
    "projection_back",
    "stationarity_residual",
]


class AllFramesZero(ValueError):
    """Covariance accumulation hit an identically-zero input."""


def weighted_covariances(
    spectrogram: np.ndarray,
    weights: np.ndarray,
    trace_loading: float = 1e-3,
) -> np.ndarray:
    """Frame-weighted spatial covariances (1/T) sum_t phi(t) x x^H per source.

    ``weights`` is (T, n) with one column per output covariance; the result is
    (n, F, M, M), Hermitian, diagonally loaded by ``trace_loading * trace``.
    A zero trace (all frames zero) raises AllFramesZero.
    """
    num_freqs, num_frames, num_chan = spectrogram.shape
    num_out = weights.shape[1]
    xt = np.swapaxes(spectrogram, 1, 2)  # (F, M, T)
    xc = np.conj(spectrogram)
    eye = np.eye(num_chan)
    out = np.empty((num_out, num_freqs, num_chan, num_chan), dtype=spectrogram.dtype)
    for j in range(num_out):
        cov = (xt * weights[None, None, :, j]) @ xc / num_frames
        cov = hermitize(cov)
        trace = np.einsum("fmm->f", cov).real
        if not np.all(trace > 0):
            raise AllFramesZero(
                f"covariance {j} has nonpositive trace (zero or non-finite input)"
            )
        if trace_loading:
            cov = cov + (trace_loading * trace)[:, None, None] * eye
        out[j] = cov
    return out


def _unit_columns(num_chan: int, cols, dtype=np.complex128) -> np.ndarray:
    """Matrix whose columns are the requested canonical basis vectors."""
    eye = np.eye(num_chan, dtype=dtype)
    return eye[:, list(cols)]


def _normalize_by_quadratic(vec: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """vec / sqrt(vec^H cov vec) per frequency; vec is (F, M)."""
    cv = (cov @ vec[..., None])[..., 0]
    denom = np.sum(np.conj(vec) * cv, axis=-1).real
    return vec / np.sqrt(denom)[:, None]


def ip1_source_update(demix: np.ndarray, cov: np.ndarray, index: int) -> None:
    """Single-column iterative-projection update of filter ``index``.

    u = (W^H V)^-1 e_index, then V-normalize.  Solves against the current
    whole demixing stack, so call order over columns matters.
    """
    num_chan = demix.shape[-1]
    wv = mh(demix) @ cov
    rhs = np.zeros(num_chan, dtype=demix.dtype)
    rhs[index] = 1.0
    u = solve_linear(wv, rhs)
    demix[:, :, index] = _normalize_by_quadratic(u, cov)


def oc_noise_update(demix: np.ndarray, noise_cov: np.ndarray, num_sources: int) -> None:
    """Closed-form background block from the orthogonality constraint.

    Sets W_z = [(W_s^H V_z E_s)^-1 (W_s^H V_z E_z); -I], which zeroes
    W_s^H V_z W_z exactly and is the coordinate-wise optimum for the block.
    """
    k = num_sources
    num_chan = demix.shape[-1]
    if k == num_chan:
        return
    if k:
        wsv = mh(demix[:, :, :k]) @ noise_cov  # (F, K, M)
        demix[:, :k, k:] = solve_linear(wsv[:, :, :k], wsv[:, :, k:])
    demix[:, k:, k:] = -np.eye(num_chan - k, dtype=demix.dtype)


def oc_residual(demix: np.ndarray, noise_cov: np.ndarray, num_sources: int) -> float:
    """max_f ||W_s^H V_z W_z||_F — zero when the orthogonality constraint holds."""
    k = num_sources
    ws = demix[:, :, :k]
    wz = demix[:, :, k:]
    if not wz.shape[-1]:
        return 0.0
    cross = mh(ws) @ noise_cov @ wz
    return float(np.linalg.norm(cross, axis=(1, 2)).max())


def _top_pencil_pair(a, b, power_iters: int, exact: bool, init=None):
    """Dominant eigenpair of the pencil (a, b), by power iteration or densely.

    The power path is warm-started from ``init`` (the caller's previous
    solution), so successive sweeps over a slowly moving pencil converge
    together with the exact path instead of restarting from scratch.
    """
    if exact:
        vals, vecs = gevd_full(a, b)
        return vals[..., 0], vecs[..., 0]
    pair = gevd_top(a, b, iterations=power_iters, init=init)
    return pair.values, pair.vectors


def ip2_k1_update(
    demix: np.ndarray,
    source_cov: np.ndarray,
    noise_cov: np.ndarray,
    power_iters: int = 30,
    exact: bool = False,
) -> None:
    """Global single-target update: dominant pair of (V_z, V_1), V_1-normalized.

    Writes only column 0; the background block is untouched (its optimal image
    is restored by the final orthogonality completion).
    """
    _, u = _top_pencil_pair(noise_cov, source_cov, power_iters, exact,
                            init=demix[:, :, 0])
    demix[:, :, 0] = _normalize_by_quadratic(u, source_cov)


def ip2_pair_update(
    demix: np.ndarray,
    source_cov: np.ndarray,
    noise_cov: np.ndarray,
    index: int,
    num_sources: int,
    power_iters: int = 30,
    exact: bool = False,
    include_noise_block: bool = False,
) -> None:
    """Pairwise update of (w_index, W_z) through a reduced pencil.

    P_l = (W^H V_l)^-1 [e_index, E_z] and G_l = P_l^H V_l P_l for
    l in {source, background}; the new filter is P_i b (b^H G_i b)^-1/2 with b
    the dominant generalized eigenvector of (G_i, G_z).  With
    ``include_noise_block`` the remaining eigenvectors rebuild W_z as
    P_z B_z (B_z^H G_z B_z)^-1/2 (the historical variant); otherwise W_z is
    left untouched, which yields the identical filter sequence.
    """
    k = num_sources
    num_chan = demix.shape[-1]
    rhs = _unit_columns(num_chan, [index] + list(range(k, num_chan)), demix.dtype)
    p_i = solve_linear(mh(demix) @ source_cov, rhs)
    g_i = hermitize(mh(p_i) @ source_cov @ p_i)
    p_z = solve_linear(mh(demix) @ noise_cov, rhs)
    g_z = hermitize(mh(p_z) @ noise_cov @ p_z)
    if include_noise_block:
        _, vecs = gevd_full(g_i, g_z)
        b = vecs[..., 0]
        rest = vecs[..., 1:]
        gram = hermitize(mh(rest) @ g_z @ rest)
        demix[:, :, k:] = p_z @ rest @ inv_sqrt(gram)
    else:
        # Reduced-coordinate image of the current filter: w = P_i b implies
        # b = R^H W^H V_i w with R the unit-column selector, i.e. a row pick.
        current = (mh(demix) @ source_cov @ demix[:, :, index][..., None])[..., 0]
        b_init = np.concatenate(
            [current[:, index][:, None], current[:, k:]], axis=1)
        _, b = _top_pencil_pair(g_i, g_z, power_iters, exact, init=b_init)
    w = (p_i @ b[..., None])[..., 0]
    gb = (g_i @ b[..., None])[..., 0]
    denom = np.sum(np.conj(b) * gb, axis=-1).real
    demix[:, :, index] = w / np.sqrt(denom)[:, None]


def lcmv_update(
    demix: np.ndarray, cov: np.ndarray, steering: np.ndarray, index: int
) -> None:
    """Minimum-variance filter with unit response to steering column ``index``
    and nulls on the other known columns: w = V^-1 A (A^H V^-1 A)^-1 e_index."""
    num_known = steering.shape[-1]
    y = solve_linear(cov, steering)  # (F, M, L)
    gram = mh(steering) @ y
    rhs = np.zeros(num_known, dtype=demix.dtype)
    rhs[index] = 1.0
    coeff = solve_linear(gram, rhs)
    demix[:, :, index] = (y @ coeff[..., None])[..., 0]


def lcmv_residual(demix: np.ndarray, steering: np.ndarray, num_known: int) -> float:
    """max deviation of W_1^H A_1 from I_L over frequencies (constraint check)."""
    ws = demix[:, :, :num_known]
    gram = mh(ws) @ steering
    return float(np.abs(gram - np.eye(num_known)).max())


def semi_reduction(steering: np.ndarray, cond_tol: float = 1e10):
    """Basis for the subspace orthogonal to the known steering columns.

    Returns (basis, kept_channels): basis is (F, M, M-L) with
    basis^H steering = 0, built as [A_1, E_2]^-H E_2 where E_2 collects unit
    vectors of the ``kept_channels``.  Channels default to L..M-1; when that
    bordered matrix is ill-conditioned the dropped channels are re-chosen by
    greedy row pivoting on the steering magnitudes (deterministic, and only a
    basis change for the same subspace).
    """
    num_freqs, num_chan, num_known = steering.shape
    kept = tuple(range(num_known, num_chan))

    def bordered(channels):
        e2 = _unit_columns(num_chan, channels, steering.dtype)
        return np.concatenate(
            [steering, np.broadcast_to(e2, (num_freqs, num_chan, len(channels)))],
            axis=-1,
        )

    border = bordered(kept)
    if _max_condition(border) > cond_tol:
        mag = np.abs(steering).mean(axis=0)  # (M, L)
        dropped = []
        for col in range(num_known):
            order = np.argsort(-mag[:, col], kind="stable")
            pivot = next(int(r) for r in order if int(r) not in dropped)
            dropped.append(pivot)
        kept = tuple(c for c in range(num_chan) if c not in dropped)
        border = bordered(kept)
    # Null-space identity: border^-1 steering = [I_L; 0], so picking the
    # *trailing slots* of the bordered system (not the kept channels, which
    # may be reordered by the pivoting) guarantees basis^H steering = 0.
    slots = _unit_columns(num_chan, range(num_known, num_chan), steering.dtype)
    basis = solve_linear(
        mh(border), np.broadcast_to(slots, border.shape[:-1] + (len(kept),))
    )
    return basis, kept


def _max_condition(mats: np.ndarray) -> float:
    sv = np.linalg.svd(mats, compute_uv=False)
    smin = sv[..., -1]
    if np.any(smin == 0):
        return np.inf
    return float((sv[..., 0] / smin).max())


def semi_ive_update(
    demix: np.ndarray,
    reduced_demix: np.ndarray,
    basis: np.ndarray,
    reduced_source_cov: np.ndarray,
    reduced_noise_cov: np.ndarray,
    index: int,
    num_known: int,
    num_free_sources: int,
    power_iters: int = 30,
    exact: bool = False,
) -> None:
    """Update one steering-nulled source column via the reduced system.

    ``index`` is the full-system column (num_known <= index < K).  The reduced
    column is updated with the single-target pencil rule when only one source
    is free, else the pairwise reduced-pencil rule (background block of the
    reduced system untouched), then lifted back as w = basis @ w_reduced —
    which nulls the known steering directions by construction.
    """
    bar = index - num_known
    if num_free_sources == 1:
        ip2_k1_update(reduced_demix, reduced_source_cov, reduced_noise_cov,
                      power_iters, exact)
    else:
        ip2_pair_update(reduced_demix, reduced_source_cov, reduced_noise_cov,
                        bar, num_free_sources, power_iters, exact,
                        include_noise_block=False)
    demix[:, :, index] = (basis @ reduced_demix[:, :, bar, None])[..., 0]


def semi_noise_completion(
    demix: np.ndarray,
    reduced_demix: np.ndarray,
    basis: np.ndarray,
    reduced_noise_cov: np.ndarray,
    num_free_sources: int,
    num_sources: int,
) -> None:
    """Rebuild the background block of the full system from the reduced one.

    Applies the closed-form orthogonality completion inside the reduced system
    (with zero free sources this leaves the -I convention) and lifts it through
    the steering-nulling basis, so W_z is orthogonal to the known steering
    vectors and satisfies the reduced orthogonality constraint.
    """
    oc_noise_update(reduced_demix, reduced_noise_cov, num_free_sources)
    demix[:, :, num_sources:] = basis @ reduced_demix[:, :, num_free_sources:]


def projection_back(
    demix: np.ndarray, estimates: np.ndarray, num_out: int
) -> np.ndarray:
    """Spatial images x_i = (W^-H e_i)(w_i^H x) for the first ``num_out`` filters.

    ``estimates`` is (F, T, >=num_out) holding w_i^H x; the result is
    (num_out, F, T, M).  Only the image (column span) of the background block
    of ``demix`` matters, not its basis or scale.
    """
    num_freqs, num_frames, _ = estimates.shape
    num_chan = demix.shape[-1]
    rhs = _unit_columns(num_chan, range(num_out), demix.dtype)
    gains = solve_linear(mh(demix), np.broadcast_to(rhs, demix.shape[:-1] + (num_out,)))
    images = np.empty((num_out, num_freqs, num_frames, num_chan), dtype=estimates.dtype)
    for i in range(num_out):
        images[i] = estimates[:, :, i, None] * gains[:, None, :, i]
    return images


def stationarity_residual(
    demix: np.ndarray,
    source_covs: np.ndarray,
    noise_cov: np.ndarray,
    num_sources: int,
    normalize_noise_gauge: bool = True,
) -> np.ndarray:
    """Per-frequency defect of the stationary-point conditions.

    Source rows: max_i ||W^H V_i w_i - e_i||; background block:
    ||W^H V_z W_z - E_z||_F.  By default the background block is first brought
    to the canonical gauge W_z (W_z^H V_z W_z)^-1/2 — its scale/rotation is
    profiled out of the objective, so only the orthogonality part is a genuine
    defect.  Diagnostic only.
    """
    k = num_sources
    num_freqs, num_chan, _ = demix.shape
    demix = demix.copy()
    wz = demix[:, :, k:]
    if wz.shape[-1] and normalize_noise_gauge:
        omega = hermitize(mh(wz) @ noise_cov @ wz)
        demix[:, :, k:] = wz @ inv_sqrt(omega)
    resid = np.zeros(num_freqs)
    eye = np.eye(num_chan, dtype=demix.dtype)
    for i in range(k):
        lhs = (mh(demix) @ source_covs[i] @ demix[:, :, i, None])[..., 0]
        resid = np.maximum(resid, np.linalg.norm(lhs - eye[:, i], axis=-1))
    wz = demix[:, :, k:]
    if wz.shape[-1]:
        lhs = mh(demix) @ noise_cov @ wz
        defect = np.linalg.norm(lhs - eye[:, k:], axis=(1, 2))
        resid = np.maximum(resid, defect)
    return resid
