"""Super-Gaussian source model and the auxiliary (majorizer) machinery.

The targets are modelled per frame by a spherical generalized Gaussian
contrast on the joint norm across frequencies,

    G(r) = (r / alpha)**beta + 2 F log(alpha),        0 < beta < 2,

with a per-source scale ``alpha`` that is re-optimized in closed form every
iteration.  The background channels are unit-variance Gaussian, i.e. a plain
quadratic contrast (beta = 2 with unit weight).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import log_abs_det

# relative floor applied to per-frame norms before they enter denominators
NORM_FLOOR_REL = 1e-12
NORM_FLOOR_ABS = 1e-300


@dataclass(frozen=True)
class GGDModel:
    """Generalized Gaussian contrast with shape ``beta`` in (0, 2)."""

    beta: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.beta < 2.0:
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")

    def contrast(self, r: np.ndarray, alpha: np.ndarray, num_freqs: int) -> np.ndarray:
        """G(r) elementwise; ``alpha`` broadcasts against ``r``."""
        return (r / alpha) ** self.beta + 2.0 * num_freqs * np.log(alpha)


@dataclass
class AuxiliaryState:
    """Per-iteration auxiliary quantities for the K target sources.

    norms: (T, K) floored frame norms; scales: (K,) contrast scales;
    weights: (T, K) clipped majorizer frame weights.
    """

    norms: np.ndarray
    scales: np.ndarray
    weights: np.ndarray


def source_signals(
    spectrogram: np.ndarray, demix: np.ndarray, num_sources: int
) -> np.ndarray:
    """Target estimates s_i(f, t) = w_i^H x(f, t), stacked as (F, T, K).

    ``spectrogram`` is (F, T, M) and ``demix`` (F, M, M) with filters in the
    first ``num_sources`` columns.
    """
    if spectrogram.shape[-1] != demix.shape[1]:
        raise ValueError(
            f"channel mismatch: spectrogram has {spectrogram.shape[-1]}, "
            f"demixing expects {demix.shape[1]}"
        )
    return spectrogram @ np.conj(demix[:, :, :num_sources])


def aux_norms(sources: np.ndarray) -> np.ndarray:
    """Frame norms r_i(t) = ||s_i(., t)|| of source estimates (F, T, K).

    Floored at NORM_FLOOR_REL times the per-source maximum (absolute floor
    NORM_FLOOR_ABS) so downstream reciprocals stay defined.
    """
    r = np.linalg.norm(sources, axis=0)
    floor = np.maximum(NORM_FLOOR_REL * r.max(axis=0, keepdims=True), NORM_FLOOR_ABS)
    return np.maximum(r, floor)


def update_scales(norms: np.ndarray, beta: float, num_freqs: int) -> np.ndarray:
    """Closed-form optimal contrast scales alpha_i from frame norms (T, K).

    alpha^beta = (beta / 2F) * mean_t(r^beta); this is the exact minimizer of
    the negative log-likelihood in alpha for fixed demixing.
    """
    alpha_beta = (beta / (2.0 * num_freqs)) * np.mean(norms**beta, axis=0)
    return alpha_beta ** (1.0 / beta)


def contrast_weights(
    norms: np.ndarray,
    scales: np.ndarray,
    beta: float,
    clip: float = 1e5,
) -> np.ndarray:
    """Majorizer frame weights phi_i(t) = G'(r)/(2r), clipped for stability.

    phi = (beta/2) / (alpha^beta * r^(2-beta)); each source's weights are then
    capped at ``clip`` times that source's minimum weight.  Overflow from tiny
    floored norms produces inf which the cap removes (finite as long as one
    frame is active).
    """
    with np.errstate(over="ignore", divide="ignore"):
        phi = (0.5 * beta) / (scales**beta * norms ** (2.0 - beta))
    if clip is not None and np.isfinite(clip):
        phi = np.minimum(phi, clip * phi.min(axis=0, keepdims=True))
    return phi


def build_aux_state(
    sources: np.ndarray, model: GGDModel, clip: float = 1e5
) -> AuxiliaryState:
    """Norms, optimal scales and clipped weights for estimates (F, T, K)."""
    num_freqs = sources.shape[0]
    r = aux_norms(sources)
    alpha = update_scales(r, model.beta, num_freqs)
    phi = contrast_weights(r, alpha, model.beta, clip)
    return AuxiliaryState(norms=r, scales=alpha, weights=phi)


def surrogate_value(
    demix: np.ndarray,
    source_covs: np.ndarray,
    noise_cov: np.ndarray,
    num_sources: int,
    reduce: bool = True,
) -> float | np.ndarray:
    """Auxiliary objective for a demixing stack (F, M, M), summed over f.

    sum_i w_i^H V_i w_i + tr(W_z^H V_z W_z) - 2 log|det W|, with the
    majorizer's additive constant dropped.  ``source_covs`` is (K, F, M, M).
    ``reduce=False`` returns the per-frequency terms instead of their sum.
    """
    k = num_sources
    total = np.zeros(demix.shape[0])
    for i in range(k):
        w = demix[:, :, i]
        vw = (source_covs[i] @ w[..., None])[..., 0]
        total += np.sum(np.conj(w) * vw, axis=-1).real
    wz = demix[:, :, k:]
    if wz.shape[-1]:
        total += np.einsum("fmj,fmn,fnj->f", np.conj(wz), noise_cov, wz).real
    total = total - 2.0 * log_abs_det(demix)
    return float(np.sum(total)) if reduce else total


def nll_value(
    spectrogram: np.ndarray,
    demix: np.ndarray,
    num_sources: int,
    model: GGDModel,
    scales: np.ndarray | None = None,
) -> float:
    """Negative log-likelihood of the demixing (model constant dropped).

    (1/T) sum_{i,t} G(r_i(t)) + (1/T) sum_{f,t} |z(f,t)|^2
    - 2 sum_f log|det W(f)|.  When ``scales`` is omitted the contrast scales
    are profiled out (recomputed at their exact minimizer from this demixing's
    own frame norms), making the value a pure function of
    (spectrogram, demix, beta).
    """
    num_freqs, num_frames, _ = spectrogram.shape
    k = num_sources
    s = source_signals(spectrogram, demix, k)
    r = aux_norms(s)
    alpha = update_scales(r, model.beta, num_freqs) if scales is None else scales
    contrast_term = float(np.sum(model.contrast(r, alpha, num_freqs))) / num_frames
    z = spectrogram @ np.conj(demix[:, :, k:])
    noise_term = float(np.sum(np.abs(z) ** 2)) / num_frames
    det_term = -2.0 * float(np.sum(log_abs_det(demix)))
    return contrast_term + noise_term + det_term
