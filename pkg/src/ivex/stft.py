"""Short-time Fourier analysis/synthesis with square-root Hann windows.

Layout convention: spectrograms are complex ``(F, T, M)`` arrays with
``F = frame_len // 2 + 1`` one-sided bins, T frames and M channels; waveforms
are real ``(N, M)``.  The same sqrt-Hann window is applied on both sides, so
the effective analysis-synthesis window is Hann and overlap-add is constant
after both signal ends are padded by ``frame_len - hop`` zeros.  Under that
padding the round trip is exact to machine precision for every sample of the
original signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StftConfig", "TooShort", "ConfigMismatch", "analyze", "synthesize"]


class TooShort(ValueError):
    """Signal shorter than one analysis frame."""


class ConfigMismatch(ValueError):
    """Spectrogram shape inconsistent with the supplied configuration."""


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 4096
    hop: int = 1024
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.frame_len <= 0 or self.frame_len & (self.frame_len - 1):
            raise ValueError(f"frame_len must be a power of two, got {self.frame_len}")
        if self.hop <= 0 or self.frame_len % self.hop:
            raise ValueError("hop must divide frame_len")
        if self.hop > self.frame_len // 2:
            raise ValueError("hop must be at most frame_len / 2 (overlap-add)")
        if self.window != "sqrt_hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + 1

    @property
    def margin(self) -> int:
        """Zero padding added at each end before framing."""
        return self.frame_len - self.hop


def _sqrt_hann(frame_len: int) -> np.ndarray:
    # periodic Hann; its square overlap-adds to a constant at hop | frame_len
    n = np.arange(frame_len)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_len))


def analyze(signal: np.ndarray, config: StftConfig = StftConfig()) -> np.ndarray:
    """Forward transform of a real (N,) or (N, M) signal to (F, T, M)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        signal = signal[:, None]
    num_samples = signal.shape[0]
    if num_samples < config.frame_len:
        raise TooShort(
            f"need at least frame_len={config.frame_len} samples, got {num_samples}"
        )
    frame, hop, margin = config.frame_len, config.hop, config.margin
    num_frames = int(np.ceil((num_samples + margin) / hop)) + 1
    padded_len = (num_frames - 1) * hop + frame
    padded = np.zeros((padded_len, signal.shape[1]))
    padded[margin : margin + num_samples] = signal
    window = _sqrt_hann(frame)
    starts = np.arange(num_frames) * hop
    frames = padded[starts[:, None] + np.arange(frame)]  # (T, frame, M)
    spec = np.fft.rfft(frames * window[None, :, None], axis=1)
    return np.ascontiguousarray(spec.transpose(1, 0, 2))  # (F, T, M)


def synthesize(
    spectrogram: np.ndarray,
    config: StftConfig = StftConfig(),
    num_samples: int | None = None,
) -> np.ndarray:
    """Overlap-add inverse of :func:`analyze`, cropped to ``num_samples``."""
    spectrogram = np.asarray(spectrogram)
    if spectrogram.ndim != 3:
        raise ConfigMismatch("expected a (F, T, M) spectrogram")
    num_bins, num_frames, num_chan = spectrogram.shape
    if num_bins != config.num_bins:
        raise ConfigMismatch(
            f"spectrogram has {num_bins} bins but config implies {config.num_bins}"
        )
    frame, hop, margin = config.frame_len, config.hop, config.margin
    window = _sqrt_hann(frame)
    frames = np.fft.irfft(spectrogram.transpose(1, 0, 2), n=frame, axis=1)
    frames *= window[None, :, None]
    out_len = (num_frames - 1) * hop + frame
    out = np.zeros((out_len, num_chan))
    win_sum = np.zeros(out_len)
    win_sq = window**2
    for k in range(num_frames):
        out[k * hop : k * hop + frame] += frames[k]
        win_sum[k * hop : k * hop + frame] += win_sq
    out /= np.maximum(win_sum, 1e-12)[:, None]
    out = out[margin:]
    if num_samples is not None:
        out = out[:num_samples]
    return out
