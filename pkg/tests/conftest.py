"""Shared builders for the test suite (seeded, so every test is reproducible)."""

import numpy as np


def random_hpd(rng, dim, stack=(), jitter=1.0):
    """Hermitian positive definite matrices, shape stack + (dim, dim)."""
    shape = tuple(stack) + (dim, dim)
    m = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    a = m @ np.conjugate(np.swapaxes(m, -1, -2)) / dim
    return a + jitter * np.eye(dim)


def random_complex(rng, *shape):
    """Standard complex normal entries (unit variance per entry)."""
    draw = rng.standard_normal(shape + (2,))
    return (draw[..., 0] + 1j * draw[..., 1]) / np.sqrt(2)


def random_demix(rng, num_freqs, num_chan):
    """Random nonsingular demixing stacks, biased toward the identity."""
    return np.eye(num_chan) + 0.5 * random_complex(rng, num_freqs, num_chan, num_chan)


def random_spectrogram(rng, num_freqs, num_frames, num_chan):
    return random_complex(rng, num_freqs, num_frames, num_chan)
