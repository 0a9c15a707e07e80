"""Seeded additive Gaussian measurement noise at an exact signal-to-noise ratio."""

from __future__ import annotations

import dataclasses
import math

import numpy as np


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    """``10 log10(||signal||^2 / ||noise||^2)`` with plain Euclidean norms."""
    return 10 * math.log10(np.sum(np.abs(signal) ** 2) / np.sum(np.abs(noise) ** 2))


def add_noise(data, snr: float | None, seed=None):
    """Return ``data`` plus Gaussian noise rescaled to hit ``snr`` dB exactly.

    ``data`` is any frozen dataclass with a ``values`` array (boundary or
    lateral data).  ``snr`` of ``None`` or ``inf`` disables noise.  ``seed``
    is anything :func:`numpy.random.default_rng` accepts.
    """
    if snr is None or (math.isinf(snr) and snr > 0):
        return data
    if seed is None:
        raise ValueError("a seed is required whenever noise is enabled")
    values = np.asarray(data.values)
    power = float(np.sum(np.abs(values) ** 2))
    if power == 0:
        raise ValueError("signal is identically zero; SNR is undefined")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(values.shape)
    if np.iscomplexobj(values):
        noise = noise + 1j * rng.standard_normal(values.shape)
    noise *= math.sqrt(power * 10 ** (-snr / 10) / np.sum(np.abs(noise) ** 2))
    return dataclasses.replace(data, values=values + noise)
