"""Scaling of raw multiband digital numbers to the unit range."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .imgmath import Domain, ImageTensor, as_image, percentile


@dataclass(frozen=True)
class PercentileNormSpec:
    p_low: float = 2.0
    p_high: float = 98.0

    def __post_init__(self):
        if not (0.0 <= self.p_low < self.p_high <= 100.0):
            raise DomainError(f"need 0 <= p_low < p_high <= 100, got ({self.p_low}, {self.p_high})")


@dataclass(frozen=True)
class FixedRangeSpec:
    min_val: float = 0.0
    max_val: float = 3000.0

    def __post_init__(self):
        if self.max_val < self.min_val:
            raise DomainError("max_val must be >= min_val")


def _check_finite(data):
    if not np.all(np.isfinite(data)):
        raise DomainError("normalization input must be finite")


def percentile_normalize(img, spec: PercentileNormSpec = PercentileNormSpec()) -> ImageTensor:
    """Per band, map ``[Q_low, Q_high]`` onto ``[0, 1]`` and clip.

    Percentiles are taken over every pixel of the band.  A band whose two
    percentiles coincide maps to all zeros.
    """
    data = as_image(img, Domain.RAW_DN).data
    _check_finite(data)
    out = np.zeros_like(data)
    for b in range(data.shape[2]):
        band = data[:, :, b]
        lo = percentile(band, spec.p_low)
        hi = percentile(band, spec.p_high)
        if hi == lo:
            continue
        out[:, :, b] = np.clip((band - lo) / (hi - lo), 0.0, 1.0)
    return ImageTensor(out, Domain.UNIT)


def band_percentiles(img, spec: PercentileNormSpec) -> list[tuple[float, float]]:
    data = as_image(img, Domain.RAW_DN).data
    return [(percentile(data[:, :, b], spec.p_low), percentile(data[:, :, b], spec.p_high)) for b in range(data.shape[2])]


def fixed_range_normalize(img, spec: FixedRangeSpec = FixedRangeSpec()) -> ImageTensor:
    data = as_image(img, Domain.RAW_DN).data
    _check_finite(data)
    m, M = float(spec.min_val), float(spec.max_val)
    if M == m:
        return ImageTensor(np.zeros_like(data), Domain.UNIT)
    return ImageTensor(np.clip((data - m) / (M - m), 0.0, 1.0), Domain.UNIT)
