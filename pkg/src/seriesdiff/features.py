"""Feature extraction and normalization for 1-D series.

Exact definitions (fixed here, not delegated to any library):

* frequency: argmax bin of the magnitude periodogram, DC excluded, divided
  by the series length; ties break toward the lower bin; 0 for a flat
  spectrum.
* skewness: population m3 / m2^1.5, 0 when m2 = 0.
* mean / variance: arithmetic mean and population variance.
* linearity: sign(slope) * R^2 of the least-squares line, 0 for a constant
  series.
* n_peaks: count of strict one-neighbor local maxima.
"""

from __future__ import annotations

import numpy as np

from .condition import FeatureVector

MIN_LENGTH = 8


def minmax_normalize(series: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant series maps to all 0.5."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("series must be nonempty")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def extract_features(series: np.ndarray) -> FeatureVector:
    """Six properties of a (min-max-normalized) series.

    Mean and variance are only meaningful in normalized units; pass raw
    series through :func:`minmax_normalize` first.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < MIN_LENGTH:
        raise ValueError(f"series must be 1-D with length >= {MIN_LENGTH}")
    L = x.size

    spectrum = np.abs(np.fft.rfft(x))[1:]
    frequency = 0.0 if not np.any(spectrum > 0.0) else float(np.argmax(spectrum) + 1) / L

    mean = float(x.mean())
    centered = x - mean
    m2 = float(np.mean(centered**2))
    m3 = float(np.mean(centered**3))
    skewness = 0.0 if m2 == 0.0 else m3 / m2**1.5

    i = np.arange(L, dtype=np.float64)
    i_c = i - i.mean()
    var_i = float(np.mean(i_c**2))
    cov = float(np.mean(i_c * centered))
    if m2 == 0.0 or cov == 0.0:
        linearity = 0.0
    else:
        r2 = cov * cov / (var_i * m2)
        linearity = float(np.sign(cov) * min(r2, 1.0))

    n_peaks = int(np.count_nonzero((x[1:-1] > x[:-2]) & (x[1:-1] > x[2:])))

    # Features are defined on min-max-normalized series; tolerate float fuzz
    # at the [0, 1] boundaries only.
    if -1e-9 <= mean < 0.0 or 1.0 < mean <= 1.0 + 1e-9:
        mean = min(max(mean, 0.0), 1.0)

    return FeatureVector(
        frequency=frequency,
        skewness=skewness,
        mean=mean,
        variance=m2,
        linearity=linearity,
        n_peaks=n_peaks,
    )
