"""Hard thresholding: projection onto the set of k-sparse vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = ["HtConfig", "k_from_ratio", "top_k_support", "trunc"]


@dataclass(frozen=True)
class HtConfig:
    """Keep ``k`` coordinates per step; ties in magnitude keep the lower index."""

    k: int
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if self.tie_break != "lowest-index":
            raise ValueError(f"unsupported tie_break rule {self.tie_break!r}")

    @classmethod
    def from_ratio(cls, d: int, beta: float) -> "HtConfig":
        return cls(k_from_ratio(d, beta))


def _check_k(k, d: int) -> int:
    if int(k) != k:
        raise ValueError(f"k must be an integer, got {k!r}")
    k = int(k)
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must lie in [1, d={d}]")
    return k


def top_k_support(theta, k: int) -> np.ndarray:
    """Sorted indices of the ``k`` largest ``|theta_i|``, lower index winning ties.

    Runs in expected O(d): one ``np.partition`` finds the k-th largest
    magnitude, then ties at that magnitude are filled in index order.
    """
    a = np.abs(np.asarray(theta, dtype=np.float64))
    d = a.size
    k = _check_k(k, d)
    if k == d:
        return np.arange(d)
    thresh = np.partition(a, d - k)[d - k]
    above = a > thresh
    need = k - int(np.count_nonzero(above))
    keep = above.copy()
    keep[np.flatnonzero(a == thresh)[:need]] = True
    return np.flatnonzero(keep)


def trunc(theta, k: int) -> np.ndarray:
    """Zero all but the ``k`` largest-magnitude coordinates of ``theta``.

    The result is a Euclidean projection of ``theta`` onto
    ``{z : ||z||_0 <= k}``; kept coordinates are copied unchanged.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("theta must be a 1-d vector")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite entries")
    keep = top_k_support(theta, k)
    out = np.zeros_like(theta)
    out[keep] = theta[keep]
    return out


def k_from_ratio(d: int, beta: float) -> int:
    """Capacity that truncates a fraction ``beta`` of ``d`` coordinates.

    ``k = max(1, floor((1 - beta) * d))``; ``beta = 0.9`` keeps 10%.  ``beta``
    is read with decimal-literal semantics so that ``0.9 * 100`` yields 10, not 9.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d!r}")
    b = Fraction(str(float(beta)))
    if not 0 <= b < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta!r}")
    return max(1, math.floor((1 - b) * int(d)))
