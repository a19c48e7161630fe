"""
Laplacian-variance blur check deciding whether a frame needs deblurring.

The edge response of a 4-neighbour Laplacian collapses as an image loses
sharpness, so the population variance of that response is compared against
a threshold: at or below it the frame counts as blurred.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySet
from .imaging import LAPLACIAN, Image, convolve, to_grayscale

__all__ = ["BlurGateConfig", "BlurVerdict", "Calibration",
           "laplacian_variance", "verdict", "check", "calibrate", "calibrate_variances"]

DEFAULT_THRESHOLD = 100.0


@dataclass(frozen=True)
class BlurGateConfig:
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not (math.isfinite(self.threshold) and self.threshold > 0):
            raise ValueError(f"blur threshold must be finite and > 0, got {self.threshold}")


@dataclass(frozen=True)
class BlurVerdict:
    variance: float
    is_blurred: bool
    threshold_used: float

    def to_dict(self):
        return {"variance": self.variance, "is_blurred": self.is_blurred,
                "threshold": self.threshold_used}


@dataclass(frozen=True)
class Calibration:
    threshold: float
    separable: bool
    errors: int = 0


def laplacian_variance(img: Image) -> float:
    """Population variance of the unclamped Laplacian response of ``img``."""
    response = convolve(to_grayscale(img), LAPLACIAN)
    return float(response.var())


def verdict(variance: float, cfg: BlurGateConfig = BlurGateConfig()) -> BlurVerdict:
    # equality counts as blurred: only strictly higher variance bypasses deblurring
    return BlurVerdict(variance=variance, is_blurred=variance <= cfg.threshold,
                       threshold_used=cfg.threshold)


def check(img: Image, cfg: BlurGateConfig = BlurGateConfig()) -> BlurVerdict:
    return verdict(laplacian_variance(img), cfg)


def calibrate_variances(sharp: Sequence[float], blurred: Sequence[float]) -> Calibration:
    """Pick a threshold from precomputed variances.

    Separable sets get the midpoint of the gap. Otherwise every observed
    variance is tried as a cut point (``v <= t`` means blurred), plus half the
    smallest one to cover calling everything sharp. The fewest
    misclassifications wins, ties going to the lower value.
    """
    if len(sharp) == 0 or len(blurred) == 0:
        raise EmptySet("calibration needs at least one sharp and one blurred sample")
    vs = np.asarray(sharp, dtype=np.float64)
    vb = np.asarray(blurred, dtype=np.float64)
    if vs.min() > vb.max():
        return Calibration(threshold=float((vs.min() + vb.max()) / 2.0), separable=True)
    best_t, best_err = None, None
    observed = np.unique(np.concatenate([vs, vb]))
    # error counts only change at observed values; the one interval they miss is below the minimum
    candidates = [observed[0] / 2.0] if observed[0] > 0 else []
    for t in [*candidates, *observed]:
        err = int(np.count_nonzero(vs <= t) + np.count_nonzero(vb > t))
        if best_err is None or err < best_err:
            best_t, best_err = float(t), err
    return Calibration(threshold=best_t, separable=False, errors=best_err)


def calibrate(sharp_set: Iterable[Image], blurred_set: Iterable[Image]) -> Calibration:
    return calibrate_variances([laplacian_variance(i) for i in sharp_set],
                               [laplacian_variance(i) for i in blurred_set])
