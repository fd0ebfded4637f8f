"""Kernel functions and bandwidth defaults.

Weights are computed without the usual 1/h normalization: every consumer in
this package forms ratios of weight sums, where the factor cancels, and the
unnormalized form keeps the uniform kernel's weights exactly representable
(0.5), which the binned/uniform equivalence contract relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

KERNEL_KINDS = ("gaussian", "epanechnikov", "uniform")

# Half-width, in bandwidth units, beyond which a kernel's weight is treated
# as zero. Exact for the compact kernels; for the gaussian, exp(-32) ~ 1e-14
# relative, far below every tolerance in the package.
_CUTOFFS = {"gaussian": 8.0, "epanechnikov": 1.0, "uniform": 1.0}

# K(0), used for the denominator floor.
_PEAKS = {
    "gaussian": 1.0 / np.sqrt(2.0 * np.pi),
    "epanechnikov": 0.75,
    "uniform": 0.5,
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus bandwidths.

    h_k smooths the level (conditioning) coordinate; h_h smooths the slope
    coordinate and is only consulted by the joint estimator, so it may be
    left unset for the others.
    """

    kind: str = "gaussian"
    h_k: float = 1.0
    h_h: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not np.isfinite(self.h_k) or self.h_k <= 0:
            raise ValueError(f"h_k must be a positive real, got {self.h_k!r}")
        if self.h_h is not None and (not np.isfinite(self.h_h) or self.h_h <= 0):
            raise ValueError(f"h_h must be a positive real when given, got {self.h_h!r}")

    @property
    def cutoff(self) -> float:
        return _CUTOFFS[self.kind]

    @property
    def peak(self) -> float:
        return _PEAKS[self.kind]


def kernel_weights(kind: str, u: np.ndarray) -> np.ndarray:
    """Evaluate the kernel K at scaled offsets u (no 1/h factor)."""
    if kind == "gaussian":
        return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    if kind == "epanechnikov":
        out = 0.75 * (1.0 - u * u)
        return np.where(np.abs(u) <= 1.0, np.maximum(out, 0.0), 0.0)
    if kind == "uniform":
        return np.where(np.abs(u) <= 1.0, 0.5, 0.0)
    raise ValueError(f"unknown kernel kind {kind!r}")


def kernel_cdf(kind: str, u: np.ndarray) -> np.ndarray:
    """Integrated kernel H(u) = int_{-inf}^{u} K. A CDF: 0 to 1, no 1/h."""
    if kind == "gaussian":
        return ndtr(u)
    if kind == "epanechnikov":
        clipped = np.clip(u, -1.0, 1.0)
        return 0.25 * (2.0 + 3.0 * clipped - clipped**3)
    if kind == "uniform":
        return np.clip(0.5 * (u + 1.0), 0.0, 1.0)
    raise ValueError(f"unknown kernel kind {kind!r}")


def silverman_bandwidth(values: np.ndarray) -> float:
    """Rule-of-thumb bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Falls back to whichever spread measure is positive when the other
    degenerates; a hard floor keeps the result usable on constant samples.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 values for a bandwidth")
    sd = float(np.std(x))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr_scaled = float(q75 - q25) / 1.34
    spread = min(sd, iqr_scaled)
    if spread <= 0.0:
        spread = max(sd, iqr_scaled, 1e-8)
    return 0.9 * spread * n ** (-0.2)
