"""Conditional distribution of slope given level, and its quantile inverse.

Four estimators share one contract: ``evaluate(x, z)`` approximates
F(z | level = x) = P(slope <= z | level = x). Inverting a fitted CDF at a
fixed probability yields a quantile gradient function of the level, which is
what the trajectory integrators consume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from .errors import (
    DomainError,
    FitFailureError,
    InsufficientLocalDataError,
    InversionFailureError,
)
from .kernels import KernelSpec, kernel_cdf, kernel_weights, silverman_bandwidth
from .snippets import SnippetDataset

# Bisection stops once the bracket is narrower than this. The documented
# contract is 1e-8; the tighter value makes the quantile's shift equivariance
# and the CDF fixed point hold deterministically at small slope bandwidths.
INVERSION_BRACKET_TOL = 1e-10

_MAX_BRACKET_DOUBLINGS = 10

FIT_METHODS = ("binned", "kernel", "joint-kernel", "logistic")


class _WeightedSample:
    """Level-sorted (X, Z) pairs with windowed kernel weights in X.

    Weights carry no 1/h factor (it cancels in every ratio). Queries outside
    the kernel's effective window of every point, or with total weight at or
    below the floor n * 1e-12 * K(0), raise InsufficientLocalDataError.
    """

    def __init__(self, levels: np.ndarray, slopes: np.ndarray, kernel: KernelSpec):
        order = np.argsort(levels, kind="stable")
        self.xs = np.ascontiguousarray(levels[order], dtype=float)
        self.zs = np.ascontiguousarray(slopes[order], dtype=float)
        self.kernel = kernel
        self.n = int(levels.size)
        self.floor = self.n * 1e-12 * kernel.peak

    def weights(self, x: float) -> tuple[np.ndarray, np.ndarray, float]:
        if not math.isfinite(x):
            raise ValueError(f"query level must be finite, got {x!r}")
        reach = self.kernel.cutoff * self.kernel.h_k
        lo = int(np.searchsorted(self.xs, x - reach, side="left"))
        hi = int(np.searchsorted(self.xs, x + reach, side="right"))
        w = kernel_weights(self.kernel.kind, (x - self.xs[lo:hi]) / self.kernel.h_k)
        den = float(w.sum())
        if den <= self.floor:
            raise InsufficientLocalDataError(
                f"no usable mass near level x={x!r} "
                f"({self.kernel.kind} kernel, h_k={self.kernel.h_k!r})"
            )
        return w, self.zs[lo:hi], den


class ConditionalCdf:
    """Base for fitted conditional CDFs F(z | x)."""

    method: str = ""

    def __init__(self, dataset: SnippetDataset):
        self.n = dataset.n
        self.level_range = dataset.level_range
        self.slope_range = dataset.slope_range

    def evaluate(self, x: float, z: float) -> float:
        raise NotImplementedError

    def d_dx(self, x: float, z: float) -> float:
        """Central finite difference of F in the level coordinate (diagnostic only)."""
        lo, hi = self.level_range
        step = 1e-5 * ((hi - lo) or 1.0)
        return (self.evaluate(x + step, z) - self.evaluate(x - step, z)) / (2.0 * step)

    def _quantile(self, x: float, alpha: float) -> float:
        raise NotImplementedError


class BinnedCdf(ConditionalCdf):
    """Empirical CDF over the pairs whose level falls in [x-h, x+h].

    Normalized by the in-bin count, so the estimate reaches 1 within any
    non-empty bin; an empty bin raises rather than returning 0/0.
    """

    method = "binned"

    def __init__(self, dataset: SnippetDataset, h: float):
        super().__init__(dataset)
        if not (math.isfinite(h) and h > 0):
            raise ValueError(f"bin half-width must be a positive real, got {h!r}")
        self.h = float(h)
        order = np.argsort(dataset.levels, kind="stable")
        self.xs = np.ascontiguousarray(dataset.levels[order], dtype=float)
        self.zs = np.ascontiguousarray(dataset.slopes[order], dtype=float)

    def _bin(self, x: float) -> np.ndarray:
        if not math.isfinite(x):
            raise ValueError(f"query level must be finite, got {x!r}")
        lo = int(np.searchsorted(self.xs, x - self.h, side="left"))
        hi = int(np.searchsorted(self.xs, x + self.h, side="right"))
        if hi == lo:
            raise InsufficientLocalDataError(
                f"empty bin at level x={x!r} (half-width h={self.h!r})"
            )
        return self.zs[lo:hi]

    def evaluate(self, x: float, z: float) -> float:
        zw = self._bin(x)
        return float(np.count_nonzero(zw <= z)) / float(zw.size)

    def _quantile(self, x: float, alpha: float) -> float:
        zw = self._bin(x)
        return _atom_quantile(zw, np.ones(zw.size), alpha)


class KernelCdf(ConditionalCdf):
    """Kernel-weighted empirical CDF: indicator in z, kernel smoothing in x."""

    method = "kernel"

    def __init__(self, dataset: SnippetDataset, kernel: KernelSpec):
        super().__init__(dataset)
        self.kernel = kernel
        self._sample = _WeightedSample(dataset.levels, dataset.slopes, kernel)

    def evaluate(self, x: float, z: float) -> float:
        w, zw, den = self._sample.weights(x)
        num = float(w[zw <= z].sum())
        return min(max(num / den, 0.0), 1.0)

    def _quantile(self, x: float, alpha: float) -> float:
        w, zw, _ = self._sample.weights(x)
        return _atom_quantile(zw, w, alpha)


class JointKernelCdf(ConditionalCdf):
    """Kernel smoothing in both coordinates: integrated kernel H in z.

    H enters as H((z - Z_i)/h_h) with no 1/h_h factor; it is a CDF, so the
    estimate is a smooth, strictly monotone function of z wherever the
    gaussian kernel is used.
    """

    method = "joint-kernel"

    def __init__(self, dataset: SnippetDataset, kernel: KernelSpec):
        super().__init__(dataset)
        if kernel.h_h is None:
            raise ValueError("joint-kernel estimation needs h_h set on the KernelSpec")
        self.kernel = kernel
        self._sample = _WeightedSample(dataset.levels, dataset.slopes, kernel)

    def evaluate(self, x: float, z: float) -> float:
        w, zw, den = self._sample.weights(x)
        num = float(np.dot(w, kernel_cdf(self.kernel.kind, (z - zw) / self.kernel.h_h)))
        return min(max(num / den, 0.0), 1.0)

    def _quantile(self, x: float, alpha: float) -> float:
        w, zw, den = self._sample.weights(x)
        h_h = self.kernel.h_h
        kind = self.kernel.kind
        buf = np.empty_like(zw)

        if kind == "gaussian":
            def f(z: float) -> float:
                np.subtract(z, zw, out=buf)
                np.divide(buf, h_h, out=buf)
                ndtr(buf, out=buf)
                return float(np.dot(w, buf)) / den
        else:
            def f(z: float) -> float:
                return float(np.dot(w, kernel_cdf(kind, (z - zw) / h_h))) / den

        z_lo, z_hi = self.slope_range
        margin = 10.0 * h_h
        return _bisect_quantile(f, z_lo - margin, z_hi + margin, alpha,
                                step0=max(margin, 1e-3))


class LogisticCdf(ConditionalCdf):
    """Parametric CDF expit(b0 + b1*x + b2*z) fit on pseudo-observations."""

    method = "logistic"

    def __init__(self, dataset: SnippetDataset, beta: np.ndarray, z_grid: np.ndarray):
        super().__init__(dataset)
        self.beta = np.asarray(beta, dtype=float)
        self.z_grid = np.asarray(z_grid, dtype=float)

    def evaluate(self, x: float, z: float) -> float:
        b0, b1, b2 = self.beta
        return float(expit(b0 + b1 * x + b2 * z))

    def _quantile(self, x: float, alpha: float) -> float:
        z_lo, z_hi = self.slope_range
        step0 = max(0.5 * (z_hi - z_lo), 1e-3)
        return _bisect_quantile(lambda z: self.evaluate(x, z), z_lo, z_hi, alpha,
                                step0=step0)


def fit_binned(dataset: SnippetDataset, h: float | None = None) -> BinnedCdf:
    """Bin the level axis with half-width h (Silverman default)."""
    if h is None:
        h = silverman_bandwidth(dataset.levels)
    return BinnedCdf(dataset, h)


def fit_kernel(dataset: SnippetDataset, kernel: KernelSpec | None = None) -> KernelCdf:
    """Kernel-in-x estimator; bandwidth defaults to Silverman on the levels."""
    if kernel is None:
        kernel = KernelSpec(kind="gaussian", h_k=silverman_bandwidth(dataset.levels))
    return KernelCdf(dataset, kernel)


def fit_joint_kernel(dataset: SnippetDataset, kernel: KernelSpec | None = None) -> JointKernelCdf:
    """Kernel in both coordinates; missing bandwidths default to Silverman."""
    if kernel is None:
        kernel = KernelSpec(
            kind="gaussian",
            h_k=silverman_bandwidth(dataset.levels),
            h_h=silverman_bandwidth(dataset.slopes),
        )
    elif kernel.h_h is None:
        kernel = KernelSpec(kind=kernel.kind, h_k=kernel.h_k,
                            h_h=silverman_bandwidth(dataset.slopes))
    return JointKernelCdf(dataset, kernel)


def fit_logistic(dataset: SnippetDataset, z_grid: np.ndarray | None = None,
                 max_iter: int = 100, tol: float = 1e-9) -> LogisticCdf:
    """Fit expit(b0 + b1*x + b2*z) by IRLS on indicator pseudo-observations.

    Each pair contributes one binary response 1{Z_i <= z} per grid value z,
    with covariates (X_i, z). The grid must span the observed slope range.
    """
    z_lo, z_hi = dataset.slope_range
    if z_grid is None:
        grid = np.linspace(z_lo, z_hi, 21)
    else:
        grid = np.asarray(z_grid, dtype=float)
        if grid.size < 2:
            raise ValueError("z_grid needs at least 2 points")
        if grid.min() > z_lo or grid.max() < z_hi:
            raise ValueError("z_grid must span the dataset's slope range")

    x_col = np.repeat(dataset.levels, grid.size)
    z_col = np.tile(grid, dataset.n)
    design = np.column_stack([np.ones(x_col.size), x_col, z_col])
    y = (np.repeat(dataset.slopes, grid.size) <= z_col).astype(float)

    if y.all() or not y.any():
        raise FitFailureError(
            "perfect separation: all pseudo-responses identical "
            "(degenerate slope distribution)"
        )

    beta = np.zeros(3)
    eta = design @ beta
    for _ in range(max_iter):
        p = expit(eta)
        wgt = np.maximum(p * (1.0 - p), 1e-10)
        working = eta + (y - p) / wgt
        sw = np.sqrt(wgt)
        beta, *_ = np.linalg.lstsq(design * sw[:, None], working * sw, rcond=None)
        eta_new = design @ beta
        shift = float(np.max(np.abs(eta_new - eta)))
        eta = eta_new
        if shift < tol:
            break
    else:
        raise FitFailureError(f"IRLS did not converge in {max_iter} iterations")

    if not np.all(np.isfinite(beta)) or float(np.abs(beta).max()) > 1e8:
        raise FitFailureError("coefficients diverged (quasi-separation)")
    return LogisticCdf(dataset, beta, grid)


@dataclass(frozen=True)
class FitConfig:
    """Picklable recipe for fitting a conditional CDF (used by refit loops)."""

    method: str = "joint-kernel"
    kernel: str = "gaussian"
    h_k: float | None = None
    h_h: float | None = None
    bin_width: float | None = None
    z_grid_size: int = 21

    def __post_init__(self) -> None:
        if self.method not in FIT_METHODS:
            raise ValueError(f"unknown estimator {self.method!r}; expected one of {FIT_METHODS}")


def fit_conditional_cdf(dataset: SnippetDataset, config: FitConfig) -> ConditionalCdf:
    """Dispatch a FitConfig to the matching fit function."""
    if config.method == "binned":
        return fit_binned(dataset, config.bin_width)
    if config.method == "logistic":
        z_lo, z_hi = dataset.slope_range
        return fit_logistic(dataset, np.linspace(z_lo, z_hi, config.z_grid_size))
    h_k = config.h_k if config.h_k is not None else silverman_bandwidth(dataset.levels)
    if config.method == "kernel":
        return fit_kernel(dataset, KernelSpec(kind=config.kernel, h_k=h_k))
    h_h = config.h_h if config.h_h is not None else silverman_bandwidth(dataset.slopes)
    return fit_joint_kernel(dataset, KernelSpec(kind=config.kernel, h_k=h_k, h_h=h_h))


@dataclass(frozen=True)
class QuantileGradient:
    """xi_alpha(x): the alpha-quantile of slope given level, as a function.

    Evaluation is permitted on the dataset's level range only; outside it the
    estimator has no support and a DomainError is raised.
    """

    cdf: ConditionalCdf
    alpha: float
    domain: tuple[float, float]

    def evaluate(self, x: float) -> float:
        lo, hi = self.domain
        if not (lo <= x <= hi):
            raise DomainError(f"level {x!r} outside the supported interval [{lo!r}, {hi!r}]")
        return self.cdf._quantile(x, self.alpha)


def invert_to_quantile(cdf: ConditionalCdf, alpha: float) -> QuantileGradient:
    """Invert a fitted CDF at probability alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return QuantileGradient(cdf=cdf, alpha=float(alpha), domain=cdf.level_range)


class ConditionalMeanGradient:
    """Kernel-weighted mean of slope given level; same interface as QuantileGradient."""

    def __init__(self, dataset: SnippetDataset, kernel: KernelSpec):
        self.kernel = kernel
        self.domain = dataset.level_range
        self._sample = _WeightedSample(dataset.levels, dataset.slopes, kernel)

    def evaluate(self, x: float) -> float:
        lo, hi = self.domain
        if not (lo <= x <= hi):
            raise DomainError(f"level {x!r} outside the supported interval [{lo!r}, {hi!r}]")
        w, zw, den = self._sample.weights(x)
        return float(np.dot(w, zw)) / den


def conditional_mean(dataset: SnippetDataset, kernel: KernelSpec | None = None) -> ConditionalMeanGradient:
    """Nadaraya-Watson regression of slope on level, as a gradient function."""
    if kernel is None:
        kernel = KernelSpec(kind="gaussian", h_k=silverman_bandwidth(dataset.levels))
    return ConditionalMeanGradient(dataset, kernel)


def _atom_quantile(zw: np.ndarray, w: np.ndarray, alpha: float) -> float:
    """Smallest data-supported z whose cumulative weight fraction reaches alpha."""
    order = np.argsort(zw, kind="stable")
    cum = np.cumsum(w[order])
    idx = int(np.searchsorted(cum, alpha * cum[-1], side="left"))
    if idx >= order.size:
        idx = order.size - 1
    return float(zw[order[idx]])


def _bisect_quantile(f, lo: float, hi: float, alpha: float, step0: float) -> float:
    """Root of f(z) = alpha for a nondecreasing CDF-like f.

    The bracket is expanded outward by doubling while f has not crossed alpha
    at an end, at most _MAX_BRACKET_DOUBLINGS times per side.
    """
    step = step0
    for attempt in range(_MAX_BRACKET_DOUBLINGS + 1):
        if f(lo) < alpha:
            break
        lo -= step
        step *= 2.0
    else:
        raise InversionFailureError(
            f"CDF never fell below alpha={alpha!r} on any expanded lower bracket"
        )
    step = step0
    for attempt in range(_MAX_BRACKET_DOUBLINGS + 1):
        if f(hi) >= alpha:
            break
        hi += step
        step *= 2.0
    else:
        raise InversionFailureError(
            f"CDF never reached alpha={alpha!r} on any expanded upper bracket"
        )
    while hi - lo >= INVERSION_BRACKET_TOL:
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            break
        if f(mid) >= alpha:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
