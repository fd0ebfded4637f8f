"""Trajectory integration and everything built on top of it.

The estimated quantile gradient xi_alpha defines the autonomous equation
dz/ds = xi_alpha(z). Integrating it from a starting level produces a quantile
trajectory; the same machinery drives mean trajectories, subject-specific
predictions with a ramped alpha schedule, and bootstrap difference bands.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._pool import pooled_map
from .conditional import (
    ConditionalCdf,
    ConditionalMeanGradient,
    FitConfig,
    conditional_mean,
    fit_conditional_cdf,
    invert_to_quantile,
)
from .errors import (
    DomainError,
    InsufficientLocalDataError,
    InversionFailureError,
    QtrajError,
)
from .kernels import KernelSpec
from .snippets import LevelSlopePair, SnippetDataset, resample_pairs

INTEGRATOR_METHODS = ("euler", "rk4")

EXIT_COMPLETED = "completed"
EXIT_LEFT_SUPPORT = "left_support"
EXIT_GRADIENT_ERROR = "gradient_error"


@dataclass(frozen=True)
class IntegratorSpec:
    """Method, step size and horizon for a trajectory integration."""

    horizon: float
    step: float | None = None
    method: str = "rk4"
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if self.method not in INTEGRATOR_METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {INTEGRATOR_METHODS}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be a positive real, got {self.horizon!r}")
        step = self.step if self.step is not None else self.horizon / 1000.0
        if not (math.isfinite(step) and 0 < step <= self.horizon):
            raise ValueError(f"step must satisfy 0 < step <= horizon, got {step!r}")
        object.__setattr__(self, "step", float(step))
        needed = math.ceil(self.horizon / step)
        max_steps = self.max_steps if self.max_steps is not None else needed + 8
        if max_steps < needed:
            raise ValueError(f"max_steps={max_steps} cannot cover horizon/step={needed}")
        object.__setattr__(self, "max_steps", int(max_steps))


def s_grid(spec: IntegratorSpec) -> np.ndarray:
    """Arithmetic grid 0, step, 2*step, ... with a final (possibly short) step
    landing exactly on the horizon."""
    n_full = int(math.floor(spec.horizon / spec.step + 1e-9))
    grid = spec.step * np.arange(n_full + 1, dtype=float)
    if grid[-1] >= spec.horizon or spec.horizon - grid[-1] <= 1e-12 * spec.horizon:
        grid[-1] = spec.horizon
    else:
        grid = np.append(grid, spec.horizon)
    return grid


@dataclass(frozen=True)
class PredictionSchedule:
    """Linear ramp from alpha_start at s=0 to alpha_target at s=s_star, constant after."""

    alpha_start: float
    alpha_target: float
    s_star: float

    def __post_init__(self) -> None:
        for name in ("alpha_start", "alpha_target"):
            val = getattr(self, name)
            if not (0.0 < val < 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {val!r}")
        if not (math.isfinite(self.s_star) and self.s_star > 0):
            raise ValueError(f"s_star must be a positive real, got {self.s_star!r}")

    def to_json_dict(self) -> dict:
        return {
            "alpha_start": self.alpha_start,
            "alpha_target": self.alpha_target,
            "s_star": self.s_star,
        }


def alpha_schedule(schedule: PredictionSchedule, s: float) -> float:
    """Evaluate the ramp; exact at the knots by construction."""
    if s < 0:
        raise ValueError(f"s must be nonnegative, got {s!r}")
    if s < schedule.s_star:
        return schedule.alpha_start + (schedule.alpha_target - schedule.alpha_start) * (
            s / schedule.s_star
        )
    return schedule.alpha_target


@dataclass(frozen=True)
class TrajectorySolution:
    """An integrated trajectory plus how it ended.

    values[0] is the starting level exactly; s is the arithmetic grid prefix
    actually covered. A truncated solution records where and why it stopped.
    """

    alpha: float | str
    x0: float
    s: np.ndarray
    values: np.ndarray
    method: str
    step: float
    horizon: float
    exit_reason: str
    truncated_at: float | None
    seed: int | None = None
    schedule: PredictionSchedule | None = None

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["s", "value"])
            for s_val, v in zip(self.s, self.values):
                writer.writerow([repr(float(s_val)), repr(float(v))])

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "x0": self.x0,
            "method": self.method,
            "step": self.step,
            "horizon": self.horizon,
            "exit_reason": self.exit_reason,
            "truncated_at": self.truncated_at,
            "seed": self.seed,
            "schedule": None if self.schedule is None else self.schedule.to_json_dict(),
            "s": [float(v) for v in self.s],
            "values": [float(v) for v in self.values],
        }


@dataclass(frozen=True)
class FunctionGradient:
    """Adapter so a plain callable can act as a gradient (tests, oracles)."""

    fn: Callable[[float], float]
    domain: tuple[float, float] = (-math.inf, math.inf)

    def evaluate(self, x: float) -> float:
        lo, hi = self.domain
        if not (lo <= x <= hi):
            raise DomainError(f"level {x!r} outside the supported interval [{lo!r}, {hi!r}]")
        return self.fn(x)


def _phi(method: str, xi: Callable[[float], float], psi: float, h: float) -> float:
    """One-step increment function: Euler slope or the classical RK4 average."""
    if method == "euler":
        return xi(psi)
    k1 = xi(psi)
    k2 = xi(psi + 0.5 * h * k1)
    k3 = xi(psi + 0.5 * h * k2)
    k4 = xi(psi + h * k3)
    return (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def local_discretization_error(z_of_s: Callable[[float], float],
                               xi: Callable[[float], float],
                               s_star: float, delta: float, method: str) -> float:
    """Difference quotient of the exact solution minus the increment function.

    Scales as O(delta) for euler and O(delta^4) for rk4 on smooth gradients.
    """
    if delta == 0.0:
        return 0.0
    quotient = (z_of_s(s_star + delta) - z_of_s(s_star)) / delta
    return quotient - _phi(method, xi, z_of_s(s_star), delta)


def _integrate_loop(phi_fn, x0: float, spec: IntegratorSpec,
                    domain: tuple[float, float]):
    lo, hi = domain
    if not (lo <= x0 <= hi):
        raise DomainError(f"start level {x0!r} outside the supported interval [{lo!r}, {hi!r}]")
    grid = s_grid(spec)
    values = [float(x0)]
    exit_reason = EXIT_COMPLETED
    truncated_at: float | None = None
    psi = float(x0)
    for i in range(grid.size - 1):
        h = float(grid[i + 1] - grid[i])
        try:
            phi = phi_fn(float(grid[i]), psi, h)
        except DomainError:
            exit_reason, truncated_at = EXIT_LEFT_SUPPORT, float(grid[i])
            break
        except (InsufficientLocalDataError, InversionFailureError):
            exit_reason, truncated_at = EXIT_GRADIENT_ERROR, float(grid[i])
            break
        nxt = psi + h * phi
        if not (lo <= nxt <= hi):
            exit_reason, truncated_at = EXIT_LEFT_SUPPORT, float(grid[i])
            break
        values.append(nxt)
        psi = nxt
    vals = np.array(values, dtype=float)
    return grid[: vals.size], vals, exit_reason, truncated_at


def integrate(gradient, x0: float, spec: IntegratorSpec,
              alpha: float | str | None = None) -> TrajectorySolution:
    """Integrate dz/ds = gradient(z) from z(0) = x0.

    The gradient must expose .domain and .evaluate. The integration stops
    early (truncates) if the next state would leave the domain or a stage
    evaluation steps outside it; gradient failures inside the domain truncate
    with exit_reason "gradient_error" and the partial solution is returned.
    """
    phi_fn = lambda s, psi, h: _phi(spec.method, gradient.evaluate, psi, h)
    s, values, exit_reason, truncated_at = _integrate_loop(phi_fn, x0, spec, gradient.domain)
    if alpha is None:
        alpha = getattr(gradient, "alpha", "custom")
    return TrajectorySolution(
        alpha=alpha, x0=float(x0), s=s, values=values, method=spec.method,
        step=spec.step, horizon=spec.horizon, exit_reason=exit_reason,
        truncated_at=truncated_at,
    )


def quantile_trajectory(cdf: ConditionalCdf, alpha: float, x0: float,
                        spec: IntegratorSpec) -> TrajectorySolution:
    """Invert the CDF at alpha and integrate the resulting gradient."""
    gradient = invert_to_quantile(cdf, alpha)
    return integrate(gradient, x0, spec, alpha=float(alpha))


def mean_trajectory(dataset: SnippetDataset, x0: float, spec: IntegratorSpec,
                    kernel: KernelSpec | None = None) -> TrajectorySolution:
    """Integrate the kernel-smoothed conditional mean instead of a quantile."""
    gradient = conditional_mean(dataset, kernel)
    return integrate(gradient, x0, spec, alpha="mean")


def values_on_grid(solution: TrajectorySolution, grid: np.ndarray) -> np.ndarray:
    """Solution values padded with NaN beyond any truncation point."""
    out = np.full(grid.size, np.nan)
    out[: solution.values.size] = solution.values
    return out


def held_values_on_grid(solution: TrajectorySolution, grid: np.ndarray) -> np.ndarray:
    """Solution values padded by holding the last value (for error integrals)."""
    out = np.full(grid.size, float(solution.values[-1]))
    out[: solution.values.size] = solution.values
    return out


@dataclass(frozen=True)
class SlopeField:
    """Gradient evaluations over a level grid; failures recorded, not fatal."""

    alpha: float
    points: tuple[tuple[float, float], ...]
    missing: tuple[tuple[float, str], ...]


def slope_field(cdf: ConditionalCdf, alpha: float,
                levels: Sequence[float]) -> SlopeField:
    gradient = invert_to_quantile(cdf, alpha)
    points: list[tuple[float, float]] = []
    missing: list[tuple[float, str]] = []
    for x in levels:
        try:
            points.append((float(x), gradient.evaluate(float(x))))
        except (DomainError, InsufficientLocalDataError, InversionFailureError) as exc:
            missing.append((float(x), str(exc)))
    return SlopeField(alpha=float(alpha), points=tuple(points), missing=tuple(missing))


def estimate_alpha_star(pair: LevelSlopePair, cdf: ConditionalCdf) -> float:
    """Where the subject's own slope sits in the local slope distribution.

    Evaluated at the subject's last observed level and clamped to [0.01, 0.99]
    so the result is always usable as a quantile level.
    """
    value = cdf.evaluate(pair.last_level, pair.slope)
    return min(max(value, 0.01), 0.99)


def prediction_trajectory(cdf: ConditionalCdf, pair: LevelSlopePair,
                          target_alpha: float, spec: IntegratorSpec) -> TrajectorySolution:
    """Forward prediction from a subject's last level.

    The quantile level ramps linearly from the subject's own alpha-star to
    target_alpha over s_star = time_span/2, then stays at target_alpha; the
    quantile is re-inverted at the current schedule value every step. Euler is
    the recommended method here since the effective gradient is only piecewise
    smooth in s at the ramp knot.
    """
    if not (0.0 < target_alpha < 1.0):
        raise ValueError(f"target_alpha must lie in (0, 1), got {target_alpha!r}")
    a_star = estimate_alpha_star(pair, cdf)
    schedule = PredictionSchedule(alpha_start=a_star, alpha_target=float(target_alpha),
                                  s_star=pair.time_span / 2.0)

    def xi_at(s: float, psi: float) -> float:
        return invert_to_quantile(cdf, alpha_schedule(schedule, s)).evaluate(psi)

    if spec.method == "euler":
        phi_fn = lambda s, psi, h: xi_at(s, psi)
    else:
        def phi_fn(s: float, psi: float, h: float) -> float:
            k1 = xi_at(s, psi)
            k2 = xi_at(s + 0.5 * h, psi + 0.5 * h * k1)
            k3 = xi_at(s + 0.5 * h, psi + 0.5 * h * k2)
            k4 = xi_at(s + h, psi + h * k3)
            return (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0

    s, values, exit_reason, truncated_at = _integrate_loop(
        phi_fn, pair.last_level, spec, cdf.level_range
    )
    return TrajectorySolution(
        alpha=float(target_alpha), x0=float(pair.last_level), s=s, values=values,
        method=spec.method, step=spec.step, horizon=spec.horizon,
        exit_reason=exit_reason, truncated_at=truncated_at, schedule=schedule,
    )


@dataclass(frozen=True)
class BandResult:
    """Pointwise bootstrap percentile bands for a trajectory difference."""

    alpha: float
    x0: float
    s: np.ndarray
    point: np.ndarray
    coverages: tuple[float, ...]
    lowers: tuple[np.ndarray, ...]
    uppers: tuple[np.ndarray, ...]
    replicate_ok: np.ndarray
    n_boot: int
    seed: int
    method: str
    step: float
    horizon: float

    def to_csv(self, path: str) -> None:
        header = ["s", "value"]
        for c in self.coverages:
            label = int(round(c * 100))
            header += [f"lower{label}", f"upper{label}"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, s_val in enumerate(self.s):
                row = [repr(float(s_val)), repr(float(self.point[i]))]
                for lo, hi in zip(self.lowers, self.uppers):
                    row += [repr(float(lo[i])), repr(float(hi[i]))]
                writer.writerow(row)

    def to_json_dict(self) -> dict:
        def listify(arr: np.ndarray) -> list:
            return [None if not math.isfinite(v) else float(v) for v in arr]

        bands = {}
        for c, lo, hi in zip(self.coverages, self.lowers, self.uppers):
            bands[f"{int(round(c * 100))}"] = {"lower": listify(lo), "upper": listify(hi)}
        return {
            "alpha": self.alpha,
            "x0": self.x0,
            "n_boot": self.n_boot,
            "seed": self.seed,
            "method": self.method,
            "step": self.step,
            "horizon": self.horizon,
            "coverages": list(self.coverages),
            "s": [float(v) for v in self.s],
            "point": listify(self.point),
            "bands": bands,
            "replicate_ok": [int(v) for v in self.replicate_ok],
        }


@dataclass(frozen=True)
class _BandContext:
    dataset1: SnippetDataset
    dataset2: SnippetDataset
    fit_config: FitConfig
    alpha: float
    x0: float
    spec: IntegratorSpec
    seed: int
    grid: np.ndarray


_BAND_CTX: _BandContext | None = None


def _band_init(ctx: _BandContext) -> None:
    global _BAND_CTX
    _BAND_CTX = ctx


def _trajectory_row(dataset: SnippetDataset, ctx: _BandContext) -> np.ndarray:
    try:
        cdf = fit_conditional_cdf(dataset, ctx.fit_config)
        sol = quantile_trajectory(cdf, ctx.alpha, ctx.x0, ctx.spec)
    except QtrajError:
        return np.full(ctx.grid.size, np.nan)
    return values_on_grid(sol, ctx.grid)


def _band_replicate(idx: int) -> np.ndarray:
    ctx = _BAND_CTX
    rng = np.random.default_rng(np.random.SeedSequence(entropy=ctx.seed, spawn_key=(idx,)))
    row1 = _trajectory_row(resample_pairs(ctx.dataset1, rng), ctx)
    row2 = _trajectory_row(resample_pairs(ctx.dataset2, rng), ctx)
    return row1 - row2


def _percentile_bands(rows: np.ndarray, coverages: Sequence[float]):
    """Pointwise percentile bands from replicate difference rows.

    A grid point where more than half the replicates failed gets NaN bands.
    Returns (per-s replicate counts, [(lower, upper) per coverage]).
    """
    n_boot = rows.shape[0]
    finite = np.isfinite(rows)
    counts = finite.sum(axis=0)
    defined = counts * 2 >= n_boot
    out = []
    for c in coverages:
        lo_q, hi_q = (1.0 - c) / 2.0, (1.0 + c) / 2.0
        lower = np.full(rows.shape[1], np.nan)
        upper = np.full(rows.shape[1], np.nan)
        for j in range(rows.shape[1]):
            if defined[j] and counts[j] > 0:
                col = rows[finite[:, j], j]
                lower[j] = np.quantile(col, lo_q)
                upper[j] = np.quantile(col, hi_q)
        out.append((lower, upper))
    return counts, out


def bootstrap_difference_bands(dataset1: SnippetDataset, dataset2: SnippetDataset,
                               alpha: float, x0: float, spec: IntegratorSpec,
                               n_boot: int = 200,
                               coverages: Sequence[float] = (0.90, 0.95),
                               seed: int = 0,
                               fit_config: FitConfig = FitConfig(),
                               workers: int = 1) -> BandResult:
    """Subject-level bootstrap bands for the difference of two quantile trajectories.

    Each replicate resamples subjects with replacement within each group,
    refits, and reintegrates; its random stream is keyed by (seed, replicate
    index) so the result does not depend on worker count. Replicates that
    fail (or truncate) at a grid point are dropped there and counted; a point
    where more than half fail gets NaN bands rather than failing the call.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if n_boot < 100:
        raise ValueError(f"n_boot must be at least 100, got {n_boot}")
    for c in coverages:
        if not (0.0 < c < 1.0):
            raise ValueError(f"coverage levels must lie in (0, 1), got {c!r}")

    grid = s_grid(spec)
    ctx = _BandContext(dataset1=dataset1, dataset2=dataset2, fit_config=fit_config,
                       alpha=float(alpha), x0=float(x0), spec=spec, seed=int(seed),
                       grid=grid)

    cdf1 = fit_conditional_cdf(dataset1, fit_config)
    cdf2 = fit_conditional_cdf(dataset2, fit_config)
    point1 = values_on_grid(quantile_trajectory(cdf1, alpha, x0, spec), grid)
    point2 = values_on_grid(quantile_trajectory(cdf2, alpha, x0, spec), grid)

    rows = np.vstack(pooled_map(_band_replicate, _band_init, ctx, n_boot, workers))
    counts, bands = _percentile_bands(rows, coverages)

    return BandResult(
        alpha=float(alpha), x0=float(x0), s=grid, point=point1 - point2,
        coverages=tuple(float(c) for c in coverages),
        lowers=tuple(b[0] for b in bands), uppers=tuple(b[1] for b in bands),
        replicate_ok=counts, n_boot=int(n_boot), seed=int(seed),
        method=spec.method, step=spec.step, horizon=spec.horizon,
    )
