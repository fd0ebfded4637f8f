"""Synthetic snippet generation, a Monte Carlo oracle, and the AISE benchmark.

The generating process is an exponential decay family: each subject follows
y(t) = exp(-b (t + 1)) with its own rate b, observed only inside a short
random window. The oracle recovers the true conditional slope quantiles by
brute force (binned quantiles over a huge draw) so estimated trajectories can
be scored against the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._pool import pooled_map
from .conditional import fit_joint_kernel
from .dynamics import (
    FunctionGradient,
    IntegratorSpec,
    held_values_on_grid,
    integrate,
    quantile_trajectory,
    s_grid,
)
from .errors import OracleRefinementError, QtrajError
from .kernels import KernelSpec
from .snippets import (
    LevelSlopePair,
    Snippet,
    SnippetDataset,
    reduce_snippets,
)

NOISE_KINDS = ("true_xz", "noiseless", "gaussian")

# Spawn-key prefix separating oracle streams from replicate streams.
_ORACLE_KEY = 1_000_003


def decay_value(b, t):
    """The generating family: y(t) = exp(-b (t + 1))."""
    return np.exp(-np.asarray(b) * (np.asarray(t) + 1.0))


@dataclass(frozen=True)
class SimulationConfig:
    """Recipe for one synthetic dataset."""

    n: int
    noise: str = "true_xz"
    sigma: float = 0.0
    b_range: tuple[float, float] = (0.3, 0.5)
    t_center_range: tuple[float, float] = (0.5, 9.5)
    window_half_width: float = 0.5
    t_domain: tuple[float, float] = (0.0, 10.0)
    n_obs_choices: tuple[int, ...] = (3, 4, 5)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise!r}; expected one of {NOISE_KINDS}")
        if self.noise == "gaussian":
            if not (math.isfinite(self.sigma) and self.sigma > 0):
                raise ValueError(f"gaussian noise needs sigma > 0, got {self.sigma!r}")
        elif self.sigma != 0.0:
            raise ValueError(f"sigma must be 0 for noise kind {self.noise!r}")
        if not self.b_range[0] < self.b_range[1]:
            raise ValueError(f"b_range must be an increasing pair, got {self.b_range!r}")
        if not self.t_center_range[0] < self.t_center_range[1]:
            raise ValueError(f"t_center_range must be an increasing pair, got {self.t_center_range!r}")
        if not self.window_half_width > 0:
            raise ValueError("window_half_width must be positive")
        if (self.t_center_range[0] - self.window_half_width < self.t_domain[0]
                or self.t_center_range[1] + self.window_half_width > self.t_domain[1]):
            raise ValueError("observation windows must stay inside t_domain")
        if len(self.n_obs_choices) == 0 or any(int(k) < 2 for k in self.n_obs_choices):
            raise ValueError("n_obs_choices must be nonempty with every choice >= 2")


@dataclass(frozen=True)
class SimulatedData:
    """Generated dataset plus the raw snippets and the true per-subject draws."""

    dataset: SnippetDataset
    snippets: tuple[Snippet, ...]
    b: np.ndarray
    t_centers: np.ndarray
    config: SimulationConfig


def generate_snippets(config: SimulationConfig,
                      rng: np.random.Generator | None = None) -> SimulatedData:
    """Draw one synthetic dataset.

    Draw order is fixed (rates, window centers, observation counts, times,
    then noise) so that scenarios sharing a seed share subjects: the noiseless
    and gaussian variants of the same replicate see identical windows, and
    different sigmas scale identical standard normal draws.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n
    b = rng.uniform(config.b_range[0], config.b_range[1], n)
    t_centers = rng.uniform(config.t_center_range[0], config.t_center_range[1], n)
    ids = [f"sim{i:06d}" for i in range(n)]

    if config.noise == "true_xz":
        levels = decay_value(b, t_centers)
        slopes = -b * levels
        pairs = tuple(
            LevelSlopePair(
                subject_id=ids[i], level=float(levels[i]), slope=float(slopes[i]),
                n_obs=2, time_span=2.0 * config.window_half_width,
                last_level=float(levels[i]),
            )
            for i in range(n)
        )
        dataset = SnippetDataset(pairs=pairs)
        return SimulatedData(dataset=dataset, snippets=(), b=b, t_centers=t_centers,
                             config=config)

    counts = rng.choice(np.asarray(config.n_obs_choices, dtype=np.int64), size=n)
    half = config.window_half_width
    times = [np.sort(rng.uniform(t_centers[i] - half, t_centers[i] + half, int(counts[i])))
             for i in range(n)]
    values = [decay_value(b[i], times[i]) for i in range(n)]
    if config.noise == "gaussian":
        eps = rng.standard_normal(int(counts.sum()))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        values = [values[i] + config.sigma * eps[offsets[i]:offsets[i + 1]]
                  for i in range(n)]

    snippets = tuple(
        Snippet(subject_id=ids[i], times=tuple(float(t) for t in times[i]),
                values=tuple(float(v) for v in values[i]))
        for i in range(n)
    )
    return SimulatedData(dataset=reduce_snippets(snippets), snippets=snippets,
                         b=b, t_centers=t_centers, config=config)


@dataclass(frozen=True)
class OracleGradient:
    """Brute-force slope quantile as a function of level.

    Built from equal-count bins over a large Monte Carlo draw of (level,
    slope) pairs; evaluation interpolates linearly between bin centers and
    refuses queries outside the binned range.
    """

    alpha: float
    centers: np.ndarray
    values: np.ndarray
    mc_size: int
    n_bins: int

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.centers[0]), float(self.centers[-1])

    def evaluate(self, x: float) -> float:
        lo, hi = self.domain
        if not (lo <= x <= hi):
            raise OracleRefinementError(
                f"level {x!r} outside the oracle's resolved range [{lo!r}, {hi!r}]; "
                "increase mc_size"
            )
        return float(np.interp(x, self.centers, self.values))


def oracle_gradient(alpha: float, mc_size: int = 1_000_000,
                    seed: int | np.random.SeedSequence = 0,
                    b_range: tuple[float, float] = (0.3, 0.5),
                    t_center_range: tuple[float, float] = (0.5, 9.5),
                    n_bins: int | None = None) -> OracleGradient:
    """Monte Carlo estimate of the true alpha-quantile gradient."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if mc_size < 1000:
        raise ValueError(f"mc_size must be at least 1000, got {mc_size}")
    rng = np.random.default_rng(seed)
    b = rng.uniform(b_range[0], b_range[1], mc_size)
    t = rng.uniform(t_center_range[0], t_center_range[1], mc_size)
    levels = decay_value(b, t)
    slopes = -b * levels
    order = np.argsort(levels, kind="stable")
    xs = levels[order]
    zs = slopes[order]
    if n_bins is None:
        n_bins = int(np.clip(mc_size // 2000, 50, 1000))
    n_bins = min(n_bins, mc_size)
    edges = np.linspace(0, mc_size, n_bins + 1).astype(int)
    centers = np.empty(n_bins)
    quantiles = np.empty(n_bins)
    for i in range(n_bins):
        lo, hi = edges[i], edges[i + 1]
        m = hi - lo
        # slice of xs is sorted, so the median is an index lookup
        centers[i] = 0.5 * (xs[lo + (m - 1) // 2] + xs[lo + m // 2])
        quantiles[i] = np.quantile(zs[lo:hi], alpha)
    return OracleGradient(alpha=float(alpha), centers=centers, values=quantiles,
                          mc_size=int(mc_size), n_bins=int(n_bins))


@dataclass(frozen=True)
class OracleTrajectory:
    """Reference trajectory integrated from the brute-force gradient."""

    alpha: float
    x0: float
    s: np.ndarray
    values: np.ndarray
    mc_size: int
    n_bins: int
    delta: float


def oracle_quantile_trajectory(alpha: float, x0: float, s_values: np.ndarray,
                               mc_size: int = 1_000_000,
                               seed: int | np.random.SeedSequence = 0,
                               b_range: tuple[float, float] = (0.3, 0.5),
                               t_center_range: tuple[float, float] = (0.5, 9.5),
                               delta: float = 1e-3) -> OracleTrajectory:
    """Integrate the oracle gradient finely and sample it on s_values."""
    grad = oracle_gradient(alpha, mc_size=mc_size, seed=seed, b_range=b_range,
                           t_center_range=t_center_range)
    s_values = np.asarray(s_values, dtype=float)
    horizon = float(s_values.max())
    spec = IntegratorSpec(horizon=horizon, step=delta, method="rk4")
    sol = integrate(FunctionGradient(grad.evaluate, grad.domain), x0, spec, alpha=alpha)
    if sol.exit_reason != "completed":
        raise OracleRefinementError(
            f"oracle trajectory left the resolved range at s={sol.truncated_at!r}; "
            "increase mc_size"
        )
    values = np.interp(s_values, sol.s, sol.values)
    return OracleTrajectory(alpha=float(alpha), x0=float(x0), s=s_values,
                            values=values, mc_size=int(mc_size),
                            n_bins=grad.n_bins, delta=float(delta))


@dataclass(frozen=True)
class Scenario:
    """A named noise setting for the benchmark."""

    noise: str
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise!r}; expected one of {NOISE_KINDS}")
        if self.noise == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian scenarios need sigma > 0")
        if self.noise != "gaussian" and self.sigma != 0.0:
            raise ValueError(f"sigma must be 0 for scenario {self.noise!r}")

    @property
    def label(self) -> str:
        if self.noise == "gaussian":
            return f"gaussian_{self.sigma:g}"
        return self.noise

    @staticmethod
    def parse(text: str) -> "Scenario":
        """Parse 'true_xz', 'noiseless', or 'gaussian:<sigma>'."""
        if text in ("true_xz", "noiseless"):
            return Scenario(noise=text)
        if text.startswith("gaussian:"):
            return Scenario(noise="gaussian", sigma=float(text.split(":", 1)[1]))
        raise ValueError(
            f"cannot parse scenario {text!r}; expected true_xz, noiseless, or gaussian:<sigma>"
        )


@dataclass(frozen=True)
class AiseCell:
    """One benchmark cell: averaged integrated squared error, times 1000."""

    scenario: str
    n: int
    alpha: float
    aise_x1000: float
    n_reps: int
    n_failed: int
    warning: bool
    ise_x1000: tuple[float | None, ...]


@dataclass(frozen=True)
class AiseReport:
    cells: tuple[AiseCell, ...]
    scenarios: tuple[str, ...]
    ns: tuple[int, ...]
    alphas: tuple[float, ...]
    n_reps: int
    seed: int
    kernel: str
    h_k: float
    h_h: float
    x0: float
    horizon: float
    step: float
    method: str
    oracle_mc_size: int
    oracle_n_bins: int
    b_range: tuple[float, float]
    t_center_range: tuple[float, float]
    window_half_width: float
    n_obs_choices: tuple[int, ...]

    def cell(self, scenario: str, n: int, alpha: float) -> AiseCell:
        for c in self.cells:
            if c.scenario == scenario and c.n == n and c.alpha == alpha:
                return c
        raise KeyError(f"no cell ({scenario!r}, {n}, {alpha})")


@dataclass(frozen=True)
class _BenchContext:
    cells: tuple[tuple[Scenario, int], ...]
    alphas: tuple[float, ...]
    oracle_rows: np.ndarray
    grid: np.ndarray
    spec: IntegratorSpec
    kernel: str
    h_k: float
    h_h: float
    x0: float
    seed: int
    n_reps: int
    b_range: tuple[float, float]
    t_center_range: tuple[float, float]
    window_half_width: float
    n_obs_choices: tuple[int, ...]


_BENCH_CTX: _BenchContext | None = None


def _bench_init(ctx: _BenchContext) -> None:
    global _BENCH_CTX
    _BENCH_CTX = ctx


def _bench_replicate(idx: int) -> list[float | None]:
    ctx = _BENCH_CTX
    cell_idx, k = divmod(idx, ctx.n_reps)
    scenario, n = ctx.cells[cell_idx]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=ctx.seed, spawn_key=(k,)))
    try:
        sim = generate_snippets(
            SimulationConfig(n=n, noise=scenario.noise, sigma=scenario.sigma,
                             b_range=ctx.b_range, t_center_range=ctx.t_center_range,
                             window_half_width=ctx.window_half_width,
                             n_obs_choices=ctx.n_obs_choices),
            rng=rng,
        )
        cdf = fit_joint_kernel(sim.dataset,
                               KernelSpec(kind=ctx.kernel, h_k=ctx.h_k, h_h=ctx.h_h))
    except QtrajError:
        return [None] * len(ctx.alphas)
    out: list[float | None] = []
    for j, alpha in enumerate(ctx.alphas):
        try:
            sol = quantile_trajectory(cdf, alpha, ctx.x0, ctx.spec)
            diff = held_values_on_grid(sol, ctx.grid) - ctx.oracle_rows[j]
            out.append(float(np.trapezoid(diff * diff, ctx.grid)) * 1000.0)
        except QtrajError:
            out.append(None)
    return out


def run_aise_benchmark(scenarios: Sequence[Scenario | str], ns: Sequence[int],
                       alphas: Sequence[float], n_reps: int,
                       h_k: float = 0.01, h_h: float = 0.001,
                       kernel: str = "gaussian", seed: int = 0,
                       x0: float = 0.4, horizon: float = 8.0,
                       step: float | None = None, method: str = "rk4",
                       oracle_mc_size: int = 1_000_000, workers: int = 1,
                       b_range: tuple[float, float] = (0.3, 0.5),
                       t_center_range: tuple[float, float] = (0.5, 9.5),
                       window_half_width: float = 0.5,
                       n_obs_choices: tuple[int, ...] = (3, 4, 5)) -> AiseReport:
    """Average integrated squared error of estimated quantile trajectories.

    Per replicate: simulate, fit the joint kernel estimator, integrate each
    alpha's trajectory, and integrate its squared distance to the oracle over
    the horizon (trapezoid rule, truncated paths held at their last value).
    Replicate k uses the stream (seed, k) for every (scenario, n) cell, so
    comparisons across cells are paired; oracle streams are kept separate.
    Failed replicates are dropped and counted; a cell with more than 10%
    failures carries a warning flag.
    """
    scen = tuple(Scenario.parse(s) if isinstance(s, str) else s for s in scenarios)
    ns = tuple(int(n) for n in ns)
    alphas = tuple(float(a) for a in alphas)
    if n_reps < 1:
        raise ValueError(f"n_reps must be at least 1, got {n_reps}")
    spec = IntegratorSpec(horizon=horizon, step=step, method=method)
    grid = s_grid(spec)

    oracle_rows = np.empty((len(alphas), grid.size))
    oracle_n_bins = 0
    for j, alpha in enumerate(alphas):
        oracle = oracle_quantile_trajectory(
            alpha, x0, grid, mc_size=oracle_mc_size,
            seed=np.random.SeedSequence(entropy=seed, spawn_key=(_ORACLE_KEY, j)),
            b_range=b_range, t_center_range=t_center_range,
        )
        oracle_rows[j] = oracle.values
        oracle_n_bins = oracle.n_bins

    cells = tuple((sc, n) for sc in scen for n in ns)
    ctx = _BenchContext(cells=cells, alphas=alphas, oracle_rows=oracle_rows,
                        grid=grid, spec=spec, kernel=kernel, h_k=h_k, h_h=h_h,
                        x0=x0, seed=int(seed), n_reps=int(n_reps), b_range=b_range,
                        t_center_range=t_center_range,
                        window_half_width=window_half_width,
                        n_obs_choices=tuple(n_obs_choices))
    results = pooled_map(_bench_replicate, _bench_init, ctx, len(cells) * n_reps, workers)

    report_cells: list[AiseCell] = []
    for c_idx, (scenario, n) in enumerate(cells):
        rows = results[c_idx * n_reps:(c_idx + 1) * n_reps]
        for j, alpha in enumerate(alphas):
            ises = tuple(row[j] for row in rows)
            good = [v for v in ises if v is not None]
            n_failed = n_reps - len(good)
            aise = float(np.mean(good)) if good else float("nan")
            report_cells.append(AiseCell(
                scenario=scenario.label, n=n, alpha=alpha, aise_x1000=aise,
                n_reps=int(n_reps), n_failed=n_failed,
                warning=n_failed * 10 > n_reps, ise_x1000=ises,
            ))
    return AiseReport(
        cells=tuple(report_cells), scenarios=tuple(sc.label for sc in scen),
        ns=ns, alphas=alphas, n_reps=int(n_reps), seed=int(seed), kernel=kernel,
        h_k=float(h_k), h_h=float(h_h), x0=float(x0), horizon=float(spec.horizon),
        step=float(spec.step), method=method, oracle_mc_size=int(oracle_mc_size),
        oracle_n_bins=int(oracle_n_bins), b_range=tuple(b_range),
        t_center_range=tuple(t_center_range),
        window_half_width=float(window_half_width),
        n_obs_choices=tuple(int(k) for k in n_obs_choices),
    )


def aise_report_to_csv(report: AiseReport, path: str) -> None:
    """One row per (scenario, n), one column per alpha; values are AISE x 1000."""
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "n"] + [f"alpha_{a:g}" for a in report.alphas])
        for scenario in report.scenarios:
            for n in report.ns:
                row = [scenario, n]
                for alpha in report.alphas:
                    row.append(repr(report.cell(scenario, n, alpha).aise_x1000))
                writer.writerow(row)


def aise_report_to_json_dict(report: AiseReport) -> dict:
    return {
        "scenarios": list(report.scenarios),
        "ns": list(report.ns),
        "alphas": list(report.alphas),
        "n_reps": report.n_reps,
        "seed": report.seed,
        "kernel": report.kernel,
        "h_k": report.h_k,
        "h_h": report.h_h,
        "x0": report.x0,
        "horizon": report.horizon,
        "step": report.step,
        "method": report.method,
        "oracle_mc_size": report.oracle_mc_size,
        "oracle_n_bins": report.oracle_n_bins,
        "b_range": list(report.b_range),
        "t_center_range": list(report.t_center_range),
        "window_half_width": report.window_half_width,
        "n_obs_choices": list(report.n_obs_choices),
        "cells": [
            {
                "scenario": c.scenario,
                "n": c.n,
                "alpha": c.alpha,
                "aise_x1000": None if math.isnan(c.aise_x1000) else c.aise_x1000,
                "n_reps": c.n_reps,
                "n_failed": c.n_failed,
                "warning": c.warning,
                "ise_x1000": list(c.ise_x1000),
            }
            for c in report.cells
        ],
    }
