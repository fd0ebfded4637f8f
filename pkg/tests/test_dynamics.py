import json
import math

import numpy as np
import pytest

from qtraj import (
    FitConfig,
    FunctionGradient,
    DomainError,
    InsufficientLocalDataError,
    IntegratorSpec,
    KernelSpec,
    LevelSlopePair,
    PredictionSchedule,
    QtrajError,
    SimulationConfig,
    alpha_schedule,
    bootstrap_difference_bands,
    estimate_alpha_star,
    fit_conditional_cdf,
    fit_joint_kernel,
    fit_kernel,
    generate_snippets,
    held_values_on_grid,
    integrate,
    invert_to_quantile,
    local_discretization_error,
    mean_trajectory,
    prediction_trajectory,
    quantile_trajectory,
    resample_pairs,
    s_grid,
    slope_field,
    values_on_grid,
)
from qtraj.dynamics import _percentile_bands
from qtraj.snippets import SnippetDataset

from test_conditional import make_dataset


@pytest.fixture(scope="module")
def sim200():
    return generate_snippets(SimulationConfig(n=200, seed=23)).dataset


# ---------------------------------------------------------------------------
# spec and grid


def test_integrator_spec_defaults_and_validation():
    spec = IntegratorSpec(horizon=8.0)
    assert spec.step == 8.0 / 1000.0
    assert spec.method == "rk4"
    assert spec.max_steps >= 1000
    with pytest.raises(ValueError):
        IntegratorSpec(horizon=0.0)
    with pytest.raises(ValueError):
        IntegratorSpec(horizon=1.0, step=2.0)
    with pytest.raises(ValueError):
        IntegratorSpec(horizon=1.0, step=-0.1)
    with pytest.raises(ValueError):
        IntegratorSpec(horizon=1.0, method="heun")
    with pytest.raises(ValueError):
        IntegratorSpec(horizon=1.0, step=0.1, max_steps=5)


def test_s_grid_exact_cover():
    grid = s_grid(IntegratorSpec(horizon=1.0, step=0.1))
    assert grid.size == 11
    assert grid[0] == 0.0
    assert grid[-1] == 1.0
    assert np.allclose(np.diff(grid), 0.1, atol=1e-15)


def test_s_grid_short_final_step():
    grid = s_grid(IntegratorSpec(horizon=1.0, step=0.3))
    assert np.allclose(grid, [0.0, 0.3, 0.6, 0.9, 1.0], atol=1e-15)
    assert grid[-1] == 1.0


# ---------------------------------------------------------------------------
# integrate


def test_euler_exact_for_constant_gradient():
    # dyadic values keep every float operation exact
    spec = IntegratorSpec(horizon=2.0, step=0.25, method="euler")
    sol = integrate(FunctionGradient(lambda z: 0.5), 1.0, spec)
    assert sol.exit_reason == "completed"
    expected = 1.0 + 0.5 * sol.s
    assert np.array_equal(sol.values, expected)
    assert sol.values[0] == 1.0


def test_euler_linear_decay_matches_power():
    spec = IntegratorSpec(horizon=1.0, step=0.1, method="euler")
    sol = integrate(FunctionGradient(lambda z: -z), 1.0, spec)
    assert sol.values[-1] == pytest.approx(0.9 ** 10, abs=1e-9)


def test_rk4_linear_decay_near_exact():
    spec = IntegratorSpec(horizon=1.0, step=0.1, method="rk4")
    sol = integrate(FunctionGradient(lambda z: -z), 1.0, spec)
    assert abs(sol.values[-1] - math.exp(-1.0)) < 1e-6


def test_euler_is_first_order():
    errors = []
    for step in (0.1, 0.05, 0.025):
        spec = IntegratorSpec(horizon=1.0, step=step, method="euler")
        sol = integrate(FunctionGradient(lambda z: -z), 1.0, spec)
        errors.append(abs(sol.values[-1] - math.exp(-1.0)))
    assert 1.8 <= errors[0] / errors[1] <= 2.2
    assert 1.8 <= errors[1] / errors[2] <= 2.2


def test_rk4_is_fourth_order():
    errors = []
    for step in (0.1, 0.05):
        spec = IntegratorSpec(horizon=1.0, step=step, method="rk4")
        sol = integrate(FunctionGradient(lambda z: -z), 1.0, spec)
        errors.append(abs(sol.values[-1] - math.exp(-1.0)))
    assert 12.0 <= errors[0] / errors[1] <= 20.0


def test_local_discretization_error_orders():
    deltas = np.array([0.1, 0.056, 0.032, 0.018, 0.01])
    for method, expected_slope in (("euler", 1.0), ("rk4", 4.0)):
        lde = [abs(local_discretization_error(
            lambda s: math.exp(-s), lambda z: -z, 0.3, d, method))
            for d in deltas]
        slope = np.polyfit(np.log(deltas), np.log(lde), 1)[0]
        assert slope == pytest.approx(expected_slope, abs=0.3)
    assert local_discretization_error(math.exp, lambda z: z, 0.0, 0.0, "euler") == 0.0


def test_truncation_on_domain_exit():
    spec = IntegratorSpec(horizon=4.0, step=0.25, method="euler")
    sol = integrate(FunctionGradient(lambda z: -0.25, domain=(0.5, 2.0)), 1.0, spec)
    assert sol.exit_reason == "left_support"
    assert sol.truncated_at == 2.0
    assert sol.s[-1] == 2.0
    assert sol.values[-1] == 0.5
    assert sol.values.size == sol.s.size == 9


def test_start_outside_domain_raises():
    spec = IntegratorSpec(horizon=1.0, step=0.1)
    with pytest.raises(DomainError):
        integrate(FunctionGradient(lambda z: -z, domain=(0.5, 0.9)), 1.0, spec)


def test_truncation_on_gradient_error():
    def fragile(z):
        if z < 0.8:
            raise InsufficientLocalDataError("no local data")
        return -1.0

    spec = IntegratorSpec(horizon=1.0, step=0.1, method="euler")
    sol = integrate(FunctionGradient(fragile), 1.0, spec)
    assert sol.exit_reason == "gradient_error"
    assert sol.truncated_at is not None
    assert sol.values.size >= 1
    assert sol.values[0] == 1.0


def test_monotone_decrease_under_negative_gradient(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.02, 0.002))
    spec = IntegratorSpec(horizon=4.0, step=0.05)
    sol = quantile_trajectory(cdf, 0.5, 0.4, spec)
    assert np.all(np.diff(sol.values) < 0.0)


def test_quantile_trajectory_degenerate_slopes():
    points = [(x, -0.125) for x in np.linspace(0.0, 1.0, 9)]
    cdf = fit_kernel(make_dataset(points), KernelSpec("gaussian", 0.5))
    spec = IntegratorSpec(horizon=2.0, step=0.25, method="euler")
    sol = quantile_trajectory(cdf, 0.5, 1.0, spec)
    assert np.array_equal(sol.values, 1.0 - 0.125 * sol.s)


def test_median_matches_mean_trajectory_on_symmetric_data():
    rng = np.random.default_rng(6)
    xs = rng.uniform(0.0, 1.0, 120)
    eps = rng.uniform(0.02, 0.3, 120)
    points = [(x, -0.2 + e) for x, e in zip(xs, eps)]
    points += [(x, -0.2 - e) for x, e in zip(xs, eps)]
    data = make_dataset(points)
    spec = IntegratorSpec(horizon=1.5, step=0.05, method="euler")
    kern = KernelSpec("gaussian", 0.1, h_h=0.05)
    median_sol = quantile_trajectory(fit_joint_kernel(data, kern), 0.5, 0.8, spec)
    mean_sol = mean_trajectory(data, 0.8, spec, KernelSpec("gaussian", 0.1))
    assert median_sol.values == pytest.approx(mean_sol.values, abs=5e-3)


def test_quantile_trajectories_do_not_cross(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.02, 0.002))
    spec = IntegratorSpec(horizon=4.0, step=0.1)
    sols = [quantile_trajectory(cdf, a, 0.4, spec) for a in (0.25, 0.5, 0.75)]
    grid = s_grid(spec)
    rows = [held_values_on_grid(s, grid) for s in sols]
    assert np.all(rows[0] <= rows[1] + 2e-10)
    assert np.all(rows[1] <= rows[2] + 2e-10)


def test_solution_serialization_round_trip(tmp_path):
    spec = IntegratorSpec(horizon=1.0, step=0.5, method="euler")
    sol = integrate(FunctionGradient(lambda z: -0.5), 1.0, spec)
    path = tmp_path / "sol.csv"
    sol.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "s,value"
    assert len(lines) == 1 + sol.s.size
    s_back, v_back = zip(*(line.split(",") for line in lines[1:]))
    assert [float(v) for v in s_back] == list(sol.s)
    assert [float(v) for v in v_back] == list(sol.values)

    doc = sol.to_json_dict()
    assert doc["method"] == "euler"
    assert doc["step"] == 0.5
    assert doc["exit_reason"] == "completed"
    assert doc["truncated_at"] is None
    json.dumps(doc)


def test_values_on_grid_padding():
    spec = IntegratorSpec(horizon=2.0, step=0.5, method="euler")
    sol = integrate(FunctionGradient(lambda z: -1.0, domain=(0.0, 5.0)), 1.0, spec)
    grid = s_grid(spec)
    padded = values_on_grid(sol, grid)
    held = held_values_on_grid(sol, grid)
    assert padded.size == grid.size
    assert np.isnan(padded[-1])
    assert held[-1] == sol.values[-1]
    assert np.array_equal(held[: sol.values.size], sol.values)


# ---------------------------------------------------------------------------
# slope field and ranking


def test_slope_field_degenerate_and_missing():
    points = [(x, 0.3) for x in np.linspace(0.0, 1.0, 8)]
    cdf = fit_kernel(make_dataset(points), KernelSpec("epanechnikov", 0.3))
    field = slope_field(cdf, 0.5, [0.2, 0.5, 0.8, 7.0])
    assert [xi for _, xi in field.points] == [0.3, 0.3, 0.3]
    assert len(field.missing) == 1
    assert field.missing[0][0] == 7.0
    assert field.missing[0][1]


def test_alpha_star_median_subject():
    points = [(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (0.0, 4.0)]
    cdf = fit_kernel(make_dataset(points), KernelSpec("gaussian", 0.5))
    subject = LevelSlopePair(subject_id="q", level=0.0, slope=2.0, n_obs=3,
                             time_span=2.0, last_level=0.0)
    assert estimate_alpha_star(subject, cdf) == 0.5


def test_alpha_star_clamps():
    points = [(0.0, 1.0), (0.0, 1.1), (0.0, 0.9), (0.0, 1.05)]
    cdf = fit_joint_kernel(make_dataset(points), KernelSpec("gaussian", 0.5, 1e-4))
    low = LevelSlopePair("lo", level=0.0, slope=-5.0, n_obs=2, time_span=1.0,
                         last_level=0.0)
    high = LevelSlopePair("hi", level=0.0, slope=5.0, n_obs=2, time_span=1.0,
                          last_level=0.0)
    assert estimate_alpha_star(low, cdf) == 0.01
    assert estimate_alpha_star(high, cdf) == 0.99


def test_alpha_star_identical_subjects(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.05, 0.005))
    pair = sim200.pairs[3]
    twin = LevelSlopePair("twin", level=pair.level, slope=pair.slope,
                          n_obs=pair.n_obs, time_span=pair.time_span,
                          last_level=pair.last_level)
    assert estimate_alpha_star(twin, cdf) == estimate_alpha_star(pair, cdf)


# ---------------------------------------------------------------------------
# schedules and prediction


def test_alpha_schedule_knots_exact():
    sched = PredictionSchedule(alpha_start=0.3, alpha_target=0.9, s_star=2.0)
    assert alpha_schedule(sched, 0.0) == 0.3
    assert alpha_schedule(sched, 2.0) == 0.9
    assert alpha_schedule(sched, 5.0) == 0.9
    assert alpha_schedule(sched, 1.0) == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ValueError):
        alpha_schedule(sched, -0.1)


def test_prediction_schedule_validation():
    with pytest.raises(ValueError):
        PredictionSchedule(alpha_start=0.0, alpha_target=0.5, s_star=1.0)
    with pytest.raises(ValueError):
        PredictionSchedule(alpha_start=0.5, alpha_target=0.5, s_star=0.0)


def test_prediction_constant_schedule_matches_plain(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.02, 0.002))
    pair = max(sim200.pairs, key=lambda p: p.last_level)
    a_star = estimate_alpha_star(pair, cdf)
    spec = IntegratorSpec(horizon=2.0, step=0.05, method="euler")
    pred = prediction_trajectory(cdf, pair, a_star, spec)
    plain = quantile_trajectory(cdf, a_star, pair.last_level, spec)
    n = min(pred.values.size, plain.values.size)
    assert n > 1
    assert np.max(np.abs(pred.values[:n] - plain.values[:n])) <= 1e-9
    assert pred.schedule.alpha_start == a_star
    assert pred.schedule.s_star == pair.time_span / 2.0


def test_prediction_initial_slope_matches_alpha_star_gradient(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.02, 0.002))
    pair = max(sim200.pairs, key=lambda p: p.last_level)
    spec = IntegratorSpec(horizon=1.0, step=0.01, method="euler")
    sol = prediction_trajectory(cdf, pair, 0.9, spec)
    a_star = estimate_alpha_star(pair, cdf)
    xi0 = invert_to_quantile(cdf, a_star).evaluate(pair.last_level)
    slope0 = (sol.values[1] - sol.values[0]) / (sol.s[1] - sol.s[0])
    assert slope0 == pytest.approx(xi0, abs=1e-10)


def test_prediction_degenerate_straight_line():
    points = [(x, -0.125) for x in np.linspace(0.0, 1.0, 9)]
    cdf = fit_kernel(make_dataset(points), KernelSpec("gaussian", 0.5))
    pair = LevelSlopePair("p", level=0.9, slope=-0.125, n_obs=2, time_span=1.0,
                          last_level=0.875)
    spec = IntegratorSpec(horizon=2.0, step=0.25, method="euler")
    for target in (0.2, 0.8):
        sol = prediction_trajectory(cdf, pair, target, spec)
        assert np.array_equal(sol.values, 0.875 - 0.125 * sol.s)


def test_prediction_target_validation(sim200):
    cdf = fit_joint_kernel(sim200, KernelSpec("gaussian", 0.05, 0.005))
    with pytest.raises(ValueError):
        prediction_trajectory(cdf, sim200.pairs[0], 1.0,
                              IntegratorSpec(horizon=1.0, step=0.1))


# ---------------------------------------------------------------------------
# bootstrap bands


def _band_config():
    return FitConfig(method="binned", bin_width=0.05)


def test_bands_same_dataset_contains_zero(sim200):
    spec = IntegratorSpec(horizon=3.0, step=0.25, method="euler")
    result = bootstrap_difference_bands(
        sim200, sim200, alpha=0.5, x0=0.4, spec=spec, n_boot=100,
        coverages=(0.90,), seed=5, fit_config=_band_config())
    assert np.all(result.point == 0.0)
    lower, upper = result.lowers[0], result.uppers[0]
    defined = np.isfinite(lower)
    assert defined.any()
    assert np.all(lower[defined] <= 0.0)
    assert np.all(upper[defined] >= 0.0)
    assert result.n_boot == 100
    assert np.all(result.replicate_ok <= 100)


def test_bands_endpoints_are_percentiles(sim200):
    """Mirror the replicate loop with public pieces and check the percentiles."""
    half = SnippetDataset(pairs=sim200.pairs[:60])
    spec = IntegratorSpec(horizon=2.0, step=0.5, method="euler")
    seed, n_boot = 11, 100
    config = _band_config()
    result = bootstrap_difference_bands(
        half, half, alpha=0.5, x0=0.4, spec=spec, n_boot=n_boot,
        coverages=(0.90,), seed=seed, fit_config=config)

    grid = s_grid(spec)
    rows = []
    for idx in range(n_boot):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(idx,)))
        row = []
        for _ in range(2):
            resampled = resample_pairs(half, rng)
            try:
                cdf = fit_conditional_cdf(resampled, config)
                sol = quantile_trajectory(cdf, 0.5, 0.4, spec)
            except QtrajError:
                row.append(np.full(grid.size, np.nan))
            else:
                row.append(values_on_grid(sol, grid))
        rows.append(row[0] - row[1])
    rows = np.vstack(rows)

    for j in range(grid.size):
        col = rows[np.isfinite(rows[:, j]), j]
        if col.size * 2 >= n_boot:
            assert result.lowers[0][j] == np.quantile(col, 0.05)
            assert result.uppers[0][j] == np.quantile(col, 0.95)


def test_bands_two_groups_separate():
    g1 = generate_snippets(SimulationConfig(n=300, seed=31)).dataset
    g2_raw = generate_snippets(
        SimulationConfig(n=300, seed=32, b_range=(0.4, 0.6))).dataset
    spec = IntegratorSpec(horizon=3.0, step=0.25, method="euler")
    result = bootstrap_difference_bands(
        g1, g2_raw, alpha=0.5, x0=0.4, spec=spec, n_boot=100,
        coverages=(0.90,), seed=2, fit_config=_band_config())
    lower = result.lowers[0]
    # slower decay minus faster decay: difference positive at later s
    late = s_grid(spec) >= 2.0
    defined = np.isfinite(lower) & late
    assert defined.any()
    assert np.all(lower[defined] > 0.0)


def test_bands_validation(sim200):
    spec = IntegratorSpec(horizon=1.0, step=0.25)
    with pytest.raises(ValueError):
        bootstrap_difference_bands(sim200, sim200, alpha=0.5, x0=0.4, spec=spec,
                                   n_boot=99)
    with pytest.raises(ValueError):
        bootstrap_difference_bands(sim200, sim200, alpha=1.5, x0=0.4, spec=spec)
    with pytest.raises(ValueError):
        bootstrap_difference_bands(sim200, sim200, alpha=0.5, x0=0.4, spec=spec,
                                   coverages=(1.2,))


def test_bands_worker_invariance(sim200):
    half = SnippetDataset(pairs=sim200.pairs[:40])
    spec = IntegratorSpec(horizon=1.0, step=0.25, method="euler")
    kwargs = dict(alpha=0.5, x0=0.4, spec=spec, n_boot=100, coverages=(0.9,),
                  seed=7, fit_config=_band_config())
    serial = bootstrap_difference_bands(half, half, workers=1, **kwargs)
    pooled = bootstrap_difference_bands(half, half, workers=2, **kwargs)
    assert np.array_equal(serial.lowers[0], pooled.lowers[0], equal_nan=True)
    assert np.array_equal(serial.uppers[0], pooled.uppers[0], equal_nan=True)
    assert np.array_equal(serial.replicate_ok, pooled.replicate_ok)


def test_bands_serialization(tmp_path, sim200):
    half = SnippetDataset(pairs=sim200.pairs[:40])
    spec = IntegratorSpec(horizon=1.0, step=0.5, method="euler")
    result = bootstrap_difference_bands(
        half, half, alpha=0.5, x0=0.4, spec=spec, n_boot=100,
        coverages=(0.90, 0.95), seed=7, fit_config=_band_config())
    path = tmp_path / "bands.csv"
    result.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "s,value,lower90,upper90,lower95,upper95"
    assert len(lines) == 1 + result.s.size
    doc = result.to_json_dict()
    assert doc["n_boot"] == 100
    assert doc["seed"] == 7
    assert set(doc["bands"]) == {"90", "95"}
    json.dumps(doc)


def test_percentile_bands_undefined_when_majority_fail():
    rows = np.full((100, 3), np.nan)
    rows[:49, 0] = 1.0   # 49% finite: undefined
    rows[:50, 1] = 1.0   # exactly half finite: defined
    rows[:, 2] = 2.0
    counts, bands = _percentile_bands(rows, (0.9,))
    lower, upper = bands[0]
    assert list(counts) == [49, 50, 100]
    assert np.isnan(lower[0]) and np.isnan(upper[0])
    assert lower[1] == 1.0 and upper[1] == 1.0
    assert lower[2] == 2.0 and upper[2] == 2.0
