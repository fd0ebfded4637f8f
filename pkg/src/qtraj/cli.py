"""Command line interface.

Eight subcommands over snippet CSV inputs: fit, trajectory, predict, rank,
bands, slope-field, simulate, bench. Every command writes its outputs into a
directory together with a run_config.json echo of the fully resolved options;
re-running a command from that echo reproduces the outputs byte for byte.

Exit codes: 0 when all requested outputs were written, 1 on runtime or data
errors (including partial failures, which still write what succeeded), 2 on
option validation errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._version import __version__
from .conditional import (
    FIT_METHODS,
    FitConfig,
    fit_conditional_cdf,
)
from .dynamics import (
    INTEGRATOR_METHODS,
    IntegratorSpec,
    bootstrap_difference_bands,
    estimate_alpha_star,
    mean_trajectory,
    prediction_trajectory,
    quantile_trajectory,
    slope_field,
)
from .errors import QtrajError
from .kernels import KERNEL_KINDS, KernelSpec, silverman_bandwidth
from .simulate import (
    Scenario,
    SimulationConfig,
    aise_report_to_csv,
    aise_report_to_json_dict,
    generate_snippets,
    run_aise_benchmark,
)
from .snippets import (
    LevelSlopePair,
    Snippet,
    SnippetDataset,
    build_dataset,
    read_pairs_csv,
    read_snippets_csv,
    reduce_snippets,
    write_pairs_csv,
    write_snippets_csv,
)

INPUT_FORMATS = ("snippets", "pairs")


class CommandError(Exception):
    """CLI failure carrying its exit code (2 = validation, 1 = runtime)."""

    def __init__(self, message: str, exit_code: int = 2):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# option resolution: command line beats config file beats defaults


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read config file {path!r}: {exc!s}")
    if not isinstance(raw, dict):
        raise CommandError(f"config file {path!r} must hold a JSON object")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def _resolve(args: argparse.Namespace) -> Callable[[str, object], object]:
    """Build a getter merging flags over the config file over defaults."""
    cfg = _load_config_file(getattr(args, "config", None))
    known = set(vars(args)) - {"handler", "command", "config"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise CommandError(f"unknown config key(s): {', '.join(unknown)}")

    def get(name: str, default: object = None) -> object:
        value = getattr(args, name, None)
        if value is None or value is False:
            value = cfg.get(name, None if value is None else value)
        return default if value is None else value

    return get


def _float_value(name: str, value: object) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise CommandError(f"{name} must be a number, got {value!r}")
    if not np.isfinite(out):
        raise CommandError(f"{name} must be finite, got {value!r}")
    return out


def _positive(name: str, value: object) -> float:
    out = _float_value(name, value)
    if out <= 0:
        raise CommandError(f"{name} must be positive, got {value!r}")
    return out


def _unit_open(name: str, value: object) -> float:
    out = _float_value(name, value)
    if not (0.0 < out < 1.0):
        raise CommandError(f"{name} must lie strictly between 0 and 1, got {value!r}")
    return out


def _int_value(name: str, value: object, minimum: int) -> int:
    try:
        out = int(value)
    except (TypeError, ValueError):
        raise CommandError(f"{name} must be an integer, got {value!r}")
    if out < minimum:
        raise CommandError(f"{name} must be at least {minimum}, got {value!r}")
    return out


def _choice(name: str, value: object, choices: Sequence[str]) -> str:
    if value not in choices:
        raise CommandError(f"{name} must be one of {', '.join(choices)}; got {value!r}")
    return str(value)


def _split_list(value: object) -> list:
    if isinstance(value, str):
        return [part for part in value.split(",") if part.strip() != ""]
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _float_list(name: str, value: object) -> list[float]:
    items = _split_list(value)
    if not items:
        raise CommandError(f"{name} needs at least one value")
    return [_float_value(name, v) for v in items]


def _alpha_list(name: str, value: object) -> list[float]:
    return [_unit_open(name, v) for v in _float_list(name, value)]


def _int_list(name: str, value: object, minimum: int) -> list[int]:
    items = _split_list(value)
    if not items:
        raise CommandError(f"{name} needs at least one value")
    return [_int_value(name, v, minimum) for v in items]


def _float_pair(name: str, value: object) -> tuple[float, float]:
    items = _float_list(name, value)
    if len(items) != 2:
        raise CommandError(f"{name} must be a pair lo,hi; got {value!r}")
    return items[0], items[1]


def _alpha_label(alpha: float) -> str:
    return f"{alpha:g}"


# ---------------------------------------------------------------------------
# shared plumbing


def _out_dir(get) -> Path:
    path = Path(str(get("out", ".")))
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {path}: {exc!s}", exit_code=1)
    return path


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(out: Path, command: str, options: dict) -> None:
    _write_json(out / "run_config.json",
                {"command": command, "version": __version__, "options": options})


def _load_dataset(path: str, fmt: str) -> SnippetDataset:
    try:
        if fmt == "pairs":
            return read_pairs_csv(path)
        return reduce_snippets(read_snippets_csv(path))
    except OSError as exc:
        raise CommandError(f"cannot read {path!r}: {exc!s}", exit_code=1)


def _fit_options(get) -> tuple[FitConfig, dict]:
    """Validate estimator flags (before any data is read) and echo them."""
    estimator = _choice("--estimator", get("estimator", "joint-kernel"), FIT_METHODS)
    kernel = _choice("--kernel", get("kernel", "gaussian"), KERNEL_KINDS)
    h_k = get("h_k")
    h_h = get("h_h")
    bin_width = get("bin_width")
    if h_k is not None:
        h_k = _positive("--h-k", h_k)
    if h_h is not None:
        h_h = _positive("--h-h", h_h)
    if bin_width is not None:
        bin_width = _positive("--bin-width", bin_width)
    z_grid_size = _int_value("--z-grid-size", get("z_grid_size", 21), minimum=3)
    config = FitConfig(method=estimator, kernel=kernel, h_k=h_k, h_h=h_h,
                       bin_width=bin_width, z_grid_size=z_grid_size)
    echo = {"estimator": estimator, "kernel": kernel, "h_k": h_k, "h_h": h_h,
            "bin_width": bin_width, "z_grid_size": z_grid_size}
    return config, echo


def _integrator_options(get, default_method: str) -> tuple[IntegratorSpec, dict]:
    method = _choice("--method", get("method", default_method), INTEGRATOR_METHODS)
    horizon = _positive("--horizon", get("horizon", 8.0))
    step = get("step")
    if step is not None:
        step = _positive("--step", step)
        if step > horizon:
            raise CommandError(f"--step must not exceed --horizon, got {step!r}")
    spec = IntegratorSpec(horizon=horizon, step=step, method=method)
    echo = {"method": method, "step": spec.step, "horizon": spec.horizon}
    return spec, echo


def _fit_summary(cdf) -> dict:
    summary = {
        "method": cdf.method,
        "n": cdf.n,
        "level_range": [cdf.level_range[0], cdf.level_range[1]],
        "slope_range": [cdf.slope_range[0], cdf.slope_range[1]],
    }
    if cdf.method == "binned":
        summary["bin_width"] = cdf.h
    elif cdf.method in ("kernel", "joint-kernel"):
        summary["kernel"] = cdf.kernel.kind
        summary["h_k"] = cdf.kernel.h_k
        if cdf.method == "joint-kernel":
            summary["h_h"] = cdf.kernel.h_h
    else:
        summary["beta"] = [float(b) for b in cdf.beta]
        summary["z_grid_size"] = int(cdf.z_grid.size)
    return summary


def _check_x0(x0: float, cdf) -> None:
    lo, hi = cdf.level_range
    if not (lo <= x0 <= hi):
        raise CommandError(
            f"x0 {x0!r} lies outside the data level range [{lo!r}, {hi!r}]",
            exit_code=1,
        )


def _run_jobs(jobs: list[tuple[str, Callable[[], None]]]) -> int:
    """Run output jobs, writing what succeeds; nonzero exit if any fail."""
    failed = 0
    for label, job in jobs:
        try:
            job()
        except QtrajError as exc:
            failed += 1
            print(f"error: {label}: {exc}", file=sys.stderr)
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    grid_size = _int_value("--grid-size", get("grid_size", 25), minimum=2)
    out = _out_dir(get)

    dataset = _load_dataset(args.input, fmt)
    cdf = fit_conditional_cdf(dataset, fit_config)

    _echo_config(out, "fit", {"input": args.input, "format": fmt,
                              "grid_size": grid_size, **fit_echo})
    _write_json(out / "fit_summary.json", _fit_summary(cdf))

    xs = np.linspace(cdf.level_range[0], cdf.level_range[1], grid_size)
    zs = np.linspace(cdf.slope_range[0], cdf.slope_range[1], grid_size)
    with open(out / "cdf_grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "z", "F"])
        for x in xs:
            for z in zs:
                try:
                    value = repr(cdf.evaluate(float(x), float(z)))
                except QtrajError:
                    value = "nan"
                writer.writerow([repr(float(x)), repr(float(z)), value])
    return 0


def cmd_trajectory(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    spec, ode_echo = _integrator_options(get, default_method="rk4")
    alphas = _alpha_list("--alpha", get("alpha", "0.5"))
    want_mean = bool(get("mean", False))
    if get("x0") is None:
        raise CommandError("--x0 is required")
    x0 = _float_value("--x0", get("x0"))
    out = _out_dir(get)

    dataset = _load_dataset(args.input, fmt)
    cdf = fit_conditional_cdf(dataset, fit_config)
    _check_x0(x0, cdf)

    _echo_config(out, "trajectory", {
        "input": args.input, "format": fmt, "alpha": alphas, "mean": want_mean,
        "x0": x0, **fit_echo, **ode_echo,
    })

    jobs: list[tuple[str, Callable[[], None]]] = []

    def make_alpha_job(alpha: float) -> Callable[[], None]:
        def job() -> None:
            sol = quantile_trajectory(cdf, alpha, x0, spec)
            sol.to_csv(str(out / f"trajectory_alpha_{_alpha_label(alpha)}.csv"))
            _write_json(out / f"trajectory_alpha_{_alpha_label(alpha)}.json",
                        sol.to_json_dict())
        return job

    for alpha in alphas:
        jobs.append((f"alpha={_alpha_label(alpha)}", make_alpha_job(alpha)))

    if want_mean:
        def mean_job() -> None:
            h_k = fit_config.h_k
            if h_k is None:
                h_k = silverman_bandwidth(dataset.levels)
            kern = KernelSpec(kind=fit_config.kernel, h_k=h_k)
            sol = mean_trajectory(dataset, x0, spec, kern)
            sol.to_csv(str(out / "trajectory_mean.csv"))
            _write_json(out / "trajectory_mean.json", sol.to_json_dict())
        jobs.append(("mean", mean_job))

    return _run_jobs(jobs)


def cmd_predict(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    spec, ode_echo = _integrator_options(get, default_method="euler")
    targets = _alpha_list("--target-alpha", get("target_alpha", "0.5"))
    subject = get("subject_id")
    if subject is None:
        raise CommandError("--subject-id is required")
    subject = str(subject)
    out = _out_dir(get)

    dataset = _load_dataset(args.input, fmt)
    pair = next((p for p in dataset.pairs if p.subject_id == subject), None)
    if pair is None:
        raise CommandError(f"unknown subject id {subject!r}", exit_code=1)
    cdf = fit_conditional_cdf(dataset, fit_config)

    _echo_config(out, "predict", {
        "input": args.input, "format": fmt, "subject_id": subject,
        "target_alpha": targets, **fit_echo, **ode_echo,
    })

    alpha_star = estimate_alpha_star(pair, cdf)
    _write_json(out / "prediction_summary.json", {
        "subject_id": subject,
        "alpha_star": alpha_star,
        "s_star": pair.time_span / 2.0,
        "level": pair.level,
        "last_level": pair.last_level,
        "slope": pair.slope,
        "time_span": pair.time_span,
        "target_alpha": targets,
    })

    jobs: list[tuple[str, Callable[[], None]]] = []

    def make_job(alpha: float) -> Callable[[], None]:
        def job() -> None:
            sol = prediction_trajectory(cdf, pair, alpha, spec)
            sol.to_csv(str(out / f"prediction_alpha_{_alpha_label(alpha)}.csv"))
            _write_json(out / f"prediction_alpha_{_alpha_label(alpha)}.json",
                        sol.to_json_dict())
        return job

    for alpha in targets:
        jobs.append((f"target-alpha={_alpha_label(alpha)}", make_job(alpha)))
    return _run_jobs(jobs)


def cmd_rank(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    out = _out_dir(get)

    dataset = _load_dataset(args.input, fmt)
    cdf = fit_conditional_cdf(dataset, fit_config)

    _echo_config(out, "rank", {"input": args.input, "format": fmt, **fit_echo})

    with open(out / "alpha_star.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "alpha_star", "error"])
        for pair in dataset.pairs:
            try:
                writer.writerow([pair.subject_id, repr(estimate_alpha_star(pair, cdf)), ""])
            except QtrajError as exc:
                writer.writerow([pair.subject_id, "", str(exc)])
    return 0


def _split_groups(args: argparse.Namespace, get,
                  fmt: str) -> tuple[SnippetDataset, SnippetDataset, list[str]]:
    """Two datasets from two files, or from one file with a group column."""
    paths = args.inputs
    if len(paths) > 2:
        raise CommandError("bands takes one input (with a group column) or two inputs")
    if len(paths) == 2:
        if get("groups") is not None:
            raise CommandError("--groups applies only to single-input runs")
        return (_load_dataset(paths[0], fmt), _load_dataset(paths[1], fmt),
                [paths[0], paths[1]])

    if fmt == "pairs":
        pool: Sequence[LevelSlopePair | Snippet] = _load_dataset(paths[0], fmt).pairs
    else:
        try:
            pool = read_snippets_csv(paths[0])
        except OSError as exc:
            raise CommandError(f"cannot read {paths[0]!r}: {exc!s}", exit_code=1)
    labels_found = sorted({item.group for item in pool if item.group is not None})
    if get("groups") is not None:
        labels = [str(v) for v in _split_list(get("groups"))]
        if len(labels) != 2:
            raise CommandError(f"--groups must name exactly 2 labels, got {labels!r}")
    else:
        if len(labels_found) != 2:
            raise CommandError(
                f"input has {len(labels_found)} group label(s) {labels_found!r}; "
                "need exactly 2 (or pass --groups)",
                exit_code=1,
            )
        labels = labels_found

    datasets = []
    for label in labels:
        members = [item for item in pool if item.group == label]
        if not members:
            raise CommandError(f"group {label!r} has no subjects", exit_code=1)
        if fmt == "pairs":
            datasets.append(build_dataset(members))
        else:
            datasets.append(reduce_snippets(members))
    return datasets[0], datasets[1], labels


def cmd_bands(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    spec, ode_echo = _integrator_options(get, default_method="rk4")
    alpha = _unit_open("--alpha", get("alpha", 0.5))
    if get("x0") is None:
        raise CommandError("--x0 is required")
    x0 = _float_value("--x0", get("x0"))
    n_boot = _int_value("--b-boot", get("b_boot", 200), minimum=100)
    coverages = _alpha_list("--coverages", get("coverages", "0.9,0.95"))
    seed = _int_value("--seed", get("seed", 0), minimum=0)
    workers = _int_value("--workers", get("workers", 1), minimum=1)
    out = _out_dir(get)

    dataset1, dataset2, group_labels = _split_groups(args, get, fmt)

    _echo_config(out, "bands", {
        "inputs": list(args.inputs), "format": fmt,
        "groups": group_labels if len(args.inputs) == 1 else None,
        "alpha": alpha, "x0": x0, "b_boot": n_boot, "coverages": coverages,
        "seed": seed, **fit_echo, **ode_echo,
    })

    result = bootstrap_difference_bands(
        dataset1, dataset2, alpha, x0, spec, n_boot=n_boot,
        coverages=tuple(coverages), seed=seed, fit_config=fit_config,
        workers=workers,
    )
    result.to_csv(str(out / "bands.csv"))
    _write_json(out / "bands.json", result.to_json_dict())
    return 0


def cmd_slope_field(args: argparse.Namespace) -> int:
    get = _resolve(args)
    fit_config, fit_echo = _fit_options(get)
    fmt = _choice("--format", get("format", "snippets"), INPUT_FORMATS)
    alpha = _unit_open("--alpha", get("alpha", 0.5))
    levels_opt = get("levels")
    if levels_opt is not None:
        levels = _float_list("--levels", levels_opt)
    else:
        levels = None
    grid_size = _int_value("--grid-size", get("grid_size", 25), minimum=2)
    out = _out_dir(get)

    dataset = _load_dataset(args.input, fmt)
    cdf = fit_conditional_cdf(dataset, fit_config)
    if levels is None:
        levels = [float(v) for v in
                  np.linspace(cdf.level_range[0], cdf.level_range[1], grid_size)]

    _echo_config(out, "slope-field", {
        "input": args.input, "format": fmt, "alpha": alpha, "levels": levels,
        "grid_size": grid_size, **fit_echo,
    })

    field = slope_field(cdf, alpha, levels)
    rows = [(x, repr(xi), "") for x, xi in field.points]
    rows += [(x, "", message) for x, message in field.missing]
    rows.sort(key=lambda r: r[0])
    with open(out / "slope_field.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "xi", "error"])
        for x, xi, message in rows:
            writer.writerow([repr(float(x)), xi, message])
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    get = _resolve(args)
    n = _int_value("--n", get("n"), minimum=1) if get("n") is not None else None
    if n is None:
        raise CommandError("--n is required")
    noise = _choice("--scenario", get("scenario", "true_xz"),
                    ("true_xz", "noiseless", "gaussian"))
    sigma = _float_value("--sigma", get("sigma", 0.0))
    seed = _int_value("--seed", get("seed", 0), minimum=0)
    b_range = _float_pair("--b-range", get("b_range", "0.3,0.5"))
    t_range = _float_pair("--t-range", get("t_range", "0.5,9.5"))
    window = _positive("--window", get("window", 0.5))
    n_obs = _int_list("--n-obs", get("n_obs", "3,4,5"), minimum=2)
    out = _out_dir(get)

    try:
        config = SimulationConfig(n=n, noise=noise, sigma=sigma, b_range=b_range,
                                  t_center_range=t_range, window_half_width=window,
                                  n_obs_choices=tuple(n_obs), seed=seed)
    except ValueError as exc:
        raise CommandError(str(exc))

    sim = generate_snippets(config)

    _echo_config(out, "simulate", {
        "n": n, "scenario": noise, "sigma": sigma, "seed": seed,
        "b_range": list(b_range), "t_range": list(t_range), "window": window,
        "n_obs": n_obs,
    })
    write_pairs_csv(sim.dataset, str(out / "pairs.csv"))
    if sim.snippets:
        write_snippets_csv(sim.snippets, str(out / "snippets.csv"))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    get = _resolve(args)
    scenario_texts = [str(v) for v in _split_list(get("scenarios", "true_xz"))]
    try:
        scenarios = [Scenario.parse(text) for text in scenario_texts]
    except ValueError as exc:
        raise CommandError(str(exc))
    ns = _int_list("--ns", get("ns", "300"), minimum=2)
    alphas = _alpha_list("--alphas", get("alphas", "0.25,0.5,0.75"))
    reps = _int_value("--reps", get("reps", 100), minimum=1)
    seed = _int_value("--seed", get("seed", 0), minimum=0)
    h_k = _positive("--h-k", get("h_k", 0.01))
    h_h = _positive("--h-h", get("h_h", 0.001))
    kernel = _choice("--kernel", get("kernel", "gaussian"), KERNEL_KINDS)
    x0 = _float_value("--x0", get("x0", 0.4))
    spec, ode_echo = _integrator_options(get, default_method="rk4")
    oracle_size = _int_value("--oracle-size", get("oracle_size", 1_000_000),
                             minimum=1000)
    workers = _int_value("--workers", get("workers", 1), minimum=1)
    out = _out_dir(get)

    _echo_config(out, "bench", {
        "scenarios": scenario_texts, "ns": ns, "alphas": alphas, "reps": reps,
        "seed": seed, "h_k": h_k, "h_h": h_h, "kernel": kernel, "x0": x0,
        "oracle_size": oracle_size, **ode_echo,
    })

    report = run_aise_benchmark(
        scenarios, ns, alphas, reps, h_k=h_k, h_h=h_h, kernel=kernel, seed=seed,
        x0=x0, horizon=spec.horizon, step=spec.step, method=spec.method,
        oracle_mc_size=oracle_size, workers=workers,
    )
    aise_report_to_csv(report, str(out / "aise.csv"))
    _write_json(out / "aise.json", aise_report_to_json_dict(report))
    for cell in report.cells:
        if cell.warning:
            print(
                f"warning: cell ({cell.scenario}, n={cell.n}, alpha={cell.alpha:g}) "
                f"dropped {cell.n_failed}/{cell.n_reps} replicates",
                file=sys.stderr,
            )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_io_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, metavar="DIR",
                   help="output directory (default: current directory)")
    p.add_argument("--config", default=None, metavar="JSON",
                   help="JSON file supplying the same keys as the flags; "
                        "flags given on the command line win")
    p.add_argument("--format", default=None, choices=INPUT_FORMATS,
                   help="input layout: long snippets or reduced pairs "
                        "(default snippets)")


def _add_estimator_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimator")
    g.add_argument("--estimator", default=None, choices=FIT_METHODS,
                   help="conditional CDF estimator (default joint-kernel)")
    g.add_argument("--kernel", default=None, choices=KERNEL_KINDS,
                   help="kernel shape (default gaussian)")
    g.add_argument("--h-k", default=None, type=float, metavar="H",
                   help="level bandwidth (default: Silverman)")
    g.add_argument("--h-h", default=None, type=float, metavar="H",
                   help="slope bandwidth for joint-kernel (default: Silverman)")
    g.add_argument("--bin-width", default=None, type=float, metavar="H",
                   help="bin half-width for the binned estimator (default: Silverman)")
    g.add_argument("--z-grid-size", default=None, type=int, metavar="K",
                   help="pseudo-observation grid size for logistic (default 21)")


def _add_integrator_options(p: argparse.ArgumentParser, default_method: str) -> None:
    g = p.add_argument_group("integrator")
    g.add_argument("--method", default=None, choices=INTEGRATOR_METHODS,
                   help=f"integration scheme (default {default_method})")
    g.add_argument("--step", default=None, type=float, metavar="DELTA",
                   help="step size (default horizon/1000)")
    g.add_argument("--horizon", default=None, type=float, metavar="S",
                   help="integration horizon (default 8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtraj",
        description="Conditional quantile trajectories for snippet data.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit a conditional CDF and dump a diagnostic grid")
    p.add_argument("input", help="input CSV")
    _add_io_options(p)
    _add_estimator_options(p)
    p.add_argument("--grid-size", default=None, type=int, metavar="K",
                   help="evaluation lattice size per axis (default 25)")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("trajectory", help="integrate quantile trajectories from x0")
    p.add_argument("input", help="input CSV")
    _add_io_options(p)
    _add_estimator_options(p)
    _add_integrator_options(p, "rk4")
    p.add_argument("--alpha", default=None, metavar="LIST",
                   help="comma-separated quantile levels (default 0.5)")
    p.add_argument("--x0", default=None, type=float, help="starting level (required)")
    p.add_argument("--mean", action="store_true", default=False,
                   help="also integrate the conditional-mean trajectory")
    p.set_defaults(handler=cmd_trajectory)

    p = sub.add_parser("predict", help="forward prediction for one subject")
    p.add_argument("input", help="input CSV")
    _add_io_options(p)
    _add_estimator_options(p)
    _add_integrator_options(p, "euler")
    p.add_argument("--subject-id", default=None, metavar="ID",
                   help="subject to predict (required)")
    p.add_argument("--target-alpha", default=None, metavar="LIST",
                   help="comma-separated target quantile levels (default 0.5)")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("rank", help="per-subject alpha-star table")
    p.add_argument("input", help="input CSV")
    _add_io_options(p)
    _add_estimator_options(p)
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("bands", help="bootstrap bands for a two-group difference")
    p.add_argument("inputs", nargs="+", metavar="INPUT",
                   help="two CSVs, or one CSV with a group column")
    _add_io_options(p)
    _add_estimator_options(p)
    _add_integrator_options(p, "rk4")
    p.add_argument("--groups", default=None, metavar="A,B",
                   help="group labels to compare (single-input runs)")
    p.add_argument("--alpha", default=None, type=float,
                   help="quantile level (default 0.5)")
    p.add_argument("--x0", default=None, type=float, help="starting level (required)")
    p.add_argument("--b-boot", default=None, type=int, metavar="B",
                   help="bootstrap replicates, at least 100 (default 200)")
    p.add_argument("--coverages", default=None, metavar="LIST",
                   help="band coverage levels (default 0.9,0.95)")
    p.add_argument("--seed", default=None, type=int, help="master seed (default 0)")
    p.add_argument("--workers", default=None, type=int,
                   help="process count; results do not depend on it (default 1)")
    p.set_defaults(handler=cmd_bands)

    p = sub.add_parser("slope-field", help="quantile gradient over a level grid")
    p.add_argument("input", help="input CSV")
    _add_io_options(p)
    _add_estimator_options(p)
    p.add_argument("--alpha", default=None, type=float,
                   help="quantile level (default 0.5)")
    p.add_argument("--levels", default=None, metavar="LIST",
                   help="comma-separated levels (default: grid over the data range)")
    p.add_argument("--grid-size", default=None, type=int, metavar="K",
                   help="grid size when --levels is omitted (default 25)")
    p.set_defaults(handler=cmd_slope_field)

    p = sub.add_parser("simulate", help="generate a synthetic snippet dataset")
    _add_io_options(p)
    p.add_argument("--n", default=None, type=int, help="number of subjects (required)")
    p.add_argument("--scenario", default=None,
                   choices=("true_xz", "noiseless", "gaussian"),
                   help="observation scenario (default true_xz)")
    p.add_argument("--sigma", default=None, type=float,
                   help="noise scale for the gaussian scenario (default 0)")
    p.add_argument("--seed", default=None, type=int, help="master seed (default 0)")
    p.add_argument("--b-range", default=None, metavar="LO,HI",
                   help="decay rate range (default 0.3,0.5)")
    p.add_argument("--t-range", default=None, metavar="LO,HI",
                   help="window center range (default 0.5,9.5)")
    p.add_argument("--window", default=None, type=float,
                   help="window half-width (default 0.5)")
    p.add_argument("--n-obs", default=None, metavar="LIST",
                   help="observations-per-snippet choices (default 3,4,5)")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("bench", help="AISE benchmark against the decay-family oracle")
    _add_io_options(p)
    p.add_argument("--scenarios", default=None, metavar="LIST",
                   help="comma-separated scenarios: true_xz, noiseless, "
                        "gaussian:<sigma> (default true_xz)")
    p.add_argument("--ns", default=None, metavar="LIST",
                   help="comma-separated sample sizes (default 300)")
    p.add_argument("--alphas", default=None, metavar="LIST",
                   help="comma-separated quantile levels (default 0.25,0.5,0.75)")
    p.add_argument("--reps", default=None, type=int,
                   help="Monte Carlo replicates per cell (default 100)")
    p.add_argument("--seed", default=None, type=int, help="master seed (default 0)")
    p.add_argument("--h-k", default=None, type=float, help="level bandwidth (default 0.01)")
    p.add_argument("--h-h", default=None, type=float, help="slope bandwidth (default 0.001)")
    p.add_argument("--kernel", default=None, choices=KERNEL_KINDS,
                   help="kernel shape (default gaussian)")
    p.add_argument("--x0", default=None, type=float, help="starting level (default 0.4)")
    _add_integrator_options(p, "rk4")
    p.add_argument("--oracle-size", default=None, type=int, metavar="M",
                   help="oracle Monte Carlo draw size (default 1000000)")
    p.add_argument("--workers", default=None, type=int,
                   help="process count; results do not depend on it (default 1)")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except QtrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
