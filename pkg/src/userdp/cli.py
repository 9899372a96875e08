"""Batch experiment runner.

Subcommands: run (execute a config), validate (lint a config), report
(re-fit scaling slopes from an existing results.csv). Configs are JSON
objects {experiment, seed, params, output_dir}; every run writes
results.csv with a fixed long-format schema plus manifest.json, and the
audit/scaling experiments add a JSON sidecar. Exit codes: 0 success, 2
config error, 3 the experiment itself failed its embedded check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .audit import dp_ratio_audit, scaling_regression
from .core import PrivacyBudget, RandomSource, UserDataset, scalar_dataset
from .mean import user_level_bounded_mean, winsorized_mean_1d
from .optimize import FeasibleSet, localize_strongly_convex
from .range_estimation import private_range
from .sco import phased_erm
from .select import HypothesisClass, default_tau_for_selection, private_select
from .synth import (
    DistributionSpec,
    HeterogeneitySpec,
    make_loss,
    population_mean,
    sample_user_dataset,
)

CSV_COLUMNS = ("experiment", "n", "m", "eps", "delta", "d", "trial", "metric_name", "metric_value")
EXPERIMENTS = ("mean", "erm", "sco", "select", "audit", "scaling")
GRID_EXPERIMENTS = ("mean", "erm", "sco", "select")
AUDIT_TARGETS = ("private_range", "winsorized_mean_1d", "private_select", "no_noise_mean")


class ConfigError(ValueError):
    """Config missing, malformed, or asking for an impossible run."""


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    params: dict
    output_dir: str | None


def load_config(path: str | Path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")
    experiment = payload.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    seed = payload.get("seed")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    params = payload.get("params")
    if not isinstance(params, dict):
        raise ConfigError("params must be a JSON object")
    output_dir = payload.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string when present")
    return RunConfig(experiment=experiment, seed=seed, params=params, output_dir=output_dir)


def _require(params: dict, keys: tuple[str, ...], experiment: str) -> None:
    missing = [k for k in keys if k not in params]
    if missing:
        raise ConfigError(f"{experiment} config missing params: {', '.join(missing)}")


def _as_grid(value) -> list:
    values = list(value) if isinstance(value, (list, tuple)) else [value]
    if not values:
        raise ConfigError("grid axes must be non-empty")
    return values


def _item_spec(params: dict):
    dist = params.get("dist")
    if not isinstance(dist, dict):
        raise ConfigError("params.dist must be a distribution object")
    try:
        if "eta" in dist:
            return HeterogeneitySpec.from_dict(dist)
        return DistributionSpec.from_dict(dist)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"bad distribution spec: {exc}") from exc


def _positive(params: dict, key: str) -> float:
    value = params.get(key)
    if not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"params.{key} must be a positive number, got {value!r}")
    return float(value)


def validate_config(cfg: RunConfig) -> None:
    """Full config lint: everything short of running trials."""
    params = cfg.params
    if cfg.experiment == "scaling":
        inner = params.get("inner")
        if not isinstance(inner, dict) or inner.get("experiment") not in GRID_EXPERIMENTS:
            raise ConfigError(
                f"scaling needs params.inner.experiment in {GRID_EXPERIMENTS}"
            )
        inner_cfg = RunConfig(
            experiment=inner["experiment"],
            seed=cfg.seed,
            params={k: v for k, v in inner.items() if k != "experiment"},
            output_dir=None,
        )
        validate_config(inner_cfg)
        expected = params.get("expected_slopes", {})
        if not isinstance(expected, dict):
            raise ConfigError("expected_slopes must map axis to [lo, hi]")
        for axis, band in expected.items():
            if axis not in ("n", "m", "eps") or len(band) != 2 or band[0] > band[1]:
                raise ConfigError(f"bad expected_slopes entry: {axis!r}: {band!r}")
        return
    if cfg.experiment == "audit":
        _require(params, ("target", "eps", "trials"), "audit")
        if params["target"] not in AUDIT_TARGETS:
            raise ConfigError(f"audit target must be one of {AUDIT_TARGETS}")
        _positive(params, "eps")
        if int(params["trials"]) < 10_000:
            raise ConfigError("audit trials must be at least 10000")
        _build_audit_case(params)
        return
    _require(params, ("n", "m", "eps", "trials", "dist"), cfg.experiment)
    for axis in ("n", "m"):
        if any(int(v) < 1 for v in _as_grid(params[axis])):
            raise ConfigError(f"params.{axis} values must be >= 1")
    if any(float(e) <= 0 for e in _as_grid(params["eps"])):
        raise ConfigError("params.eps values must be positive")
    if int(params["trials"]) < 1:
        raise ConfigError("params.trials must be >= 1")
    _item_spec(params)
    if cfg.experiment == "mean":
        _require(params, ("delta", "gamma"), "mean")
        _positive(params, "delta")
        _positive(params, "gamma")
        if _item_spec(params).bound_kind != "l2":
            raise ConfigError("mean experiment needs an l2-bounded distribution")
    elif cfg.experiment == "erm":
        _require(params, ("delta", "sigma", "radius"), "erm")
        _positive(params, "delta")
        _positive(params, "sigma")
        _positive(params, "radius")
    elif cfg.experiment == "sco":
        _require(params, ("delta", "sigma", "radius"), "sco")
        _positive(params, "delta")
        _positive(params, "sigma")
        _positive(params, "radius")
    elif cfg.experiment == "select":
        _require(params, ("k", "alpha", "radius"), "select")
        if int(params["k"]) < 1:
            raise ConfigError("params.k must be >= 1")
        alpha = _positive(params, "alpha")
        if alpha >= 1.0:
            raise ConfigError("params.alpha must lie in (0, 1)")
        _positive(params, "radius")


# ---------------------------------------------------------------------------
# Per-trial work. One picklable entry point so --jobs can use processes.


def _loss_bound_l2(spec) -> float:
    """sup ||z||_2 implied by the declared item bound."""
    if spec.bound_kind == "l2":
        return spec.bound
    return spec.bound * math.sqrt(spec.dim)


def _mean_trial(params: dict, cell: dict, rng: RandomSource) -> list[tuple[str, float]]:
    spec = _item_spec(params)
    data = sample_user_dataset(spec, cell["n"], cell["m"], rng)
    budget = PrivacyBudget(cell["eps"], float(params["delta"]))
    estimate = user_level_bounded_mean(data, budget, float(params["gamma"]), rng.child())
    truth = np.asarray(params["_truth"], dtype=float)
    mse = float(np.sum((estimate.value - truth) ** 2))
    return [("mse", mse), ("clean", float(estimate.clean_event))]


def _erm_trial(params: dict, cell: dict, rng: RandomSource) -> list[tuple[str, float]]:
    spec = _item_spec(params)
    data = sample_user_dataset(spec, cell["n"], cell["m"], rng)
    radius = float(params["radius"])
    center = np.asarray(params.get("center", [0.0] * spec.dim), dtype=float)
    feasible = FeasibleSet(center=center, radius=radius)
    grad_bound = radius + float(np.linalg.norm(center)) + _loss_bound_l2(spec)
    model = make_loss("quadratic", gradient_bound=grad_bound)
    budget = PrivacyBudget(cell["eps"], float(params["delta"]))
    theta = localize_strongly_convex(
        data, model, feasible, budget, float(params["sigma"]), rng.child()
    )
    minimizer = feasible.project(data.per_user_means().mean(axis=0))
    dist_sq = float(np.sum((theta - minimizer) ** 2))
    return [("dist_sq", dist_sq)]


def _sco_trial(params: dict, cell: dict, rng: RandomSource) -> list[tuple[str, float]]:
    spec = _item_spec(params)
    data = sample_user_dataset(spec, cell["n"], cell["m"], rng)
    radius = float(params["radius"])
    feasible = FeasibleSet(center=np.zeros(spec.dim), radius=radius)
    model = make_loss("linear", gradient_bound=_loss_bound_l2(spec))
    budget = PrivacyBudget(cell["eps"], float(params["delta"]))
    theta = phased_erm(data, model, feasible, budget, float(params["sigma"]), rng.child())
    truth = np.asarray(params["_truth"], dtype=float)
    # Population risk of -<theta, z> is -<theta, mu>; optimum is R*mu/||mu||.
    excess = radius * float(np.linalg.norm(truth)) - float(theta @ truth)
    return [("excess_risk", excess)]


def _select_hypotheses(params: dict, dim: int, seed: int) -> np.ndarray:
    k = int(params["k"])
    radius = float(params["radius"])
    if "hypotheses" in params:
        points = np.asarray(params["hypotheses"], dtype=float)
        if points.shape != (k, dim):
            raise ConfigError(f"hypotheses must have shape ({k}, {dim})")
        return points
    gen = RandomSource(seed ^ 0xA11CE).generator
    directions = gen.standard_normal((k, dim))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    return radius * directions


def _select_trial(params: dict, cell: dict, rng: RandomSource) -> list[tuple[str, float]]:
    spec = _item_spec(params)
    data = sample_user_dataset(spec, cell["n"], cell["m"], rng)
    points = np.asarray(params["_hypotheses"], dtype=float)
    bound = float(params["radius"]) * _loss_bound_l2(spec)
    hyp = HypothesisClass(
        params=points,
        loss=lambda theta, z: -float(np.dot(theta, z)),
        bound=bound,
        loss_batch=lambda theta, items: -np.asarray(items, dtype=float) @ theta,
    )
    truth = np.asarray(params["_truth"], dtype=float)
    best = int(np.argmin(-points @ truth))
    alpha = float(params["alpha"])
    tau = default_tau_for_selection(bound, hyp.k, cell["n"], cell["m"], alpha)
    result = private_select(data, hyp, cell["eps"], alpha / hyp.k, tau, rng.child())
    return [
        ("correct", float(result.index == best)),
        ("selected_value", result.value),
        ("rounds", float(result.rounds)),
        ("capped", float(result.capped)),
    ]


_TRIAL_FUNCS = {
    "mean": _mean_trial,
    "erm": _erm_trial,
    "sco": _sco_trial,
    "select": _select_trial,
}


def _run_task(args: tuple) -> tuple[int, list[tuple[str, float]]]:
    experiment, params, cell, task_index, task_seed = args
    rng = RandomSource(task_seed)
    return task_index, _TRIAL_FUNCS[experiment](params, cell, rng)


def _prepare_grid_params(experiment: str, params: dict, seed: int) -> dict:
    """Attach derived, trial-invariant values so workers don't recompute."""
    prepared = dict(params)
    if experiment in ("mean", "sco", "select"):
        prepared["_truth"] = population_mean(_item_spec(params)).tolist()
    if experiment == "select":
        spec = _item_spec(params)
        prepared["_hypotheses"] = _select_hypotheses(params, spec.dim, seed).tolist()
    return prepared


def _run_grid_experiment(cfg: RunConfig, jobs: int, experiment: str, params: dict) -> list[dict]:
    prepared = _prepare_grid_params(experiment, params, cfg.seed)
    cells = [
        {"n": int(n), "m": int(m), "eps": float(e)}
        for n in _as_grid(params["n"])
        for m in _as_grid(params["m"])
        for e in _as_grid(params["eps"])
    ]
    trials = int(params["trials"])
    tasks = []
    for cell_idx, cell in enumerate(cells):
        for trial in range(trials):
            task_index = cell_idx * trials + trial
            tasks.append((experiment, prepared, cell, task_index, cfg.seed ^ task_index))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks, chunksize=8))
    else:
        outcomes = [_run_task(t) for t in tasks]
    outcomes.sort(key=lambda pair: pair[0])
    spec = _item_spec(params)
    delta = params.get("delta", "")
    rows = []
    for task_index, metrics in outcomes:
        cell = cells[task_index // trials]
        trial = task_index % trials
        for name, value in metrics:
            rows.append(
                {
                    "experiment": experiment,
                    "n": cell["n"],
                    "m": cell["m"],
                    "eps": cell["eps"],
                    "delta": delta,
                    "d": spec.dim,
                    "trial": trial,
                    "metric_name": name,
                    "metric_value": value,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Audit experiment.


def _build_audit_case(params: dict):
    """Returns (mechanism, dataset_a, dataset_b, delta, label)."""
    target = params["target"]
    eps = float(params["eps"])
    bound = float(params.get("bound", 1.0))
    tau = float(params.get("tau", 0.25))
    values = params.get("values_a", [-0.61, -0.35, -0.2, 0.1, 0.22, 0.4, 0.55, 0.7])
    replace = float(params.get("replace_value", -bound * 0.9))
    a = scalar_dataset(values, bound)
    b = a.replace_user(0, [[replace]])
    if target == "private_range":
        def mechanism(data: UserDataset, run_rng: RandomSource) -> float:
            return private_range(data.stacked().ravel(), eps, tau, bound, run_rng).lo

        return mechanism, a, b, 0.0, "private_range"
    if target == "winsorized_mean_1d":
        def mechanism(data: UserDataset, run_rng: RandomSource) -> float:
            return winsorized_mean_1d(data.stacked().ravel(), eps, tau, bound, run_rng).value

        return mechanism, a, b, 0.0, "winsorized_mean_1d"
    if target == "no_noise_mean":
        def mechanism(data: UserDataset, run_rng: RandomSource) -> float:
            return float(data.stacked().mean())

        return mechanism, a, b, 0.0, "no_noise_mean"
    k = int(params.get("k", 3))
    m_items = int(params.get("m", 4))
    gamma_stop = float(params.get("gamma_stop", 0.4))
    n_users = len(values)
    gen = RandomSource(0xB0A7 ^ n_users).generator
    items = gen.uniform(-bound, bound, size=(n_users, m_items, 1))
    sel_a = UserDataset(users=tuple(items), dim=1, item_bound=bound, bound_kind="linf")
    sel_b = sel_a.replace_user(0, np.full((m_items, 1), replace))
    thetas = np.linspace(-1.0, 1.0, k)[:, None]
    hyp = HypothesisClass(
        params=thetas,
        loss=lambda theta, z: float(theta[0] * z[0]),
        bound=bound,
        loss_batch=lambda theta, items_: np.asarray(items_, dtype=float)[:, 0] * theta[0],
    )

    def mechanism(data: UserDataset, run_rng: RandomSource) -> tuple[int, float]:
        result = private_select(data, hyp, eps, gamma_stop, tau, run_rng, trial_cap=60)
        return result.index, result.value

    return mechanism, sel_a, sel_b, 0.0, "private_select"


def _run_audit_experiment(cfg: RunConfig) -> tuple[list[dict], dict, bool]:
    params = cfg.params
    mechanism, a, b, delta, label = _build_audit_case(params)
    report = dp_ratio_audit(
        mechanism,
        a,
        b,
        float(params["eps"]),
        delta,
        int(params["trials"]),
        RandomSource(cfg.seed),
        name=label,
    )
    expected_pass = params.get("expect", "pass") == "pass"
    failed = report.passed != expected_pass
    rows = [
        {
            "experiment": "audit",
            "n": a.n_users,
            "m": int(np.max(a.item_counts)),
            "eps": float(params["eps"]),
            "delta": delta,
            "d": a.dim,
            "trial": 0,
            "metric_name": "max_ratio",
            "metric_value": report.max_ratio,
        },
        {
            "experiment": "audit",
            "n": a.n_users,
            "m": int(np.max(a.item_counts)),
            "eps": float(params["eps"]),
            "delta": delta,
            "d": a.dim,
            "trial": 0,
            "metric_name": "pass",
            "metric_value": float(report.passed),
        },
    ]
    return rows, report.to_dict(), failed


# ---------------------------------------------------------------------------
# Scaling experiment and report.

ERROR_METRICS = ("mse", "dist_sq", "excess_risk")


def _fit_rows(rows: list[dict], metric: str) -> dict:
    """Per-cell mean of metric, then log-log slopes across varied axes."""
    cells: dict[tuple, list[float]] = {}
    for row in rows:
        if row["metric_name"] != metric:
            continue
        key = (float(row["n"]), float(row["m"]), float(row["eps"]))
        cells.setdefault(key, []).append(float(row["metric_value"]))
    if not cells:
        raise ConfigError(f"no rows carry metric {metric!r}")
    table = [
        {"n": k[0], "m": k[1], "eps": k[2], "error": float(np.mean(v))}
        for k, v in sorted(cells.items())
    ]
    fits = scaling_regression(table)
    return {
        "metric": metric,
        "cells": table,
        "slopes": {
            axis: {"slope": fit.slope, "stderr": fit.stderr} for axis, fit in fits.items()
        },
    }


def _run_scaling_experiment(cfg: RunConfig, jobs: int) -> tuple[list[dict], dict, bool]:
    inner = cfg.params["inner"]
    experiment = inner["experiment"]
    inner_params = {k: v for k, v in inner.items() if k != "experiment"}
    rows = _run_grid_experiment(cfg, jobs, experiment, inner_params)
    metric = cfg.params.get("metric")
    if metric is None:
        present = {row["metric_name"] for row in rows}
        metric = next(name for name in ERROR_METRICS if name in present)
    sidecar = _fit_rows(rows, metric)
    failed = False
    for axis, band in cfg.params.get("expected_slopes", {}).items():
        fit = sidecar["slopes"].get(axis)
        if fit is None or not (band[0] <= fit["slope"] <= band[1]):
            failed = True
    sidecar["expected_slopes"] = cfg.params.get("expected_slopes", {})
    sidecar["pass"] = not failed
    return rows, sidecar, failed


# ---------------------------------------------------------------------------
# Output plumbing.


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            value = out["metric_value"]
            out["metric_value"] = f"{value:.17g}" if isinstance(value, float) else value
            writer.writerow(out)


def _config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(
        {
            "experiment": cfg.experiment,
            "seed": cfg.seed,
            "params": cfg.params,
            "output_dir": cfg.output_dir,
        },
        sort_keys=True,
    )
    return hashlib.sha256(canonical.encode()).hexdigest()


def _write_manifest(out_dir: Path, cfg: RunConfig, n_rows: int, wall_time: float) -> None:
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_hash": _config_hash(cfg),
        "code_version": __version__,
        "wall_time_s": wall_time,
        "n_rows": n_rows,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def run(config_path: str | Path, jobs: int = 1, seed_override: int | None = None,
        output: str | None = None) -> int:
    """Execute one experiment config; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        if seed_override is not None:
            cfg = RunConfig(cfg.experiment, seed_override, cfg.params, cfg.output_dir)
        validate_config(cfg)
        out_dir = Path(output or cfg.output_dir or f"runs/{cfg.experiment}-{cfg.seed}")
        out_dir.mkdir(parents=True, exist_ok=True)
        started = time.monotonic()
        sidecar: dict | None = None
        sidecar_name = ""
        failed = False
        if cfg.experiment == "audit":
            rows, sidecar, failed = _run_audit_experiment(cfg)
            sidecar_name = "audit_report.json"
        elif cfg.experiment == "scaling":
            rows, sidecar, failed = _run_scaling_experiment(cfg, jobs)
            sidecar_name = "scaling.json"
        else:
            rows = _run_grid_experiment(cfg, jobs, cfg.experiment, cfg.params)
        _write_csv(out_dir / "results.csv", rows)
        if sidecar is not None:
            (out_dir / sidecar_name).write_text(json.dumps(sidecar, indent=2) + "\n")
        _write_manifest(out_dir, cfg, len(rows), time.monotonic() - started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(rows)} rows to {out_dir / 'results.csv'}")
    if failed:
        print("embedded acceptance check FAILED", file=sys.stderr)
        return 3
    return 0


def validate(config_path: str | Path) -> int:
    try:
        cfg = load_config(config_path)
        validate_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {cfg.experiment} experiment, seed {cfg.seed}")
    return 0


def report(output: str | Path, metric: str | None = None) -> int:
    out_dir = Path(output)
    csv_path = out_dir / "results.csv"
    try:
        if not csv_path.exists():
            raise ConfigError(f"no results.csv under {out_dir}")
        with csv_path.open() as handle:
            rows = list(csv.DictReader(handle))
        if not rows:
            raise ConfigError("results.csv is empty")
        if metric is None:
            present = {row["metric_name"] for row in rows}
            metric = next((name for name in ERROR_METRICS if name in present), None)
            if metric is None:
                raise ConfigError(
                    f"no known error metric in CSV; pass --metric (found {sorted(present)})"
                )
        sidecar = _fit_rows(rows, metric)
    except (ConfigError, ValueError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 2
    (out_dir / "scaling.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(json.dumps(sidecar["slopes"], indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="userdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute an experiment config")
    run_parser.add_argument("--config", required=True, help="path to JSON config")
    run_parser.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    run_parser.add_argument("--seed-override", type=int, default=None)
    run_parser.add_argument("--output", default=None, help="output directory override")

    val_parser = sub.add_parser("validate", help="lint a config without running")
    val_parser.add_argument("--config", required=True)

    rep_parser = sub.add_parser("report", help="re-fit scaling slopes from results.csv")
    rep_parser.add_argument("--output", required=True, help="run directory with results.csv")
    rep_parser.add_argument("--metric", default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, jobs=args.jobs, seed_override=args.seed_override,
                   output=args.output)
    if args.command == "validate":
        return validate(args.config)
    return report(args.output, metric=args.metric)


if __name__ == "__main__":
    sys.exit(main())
