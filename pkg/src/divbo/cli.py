"""Replicated-experiment runner.

``divbo run config.json`` executes R replicates of every configured method on
one benchmark.  Within a replicate all methods share the same Latin hypercube
initial design; method runs are seeded independently so cells can execute in
any order (or in parallel with ``--jobs``).  Each cell writes one trace CSV;
``divbo aggregate`` folds the traces into a per-iteration summary table
(mean and 25th/75th percentiles, linear interpolation between order
statistics).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquisitions import AcquisitionSpec
from .benchmarks import Benchmark, get_benchmark
from .loop import LoopConfig, Trace, default_n_init, run_batch_bo
from .metrics import (
    FLOOD_FILL_RESOLUTION,
    SF_CANDIDATES,
    GroundTruth,
    coverage_series,
    optimization_gap,
    sf_metrics,
)
from .optimize import lhs

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MetricOptions:
    grid_resolution: int = FLOOD_FILL_RESOLUTION
    n_candidates: int = SF_CANDIDATES
    sf: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark_id: str
    benchmark_params: dict
    methods: tuple[AcquisitionSpec, ...]
    method_labels: tuple[str, ...]
    replicates: int
    n_total: int
    n_init: int | None = None
    q: int = 1
    seed: int = 0
    epsilon: float | None = None
    out_dir: str = "results"
    metric_options: MetricOptions = MetricOptions()

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.methods:
            raise ConfigError("method list may not be empty")
        if len(set(self.method_labels)) != len(self.method_labels):
            raise ConfigError("method labels must be unique")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if doc.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError("config must declare schema_version 1")
        try:
            bench = dict(doc["benchmark"])
            bench_id = bench.pop("id")
            q = int(doc.get("q", 1))
            methods = []
            labels = []
            for m in doc["methods"]:
                spec = AcquisitionSpec(
                    kind=m["kind"],
                    lam=float(m.get("lambda", 0.5)),
                    batch_size=int(m.get("q", q)),
                    mc_samples=int(m.get("mc_samples", 256)),
                )
                methods.append(spec)
                labels.append(m.get("name", spec.label()))
            mo = doc.get("metrics", {})
            return cls(
                benchmark_id=bench_id,
                benchmark_params=bench,
                methods=tuple(methods),
                method_labels=tuple(labels),
                replicates=int(doc["replicates"]),
                n_total=int(doc["n_total"]),
                n_init=(int(doc["n_init"]) if doc.get("n_init") is not None else None),
                q=q,
                seed=int(doc.get("seed", 0)),
                epsilon=(float(doc["epsilon"]) if doc.get("epsilon") is not None else None),
                out_dir=str(doc.get("out_dir", "results")),
                metric_options=MetricOptions(
                    grid_resolution=int(mo.get("grid_resolution", FLOOD_FILL_RESOLUTION)),
                    n_candidates=int(mo.get("n_candidates", SF_CANDIDATES)),
                    sf=bool(mo.get("sf", False)),
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc


def _resolve_epsilon(cfg: ExperimentConfig, bench: Benchmark) -> float:
    if cfg.epsilon is not None:
        return cfg.epsilon
    if bench.epsilon is None:
        raise ConfigError(f"benchmark {bench.name!r} carries no tolerance; set epsilon")
    return bench.epsilon


def _ground_truth(cfg: ExperimentConfig, bench: Benchmark, epsilon: float) -> GroundTruth | None:
    if bench.f_star is None or len(bench.minimizers) == 0:
        return None
    return GroundTruth.from_benchmark(bench, grid_resolution=cfg.metric_options.grid_resolution,
                                      epsilon=epsilon)


def _design_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate, 0)))


def _method_rng(seed: int, replicate: int, method_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(replicate, 1 + method_index))
    )


def trace_filename(label: str, replicate: int) -> str:
    return f"trace_{label}_r{replicate:03d}.csv"


def _write_trace_csv(path: Path, trace: Trace, label: str, replicate: int,
                     coverage: np.ndarray, gap: np.ndarray, dim: int) -> None:
    header = (["replicate", "method", "iter", "batch_index"]
              + [f"x_{k + 1}" for k in range(dim)]
              + ["f", "f_min", "gamma_n", "coverage", "gap", "wall_ms"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, r in enumerate(trace.records):
            w.writerow(
                [replicate, label, r.iteration, r.batch_index]
                + [repr(float(v)) for v in r.point]
                + [repr(r.value), repr(r.f_min), repr(r.gamma_n),
                   repr(float(coverage[i])), repr(float(gap[i])), repr(r.wall_ms)]
            )


def run_cell(cfg: ExperimentConfig, replicate: int, method_index: int,
             out_dir: Path) -> Path:
    """Run one (replicate, method) cell and write its trace CSV."""
    bench = get_benchmark(cfg.benchmark_id, **cfg.benchmark_params)
    epsilon = _resolve_epsilon(cfg, bench)
    gt = _ground_truth(cfg, bench, epsilon)
    spec = cfg.methods[method_index]
    label = cfg.method_labels[method_index]
    n_init = cfg.n_init if cfg.n_init is not None else default_n_init(bench.dim)
    design = lhs(n_init, bench.dim, _design_rng(cfg.seed, replicate))
    loop_cfg = LoopConfig(
        dim=bench.dim,
        n_total=cfg.n_total,
        spec=spec,
        epsilon=epsilon,
        n_init=n_init,
        seed=cfg.seed,
    )
    trace = run_batch_bo(bench, loop_cfg,
                         rng=_method_rng(cfg.seed, replicate, method_index),
                         initial_design=design)
    if trace.error is not None:
        raise RuntimeError(f"cell ({label}, r{replicate}) aborted: {trace.error}")
    if gt is not None:
        coverage = coverage_series(trace.points, trace.values, gt)
        gap = optimization_gap(trace.values, gt.f_star)
    else:
        coverage = np.full(len(trace), math.nan)
        gap = np.full(len(trace), math.nan)
    path = out_dir / trace_filename(label, replicate)
    _write_trace_csv(path, trace, label, replicate, coverage, gap, bench.dim)
    return path


def _run_cell_worker(doc: dict, replicate: int, method_index: int, out_dir: str) -> str:
    cfg = ExperimentConfig.from_dict(doc)
    return str(run_cell(cfg, replicate, method_index, Path(out_dir)))


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   jobs: int = 1, config_doc: dict | None = None) -> dict:
    """Execute all cells, then aggregate.  Per-cell failures are recorded in
    failures.json and do not stop the run."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(r, m) for r in range(cfg.replicates) for m in range(len(cfg.methods))]
    failures: list[dict] = []
    if jobs > 1:
        if config_doc is None:
            raise ValueError("parallel runs need the raw config document")
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(_run_cell_worker, config_doc, r, m, str(out)): (r, m)
                    for r, m in cells}
            for fut, (r, m) in futs.items():
                try:
                    fut.result()
                except Exception as exc:
                    failures.append({"replicate": r, "method": cfg.method_labels[m],
                                     "error": str(exc)})
    else:
        for r, m in cells:
            try:
                run_cell(cfg, r, m, out)
            except Exception as exc:
                failures.append({"replicate": r, "method": cfg.method_labels[m],
                                 "error": str(exc)})
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    summary = aggregate(out)
    if cfg.metric_options.sf:
        _write_sf_table(cfg, out)
    return summary


def _write_sf_table(cfg: ExperimentConfig, out: Path) -> None:
    """Space-filling metrics of each cell's tolerable solutions (final basket)."""
    bench = get_benchmark(cfg.benchmark_id, **cfg.benchmark_params)
    epsilon = _resolve_epsilon(cfg, bench)
    if bench.f_star is None:
        return
    rows = []
    for path in sorted(out.glob("trace_*.csv")):
        recs = _read_trace(path)
        pts = np.array([[row[f"x_{k + 1}"] for k in range(bench.dim)] for row in recs])
        vals = np.array([row["f"] for row in recs])
        basket = pts[vals <= bench.f_star + epsilon]
        if len(basket) == 0:
            continue
        sf1, sf2 = sf_metrics(basket, n_candidates=cfg.metric_options.n_candidates)
        rows.append({"method": recs[0]["method"], "replicate": int(recs[0]["replicate"]),
                     "n_tolerable": int(len(basket)), "sf1": sf1, "sf2": sf2})
    with open(out / "sf_metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "replicate", "n_tolerable", "sf1", "sf2"])
        w.writeheader()
        for row in rows:
            w.writerow(row)


def _read_trace(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key, val in row.items():
                if key not in ("method",):
                    parsed[key] = float(val)
            rows.append(parsed)
        return rows


def aggregate(trace_dir: str | Path) -> dict:
    """Fold the trace CSVs in a directory into summary.csv / summary.json.

    Reports mean and 25th/75th percentiles over replicates, per method and
    iteration.  All traces of one method must share the same budget.
    """
    trace_dir = Path(trace_dir)
    files = sorted(trace_dir.glob("trace_*.csv"))
    if not files:
        raise ValueError(f"no trace files under {trace_dir}")
    by_method: dict[str, list[list[dict]]] = {}
    for path in files:
        rows = _read_trace(path)
        by_method.setdefault(rows[0]["method"], []).append(rows)

    summary_rows = []
    summary_doc: dict = {"schema_version": 1, "methods": {}}
    for method in sorted(by_method):
        traces = by_method[method]
        lengths = {len(t) for t in traces}
        if len(lengths) != 1:
            raise ValueError(f"traces for {method!r} disagree on budget: {sorted(lengths)}")
        n = lengths.pop()
        cov = np.array([[row["coverage"] for row in t] for t in traces])
        gap = np.array([[row["gap"] for row in t] for t in traces])
        stats = {
            "coverage_mean": cov.mean(axis=0),
            "coverage_p25": np.percentile(cov, 25, axis=0),
            "coverage_p75": np.percentile(cov, 75, axis=0),
            "gap_mean": gap.mean(axis=0),
            "gap_p25": np.percentile(gap, 25, axis=0),
            "gap_p75": np.percentile(gap, 75, axis=0),
        }
        summary_doc["methods"][method] = {
            "replicates": len(traces),
            **{k: [float(v) for v in arr] for k, arr in stats.items()},
        }
        for i in range(n):
            summary_rows.append(
                [method, i + 1] + [repr(float(stats[k][i])) for k in
                                   ("coverage_mean", "coverage_p25", "coverage_p75",
                                    "gap_mean", "gap_p25", "gap_p75")]
            )

    with open(trace_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "iter", "coverage_mean", "coverage_p25", "coverage_p75",
                    "gap_mean", "gap_p25", "gap_p75"])
        w.writerows(summary_rows)
    (trace_dir / "summary.json").write_text(json.dumps(summary_doc, indent=2) + "\n")
    return summary_doc


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="divbo",
                                     description="replicated diverse-optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run all (benchmark x method) cells from a config")
    p_run.add_argument("config", help="experiment config JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_agg = sub.add_parser("aggregate", help="rebuild the summary from trace CSVs")
    p_agg.add_argument("dir", help="directory holding trace_*.csv files")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            doc = json.loads(Path(args.config).read_text())
            if args.seed is not None:
                doc["seed"] = args.seed
            if args.out is not None:
                doc["out_dir"] = args.out
            cfg = ExperimentConfig.from_dict(doc)
            run_experiment(cfg, jobs=args.jobs, config_doc=doc)
            return 0
        aggregate(args.dir)
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
