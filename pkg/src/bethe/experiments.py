"""Sweep harness and command-line interface.

A sweep draws ``model_count`` models from a graph family and, for every
model and every beta on the grid, minimizes F_B from several random starts,
compares against exact enumeration when the model is small enough, and
records both convexity certificates.

Output files (under ``output_path``):

``cells.csv``
    Long format, header ``model_id,beta,metric,value``.  One row per
    (model, beta, metric) in fixed order; see ``CELL_METRICS``.
``aggregate.csv``
    One row per beta; columns ``AGGREGATE_COLUMNS``.
``sweep.json``
    The same values as both CSVs plus the configuration.

Floats are written with ``repr`` so they round-trip exactly.  Unavailable
values (errors in Bethe-only mode, an infinite or missing critical beta)
are written as ``nan``/``inf`` in CSV and ``null`` in JSON.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bethe_core import BetheFunction
from .convexity import certify, critical_beta_diag_dominance, symmetric_model_thresholds
from .exact_oracle import N_MAX, brute_force_solve
from .graph_model import GraphFamily, build_model, load_model, model_to_json, save_model
from .metrics import restart_errors, signed_log_z_gap
from .optimizer import OptimizerConfig, multi_restart_minimize, write_trace_csv

__all__ = [
    "DEFAULT_BETA_GRID",
    "PRESETS",
    "CELL_METRICS",
    "AGGREGATE_COLUMNS",
    "SweepConfig",
    "CellRecord",
    "SweepResult",
    "run_sweep",
    "stage_classification",
    "emit_tables",
    "aggregate_rows",
    "main",
]

DEFAULT_BETA_GRID = tuple([1e-3] + [round(0.1 * k, 10) for k in range(1, 21)])

PRESETS = {
    "grid5_ferro": GraphFamily("grid", (5, 5), coupling_range=(0.0, 1.0)),
    "grid5_glass": GraphFamily("grid", (5, 5), coupling_range=(-1.0, 1.0)),
    "grid8_ferro": GraphFamily("grid", (8, 8), coupling_range=(0.0, 1.0)),
    "grid8_glass": GraphFamily("grid", (8, 8), coupling_range=(-1.0, 1.0)),
    "k10_ferro": GraphFamily("complete", (10,), coupling_range=(0.0, 1.0)),
    "k10_glass": GraphFamily("complete", (10,), coupling_range=(-1.0, 1.0)),
    "er25_ferro": GraphFamily("erdos_renyi", (25,), p=0.2, coupling_range=(0.0, 1.0)),
    "er25_glass": GraphFamily("erdos_renyi", (25,), p=0.2, coupling_range=(-1.0, 1.0)),
}

CELL_METRICS = (
    "partition_error",
    "singleton_error",
    "pairwise_error",
    "partition_error_avg",
    "singleton_error_avg",
    "pairwise_error_avg",
    "log_z_gap",
    "f_bethe_min",
    "n_clusters",
    "n_converged",
    "n_excluded",
    "diag_convex",
    "sum_convex",
    "beta_star_diag",
    "beta_star_sum",
)

_ERROR_KEYS = CELL_METRICS[:6]

AGGREGATE_COLUMNS = (
    "beta",
    "n_models",
    *[f"{s}_{k}" for k in _ERROR_KEYS for s in ("mean", "std")],
    "mean_beta_star_diag",
    "std_beta_star_diag",
    "frac_diag_convex",
    "frac_sum_convex",
    "frac_convex",
    "mean_n_clusters",
    "convergence_rate",
)


# --------------------------------------------------------------------------
# Configuration and records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Everything that determines a sweep.  Same config, same output bytes."""

    family: GraphFamily
    model_count: int = 20
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    restarts: int = 20
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    output_path: str = "sweep_out"
    workers: int = 1

    def __post_init__(self) -> None:
        grid = tuple(float(b) for b in self.beta_grid)
        object.__setattr__(self, "beta_grid", grid)
        if not grid:
            raise ValueError("beta_grid is empty")
        if any(b <= 0.0 or not math.isfinite(b) for b in grid):
            raise ValueError("beta_grid entries must be finite and positive")
        if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
            raise ValueError("beta_grid must be strictly increasing")
        if self.model_count < 1 or self.restarts < 1 or self.workers < 1:
            raise ValueError("model_count, restarts and workers must be positive")

    @property
    def exact_available(self) -> bool:
        return self.family.node_count <= N_MAX

    def model_seed(self, model_id: int) -> int:
        return int(np.random.SeedSequence([self.seed, model_id]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "model_count": self.model_count,
            "beta_grid": list(self.beta_grid),
            "restarts": self.restarts,
            "optimizer": self.optimizer.to_dict(),
            "seed": self.seed,
            "output_path": self.output_path,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        fam = d["family"]
        family = PRESETS[fam] if isinstance(fam, str) else GraphFamily.from_dict(fam)
        return cls(
            family=family,
            model_count=int(d.get("model_count", 20)),
            beta_grid=tuple(d.get("beta_grid", DEFAULT_BETA_GRID)),
            restarts=int(d.get("restarts", 20)),
            optimizer=OptimizerConfig.from_dict(d.get("optimizer", {})),
            seed=int(d.get("seed", 0)),
            output_path=str(d.get("output_path", "sweep_out")),
            workers=int(d.get("workers", 1)),
        )


@dataclass(frozen=True)
class CellRecord:
    """Results for one (model, beta) cell; ``values`` follows ``CELL_METRICS``."""

    model_id: int
    beta: float
    values: dict
    restarts: int

    def __getitem__(self, key: str) -> float:
        return self.values[key]


@dataclass
class SweepResult:
    config: SweepConfig
    cells: list[CellRecord]

    def aggregate(self) -> list[dict]:
        return aggregate_rows(self.cells, self.config.beta_grid)

    @property
    def convergence_rate(self) -> float:
        runs = sum(c.restarts for c in self.cells)
        return sum(c["n_converged"] for c in self.cells) / runs

    def series(self, metric: str) -> np.ndarray:
        """(model_count, len(beta_grid)) array of one metric."""
        nb = len(self.config.beta_grid)
        out = np.full((self.config.model_count, nb), np.nan)
        col = {b: k for k, b in enumerate(self.config.beta_grid)}
        for c in self.cells:
            out[c.model_id, col[c.beta]] = c[metric]
        return out


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------

def _finite_or_nan(x) -> float:
    return float("nan") if x is None else float(x)


def _run_model(config: SweepConfig, model_id: int) -> list[CellRecord]:
    base = build_model(config.family.with_seed(config.model_seed(model_id)), config.beta_grid[0])
    beta_star_diag = _finite_or_nan(critical_beta_diag_dominance(base))
    cells = []
    for k, beta in enumerate(config.beta_grid):
        model = base.with_beta(beta)
        fleet = multi_restart_minimize(
            model, config.restarts, np.random.SeedSequence([config.seed, model_id, k]), config.optimizer
        )
        report = certify(model, critical=False)
        v = dict.fromkeys(CELL_METRICS, float("nan"))
        if config.exact_available:
            exact = brute_force_solve(model)
            errs = restart_errors(exact, model, fleet)
            v.update(
                partition_error=errs.best.partition_error,
                singleton_error=errs.best.singleton_error,
                pairwise_error=errs.best.pairwise_error,
                partition_error_avg=errs.averaged.partition_error,
                singleton_error_avg=errs.averaged.singleton_error,
                pairwise_error_avg=errs.averaged.pairwise_error,
                log_z_gap=signed_log_z_gap(exact, fleet.best.f_value, beta),
            )
        v.update(
            f_bethe_min=float(fleet.best.f_value),
            n_clusters=float(fleet.n_clusters),
            n_converged=float(fleet.n_converged),
            n_excluded=float(config.restarts - fleet.n_converged),
            diag_convex=float(report.diag_dominance_convex),
            sum_convex=float(report.sum_decomposition_convex),
            beta_star_diag=beta_star_diag,
            beta_star_sum=float(report.beta_star_sum),
        )
        cells.append(CellRecord(model_id, beta, v, config.restarts))
    return cells


def run_sweep(config: SweepConfig, progress=None) -> SweepResult:
    """Run every (model, beta) cell; output order is (model_id, beta) regardless of workers.

    Models larger than the enumeration limit run in Bethe-only mode with
    the error metrics left as NaN.
    """
    ids = range(config.model_count)
    cells: list[CellRecord] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for m, chunk in zip(ids, pool.map(_run_model, [config] * config.model_count, ids)):
                cells.extend(chunk)
                if progress:
                    progress(m)
    else:
        for m in ids:
            cells.extend(_run_model(config, m))
            if progress:
                progress(m)
    return SweepResult(config, cells)


def aggregate_rows(cells: Sequence[CellRecord], beta_grid: Sequence[float]) -> list[dict]:
    """Per-beta means/stds over models; NaN entries (unavailable values) are skipped."""
    rows = []
    for beta in beta_grid:
        sel = [c for c in cells if c.beta == beta]
        row = {"beta": float(beta), "n_models": float(len(sel))}

        def stats(key):
            x = np.array([c[key] for c in sel], dtype=float)
            x = x[np.isfinite(x)]
            if x.size == 0:
                return float("nan"), float("nan")
            return float(x.mean()), float(x.std())

        for key in _ERROR_KEYS:
            row[f"mean_{key}"], row[f"std_{key}"] = stats(key)
        row["mean_beta_star_diag"], row["std_beta_star_diag"] = stats("beta_star_diag")
        diag = np.array([c["diag_convex"] for c in sel])
        summ = np.array([c["sum_convex"] for c in sel])
        row["frac_diag_convex"] = float(diag.mean())
        row["frac_sum_convex"] = float(summ.mean())
        row["frac_convex"] = float(np.maximum(diag, summ).mean())
        row["mean_n_clusters"] = float(np.mean([c["n_clusters"] for c in sel]))
        row["convergence_rate"] = float(
            sum(c["n_converged"] for c in sel) / sum(c.restarts for c in sel)
        )
        rows.append(row)
    return rows


def stage_classification(
    model,
    restarts: int = 20,
    seed: int = 0,
    config: OptimizerConfig = OptimizerConfig(),
    cluster_tol: float = 1e-3,
) -> str:
    """One of ``convex-certified``, ``unique-minimum-observed``, ``multiple-minima``.

    The last two are empirical: they come from clustering restart minima,
    not from a uniqueness criterion.
    """
    if certify(model, critical=False).convex_certified:
        return "convex-certified"
    fleet = multi_restart_minimize(model, restarts, seed, config, cluster_tol)
    return "unique-minimum-observed" if fleet.n_clusters == 1 else "multiple-minima"


# --------------------------------------------------------------------------
# Emission
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _json_num(x: float):
    return float(x) if math.isfinite(x) else None


def cells_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "beta", "metric", "value"])
    for c in result.cells:
        for key in CELL_METRICS:
            w.writerow([c.model_id, _fmt(c.beta), key, _fmt(c[key])])
    return buf.getvalue()


def aggregate_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for row in result.aggregate():
        w.writerow([_fmt(row[k]) for k in AGGREGATE_COLUMNS])
    return buf.getvalue()


def sweep_json(result: SweepResult) -> str:
    # where and how parallel the run was does not change its values
    config = {k: v for k, v in result.config.to_dict().items() if k not in ("output_path", "workers")}
    payload = {
        "config": config,
        "cells": [
            {"model_id": c.model_id, "beta": c.beta, **{k: _json_num(c[k]) for k in CELL_METRICS}}
            for c in result.cells
        ],
        "aggregate": [{k: _json_num(row[k]) for k in AGGREGATE_COLUMNS} for row in result.aggregate()],
    }
    return json.dumps(payload, indent=1)


def emit_tables(result: SweepResult, out_dir: str | Path | None = None, formats=("csv", "json")) -> list[Path]:
    """Write the sweep tables; returns the paths written."""
    out = Path(out_dir if out_dir is not None else result.config.output_path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        for name, text in (("cells.csv", cells_csv(result)), ("aggregate.csv", aggregate_csv(result))):
            (out / name).write_text(text)
            written.append(out / name)
    if "json" in formats:
        (out / "sweep.json").write_text(sweep_json(result) + "\n")
        written.append(out / "sweep.json")
    return written


def read_cells_csv(path: str | Path) -> list[CellRecord]:
    """Parse ``cells.csv`` back into records (restart counts are not stored and set to 0)."""
    by_key: dict[tuple[int, float], dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["model_id"]), float(row["beta"]))
            by_key.setdefault(key, {})[row["metric"]] = float(row["value"])
    return [CellRecord(m, b, v, 0) for (m, b), v in by_key.items()]


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

def _pair(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'low,high', got {text!r}") from exc
    return lo, hi


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def _cmd_generate(args) -> int:
    if args.preset:
        family = PRESETS[args.preset]
    else:
        family = GraphFamily(args.kind, tuple(args.size), args.p, args.couplings, args.fields)
    model = build_model(family.with_seed(args.seed), args.beta)
    if args.out:
        save_model(model, args.out)
    else:
        _write(model_to_json(model), None)
    return 0


def _cmd_certify(args) -> int:
    model = load_model(args.model)
    if args.beta is not None:
        model = model.with_beta(args.beta)
    report = certify(model, beta_max=args.beta_max, strict_degree_rule=args.strict_degree_rule)
    _write(report.to_json(), args.out)
    return 0


def _cmd_minimize(args) -> int:
    model = load_model(args.model)
    if args.beta is not None:
        model = model.with_beta(args.beta)
    opt = OptimizerConfig.from_dict(_read_json(args.config))
    fleet = multi_restart_minimize(model, args.restarts, args.seed, opt)
    best = fleet.best
    payload = {
        "f_bethe_min": best.f_value,
        "q_star": [float(v) for v in best.q_star],
        "grad_norm": best.grad_norm,
        "iterations": best.iterations,
        "converged": best.converged,
        "n_converged": fleet.n_converged,
        "n_clusters": fleet.n_clusters,
        "cluster_sizes": [len(c) for c in fleet.clusters],
        "log_z_bethe": -model.beta * best.f_value,
    }
    if args.trace:
        write_trace_csv(best, args.trace)
    _write(json.dumps(payload), args.out)
    return 0


def _cmd_exact(args) -> int:
    model = load_model(args.model)
    if args.beta is not None:
        model = model.with_beta(args.beta)
    _write(brute_force_solve(model).to_json(), args.out)
    return 0


def _cmd_sweep(args) -> int:
    data = _read_json(args.config)
    if args.preset:
        data["family"] = args.preset
    if "family" not in data:
        raise ValueError("sweep needs --preset or a config with a 'family' entry")
    for key in ("model_count", "restarts", "workers"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if args.seed_given:
        data["seed"] = args.seed
    if args.out:
        data["output_path"] = args.out
    config = SweepConfig.from_dict(data)

    def progress(m):
        if not args.quiet:
            print(f"model {m + 1}/{config.model_count} done", file=sys.stderr, flush=True)

    result = run_sweep(config, progress)
    for p in emit_tables(result):
        print(p)
    return 0


def _cmd_thresholds(args) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "exact", "dobrushin", "simon", "diag_dominance", "heskes"])
    for d in range(args.d_min, args.d_max + 1):
        w.writerow([d, *(_fmt(v) for v in symmetric_model_thresholds(d, args.J))])
    _write(buf.getvalue(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory (default stdout)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")

    parser = argparse.ArgumentParser(prog="bethe", description="Bethe free energy tools", parents=[common])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample a model and write it as JSON")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--kind", choices=["grid", "complete", "erdos_renyi"], default="grid")
    p.add_argument("--size", type=int, nargs="+", default=[5, 5])
    p.add_argument("--p", type=float, default=0.2)
    p.add_argument("--couplings", type=_pair, default=(0.0, 1.0), metavar="LO,HI")
    p.add_argument("--fields", type=_pair, default=(-0.125, 0.125), metavar="LO,HI")
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("certify", parents=[common], help="evaluate both convexity certificates")
    p.add_argument("model")
    p.add_argument("--beta", type=float)
    p.add_argument("--beta-max", type=float, default=5.0)
    p.add_argument("--strict-degree-rule", action="store_true")
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("minimize", parents=[common], help="multi-restart Bethe minimization")
    p.add_argument("model")
    p.add_argument("--beta", type=float)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--trace", help="CSV file for the best run's trace")
    p.set_defaults(func=_cmd_minimize)

    p = sub.add_parser("exact", parents=[common], help="exact log Z and marginals by enumeration")
    p.add_argument("model")
    p.add_argument("--beta", type=float)
    p.set_defaults(func=_cmd_exact)

    p = sub.add_parser("sweep", parents=[common], help="run an error/convexity sweep over beta")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--model-count", dest="model_count", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("thresholds", parents=[common], help="critical betas of the symmetric model")
    p.add_argument("--d-min", type=int, default=3)
    p.add_argument("--d-max", type=int, default=20)
    p.add_argument("--J", type=float, default=1.0)
    p.set_defaults(func=_cmd_thresholds)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = hasattr(args, "seed")
    for name, default in (("seed", 0), ("out", None), ("config", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.verb == "minimize" and args.restarts < 1:
        parser.error("--restarts must be positive")
    if args.config is not None and args.verb not in ("minimize", "sweep"):
        parser.error(f"--config is not used by '{args.verb}'")
    try:
        return int(args.func(args))
    except (OSError, ValueError, KeyError, IndexError) as exc:
        print(f"bethe: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
