"""Command line entry point: ``addinv fit | simulate | table1``.

Exit status is the machine readable failure class: 0 success, 2 malformed
input or configuration, 3 estimation failure, 4 fewer than 90% of the
simulation replicates succeeded.  Diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .io import (
    InputError,
    load_config,
    read_dataset,
    write_curve,
    write_json,
    write_manifest,
    write_table,
)
from .kernels import ConvolutionFamily
from .pipeline import PipelineConfig, fit_additive_inverse
from .simulation import (
    PILOT_STREAM,
    PUBLISHED_BACKFIT,
    PUBLISHED_MI,
    REPLICATE_STREAM,
    THREADS_ENV,
    Bandwidths,
    SimulationConfig,
    run_study,
)

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE, EXIT_REPLICATES = 0, 2, 3, 4
MIN_SUCCESS_RATE = 0.9

logger = logging.getLogger("addinv")

FIT_DEFAULTS = {
    "h_B": None,
    "h": None,
    "h_d": None,
    "a_N": 0.5,
    "n_panels": 2048,
    "max_iterations": 100,
    "tolerance": 1e-8,
    "unit_points": 101,
    "operator": {"kind": "laplace", "rates": 3.0},
    "eval_grid": None,
    "band_alpha": 0.1,
}


class PipelineFailure(RuntimeError):
    pass


def _check_keys(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise InputError(f"unknown {where} keys: {', '.join(unknown)}")


def resolve_fit_config(section: dict, d: int) -> dict:
    """Merge ``section`` into the defaults and validate it for ``d`` predictors."""
    _check_keys(section, FIT_DEFAULTS, "fit")
    cfg = {**FIT_DEFAULTS, **section}
    for key in ("h_B", "h"):
        if cfg[key] is None:
            raise InputError(f"fit.{key} is required")
    op = cfg["operator"]
    if not isinstance(op, dict) or op.get("kind", "laplace") != "laplace":
        raise InputError("fit.operator must be {'kind': 'laplace', 'rates': ...}")
    rates = op.get("rates", 3.0)
    rates = [float(rates)] * d if np.ndim(rates) == 0 else [float(r) for r in rates]
    if len(rates) != d:
        raise InputError(f"fit.operator.rates needs {d} entries")
    cfg["operator"] = {"kind": "laplace", "rates": rates}
    if not 0 < float(cfg["band_alpha"]) < 1:
        raise InputError("fit.band_alpha must lie in (0, 1)")
    return cfg


def _eval_grids(spec, data):
    if spec is None:
        return [np.linspace(data.X[:, j].min(), data.X[:, j].max(), 101) for j in range(data.dim)]
    specs = spec if isinstance(spec, list) else [spec] * data.dim
    if len(specs) != data.dim:
        raise InputError(f"fit.eval_grid needs {data.dim} entries")
    try:
        return [np.linspace(float(s["lo"]), float(s["hi"]), int(s.get("points", 101))) for s in specs]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"fit.eval_grid entries need lo, hi and points ({exc})") from None


def run_fit(data, cfg: dict):
    """In-process equivalent of ``addinv fit`` for a resolved configuration."""
    try:
        pconf = PipelineConfig(h_B=float(cfg["h_B"]), h=cfg["h"], h_d=cfg["h_d"], a_N=float(cfg["a_N"]),
                               n_panels=int(cfg["n_panels"]), max_iterations=int(cfg["max_iterations"]),
                               tolerance=float(cfg["tolerance"]), unit_points=int(cfg["unit_points"]))
        fam = ConvolutionFamily(tuple(cfg["operator"]["rates"]))
        grids = _eval_grids(cfg["eval_grid"], data)
        pconf.deconv_config(0, data.dim)
        pconf.backfit_config()
    except (ValueError, TypeError) as exc:
        raise InputError(f"bad fit configuration: {exc}") from None
    try:
        return fit_additive_inverse(data, pconf, fam, grids, variance_level=float(cfg["band_alpha"]))
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise PipelineFailure(str(exc)) from exc


def _staging(out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))


def _publish(stage: Path, out: Path):
    """Move a finished staging directory into place."""
    if out.exists():
        for p in stage.iterdir():
            shutil.move(str(p), out / p.name)
        stage.rmdir()
    else:
        stage.rename(out)


def cmd_fit(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc)
    data = read_dataset(args.data)
    section = load_config(args.config, "fit") if args.config else {}
    cfg = resolve_fit_config(section, data.dim)
    fit = run_fit(data, cfg)
    out = Path(args.out)
    stage = _staging(out)
    try:
        for comp in fit.components:
            write_curve(stage / f"component_{comp.axis + 1}.csv", comp.grid, comp.values, comp.variance, comp.band)
        bf = fit.backfit
        write_json(stage / "summary.json", {
            "n": data.n,
            "dim": data.dim,
            "intercept": fit.intercept,
            "sigma2_plugin": fit.sigma2,
            "density_bandwidths": list(fit.density_bandwidths),
            "backfit": {"iterations": bf.iterations, "converged": bf.converged,
                        "final_change": bf.final_change, "fixed_point_residual": bf.residual},
            "max_imaginary_residue": [float(np.max(np.abs(c.imag))) for c in fit.components],
        })
        write_manifest(stage, "fit", {"data": str(Path(args.data).resolve()), "fit": cfg}, None, started)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    _publish(stage, out)
    if not fit.backfit.converged:
        print(f"warning: backfitting did not converge in {fit.backfit.iterations} sweeps", file=sys.stderr)
    return EXIT_OK


SIM_FIELDS = {f.name for f in dataclasses.fields(SimulationConfig)}


def simulation_config_from_dict(section: dict, **overrides) -> SimulationConfig:
    _check_keys(section, SIM_FIELDS, "simulation")
    kwargs = {**section, **overrides}
    for key in ("h_d_grid", "h_B_grid", "h_grid", "eval_window", "rates"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in np.atleast_1d(kwargs[key]))
    if kwargs.get("bandwidths") is not None:
        bw = kwargs["bandwidths"]
        try:
            kwargs["bandwidths"] = Bandwidths(h_d=tuple(map(float, np.broadcast_to(bw["h_d"], 2))),
                                              h_B=float(bw["h_B"]),
                                              h=tuple(map(float, np.broadcast_to(bw["h"], 2))))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"simulation.bandwidths needs h_d, h_B and h ({exc})") from None
    try:
        return SimulationConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad simulation configuration: {exc}") from None


def resolved_simulation(config: SimulationConfig) -> dict:
    out = dataclasses.asdict(config)
    if config.bandwidths is not None:
        out["bandwidths"] = config.bandwidths.as_dict()
    return out


def seed_record(config: SimulationConfig) -> dict:
    return {
        "master": config.seed,
        "generator": "numpy PCG64 via SeedSequence(master, spawn_key=(stream, index))",
        "replicate_stream": REPLICATE_STREAM,
        "pilot_stream": PILOT_STREAM,
        "replicates": config.replicates,
        "pilots": config.pilot_replicates,
    }


def _run(config: SimulationConfig):
    try:
        return run_study(config)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise PipelineFailure(str(exc)) from exc


def write_report(stage: Path, report, prefix: str = "") -> None:
    grid = report.grid
    for j in range(report.truth.shape[0]):
        ok = report.succeeded.any()
        mean = report.mean_curves[j] if ok else np.full(grid.size, np.nan)
        q05 = report.quantile_curves(0.05)[j] if ok else np.full(grid.size, np.nan)
        q95 = report.quantile_curves(0.95)[j] if ok else np.full(grid.size, np.nan)
        write_table(stage / f"{prefix}curves_component_{j + 1}.csv", ["x", "truth", "mean", "q05", "q95"],
                    [grid, report.truth[j], mean, q05, q95])
    write_table(stage / f"{prefix}ise.csv", ["replicate", "ise_1", "ise_2"],
                [np.arange(report.ise.shape[0]), report.ise[:, 0], report.ise[:, 1]])


def report_summary(report) -> dict:
    return {
        "imse": report.imse.tolist() if report.succeeded.any() else None,
        "bandwidths": report.bandwidths.as_dict(),
        "success_rate": report.success_rate,
        "failures": [{"replicate": i, "error": e} for i, e in report.failures],
        "runtime_seconds": report.runtime,
    }


def cmd_simulate(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc)
    config = simulation_config_from_dict(load_config(args.config, "simulation"))
    report = _run(config)
    out = Path(args.out)
    stage = _staging(out)
    try:
        write_report(stage, report)
        write_json(stage / "summary.json", report_summary(report))
        write_manifest(stage, "simulate", {"simulation": resolved_simulation(config)}, seed_record(config), started)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    _publish(stage, out)
    if report.failures:
        print(f"{len(report.failures)} of {config.replicates} replicates failed", file=sys.stderr)
    return EXIT_OK if report.success_rate >= MIN_SUCCESS_RATE else EXIT_REPLICATES


TABLE_CELLS = [(m, d) for d in ("uniform", "correlated-normal") for m in ("sig1", "sig2")]


def cmd_table1(args) -> int:
    started = _dt.datetime.now(_dt.timezone.utc)
    section = load_config(args.config, "simulation") if args.config else {}
    for key in ("model", "design"):
        section.pop(key, None)
    configs = [simulation_config_from_dict(section, model=m, design=d, replicates=args.runs, seed=args.seed)
               for m, d in TABLE_CELLS]
    reports = [_run(c) for c in configs]
    out = Path(args.out)
    stage = _staging(out)
    try:
        with open(stage / "table1.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "design", "component", "imse", "published_backfit", "published_mi",
                        "ratio_ours_to_published", "ratio_mi_to_ours"])
            for (m, d), rep in zip(TABLE_CELLS, reports):
                imse = rep.imse if rep.succeeded.any() else np.full(2, np.nan)
                for j in range(2):
                    pub, mi = PUBLISHED_BACKFIT[(m, d, j)], PUBLISHED_MI[(m, d, j)]
                    w.writerow([m, d, j + 1, "%.17g" % imse[j], repr(pub), repr(mi),
                                "%.17g" % (imse[j] / pub), "%.17g" % (mi / imse[j])])
        for (m, d), rep in zip(TABLE_CELLS, reports):
            write_report(stage, rep, prefix=f"{m}_{d}_")
        write_json(stage / "summary.json", {f"{m}/{d}": report_summary(r) for (m, d), r in zip(TABLE_CELLS, reports)})
        write_manifest(stage, "table1", {"cells": [resolved_simulation(c) for c in configs]},
                       seed_record(configs[0]), started)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    _publish(stage, out)
    worst = min(r.success_rate for r in reports)
    return EXIT_OK if worst >= MIN_SUCCESS_RATE else EXIT_REPLICATES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="addinv",
        description="Additive inverse regression under a known convolution operator.",
        epilog=f"Set {THREADS_ENV}=<n> to run simulation replicates on n threads.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate the additive components of a dataset")
    p.add_argument("data", help="CSV file with header x1,...,xd,y")
    p.add_argument("--config", help="JSON configuration with a 'fit' section")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study")
    p.add_argument("--config", required=True, help="JSON configuration with a 'simulation' section")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table1", help="run the four benchmark cells and compare with published IMSE")
    p.add_argument("--runs", type=int, default=100, help="replicates per cell (default 100)")
    p.add_argument("--seed", type=int, default=SimulationConfig.seed, help="master seed shared by all cells")
    p.add_argument("--config", help="optional JSON 'simulation' section applied to every cell")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_table1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PipelineFailure as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
