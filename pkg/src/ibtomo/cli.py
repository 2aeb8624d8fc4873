"""``tomo`` command line: generate, reconstruct, sweep and ensemble.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.  Flags override config values, which override defaults.  The
output directory is ``--out``, else ``output_dir`` from the config, else
``$TOMO_OUTPUT_ROOT/<command>`` (``./tomo_out/<command>`` if unset).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._linalg import FactorizationError
from .config import ConfigError, ScenarioConfig
from .evaluation import (
    EnsembleError,
    SweepError,
    back_projection_check,
    compute_metrics,
    grid_sweep,
    noise_ensemble,
    stddev_sweep,
    write_rows,
)
from .gp import KernelKind
from .scenario import build_geometry, measure, reconstruct, select_hyperparams, simulate

log = logging.getLogger("ibtomo")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
OUTPUT_ROOT_ENV = "TOMO_OUTPUT_ROOT"


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg.output_dir:
        out = Path(cfg.output_dir)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "tomo_out")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: ScenarioConfig, command: str, files: list[str], **extra) -> None:
    manifest = {
        "artifact": "ibtomo",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "files": sorted(files),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        if args.samples < 1:
            raise ConfigError("--samples must be at least 1")
        changes["ensemble_samples"] = args.samples
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _choices(value: str | None, default, enum_type) -> list:
    if value is None:
        return [default]
    if value == "all":
        return list(enum_type)
    return [enum_type(value)]


def cmd_generate(args, cfg: ScenarioConfig) -> None:
    out = _out_dir(args, cfg)
    data = simulate(cfg.scenario, _rng(cfg.seed))
    data.truth.to_csv(out / "field.csv")
    data.geometry.flux_map.to_csv(out / "flux_map.csv")
    data.meas.to_csv(out / "line_measurements.csv")
    data.pts.to_csv(out / "point_measurements.csv")
    files = ["field.csv", "flux_map.csv", "line_measurements.csv", "point_measurements.csv"]
    _write_manifest(out, cfg, "generate", files)
    print(f"wrote {len(files)} files + manifest to {out}")


def cmd_reconstruct(args, cfg: ScenarioConfig) -> None:
    from .tomography import ModelTag

    out = _out_dir(args, cfg)
    scn = cfg.scenario
    data = simulate(scn, _rng(cfg.seed))
    records, files, hyper_source = [], [], {}
    for model in _choices(args.model, cfg.model, ModelTag):
        for kind in _choices(args.kernel, cfg.kernel, KernelKind):
            tag = f"{model.value}_{kind.value}"
            fixed = cfg.fixed_hyper.get(kind)
            rec = reconstruct(scn, data, model, kind, fixed)
            res = rec.result
            res.to_csv(out / f"posterior_{tag}.csv")
            res.write_summary(out / f"summary_{tag}.json")
            files += [f"posterior_{tag}.csv", f"summary_{tag}.json"]
            if rec.surface is not None:
                rec.surface.to_csv(out / f"evidence_{tag}.csv")
                files.append(f"evidence_{tag}.csv")
            hyper_source[tag] = "optimized" if rec.optimized else "fixed"
            metrics = compute_metrics(res.mean, data.truth)
            bp = back_projection_check(data.R, res, data.meas)
            records.append({
                "model": model.value,
                "kernel": kind.value,
                **metrics.as_row(),
                "bp_relative_norm": bp.relative_norm,
                "mean_posterior_std": float(np.mean(res.std)),
                "sigma": res.hyper.sigma,
                "length": res.hyper.length,
                "log_evidence": res.log_evidence,
                "hyperparams": hyper_source[tag],
            })
            print(f"{tag:22s} rrmse={metrics.rrmse:.3e} xi_bar={metrics.xi_bar:.3e} "
                  f"xi_max={metrics.xi_max:.3e} ({hyper_source[tag]})")
    (out / "metrics.json").write_text(json.dumps(records, indent=2) + "\n")
    files.append("metrics.json")
    _write_manifest(out, cfg, "reconstruct", files, hyperparams=hyper_source)


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        n_r, n_z = text.lower().split("x")
        return int(n_r), int(n_z)
    except ValueError:
        raise ConfigError(f"grid must look like 28x30, got {text!r}") from None


def cmd_sweep(args, cfg: ScenarioConfig) -> None:
    out = _out_dir(args, cfg)
    model = args.model or cfg.model.value
    kind = args.kernel or cfg.kernel.value
    if "all" in (model, kind):
        raise ConfigError("sweep runs a single model/kernel combination")
    hyper = cfg.fixed_hyper.get(KernelKind(kind))
    if args.axis == "grid":
        grids = [_parse_grid(g) for g in args.grids] if args.grids is not None else list(cfg.sweep_grids)
        if not grids:
            raise ConfigError("grid sweep needs at least one grid")
        rows = grid_sweep(cfg.scenario, grids, model, kind, hyper)
    else:
        levels = list(args.levels) if args.levels is not None else list(cfg.std_levels)
        if not levels:
            raise ConfigError("stddev sweep needs at least one level")
        rows = stddev_sweep(cfg.scenario, levels, model, kind, hyper)
    name = f"sweep_{args.axis}.csv"
    write_rows([r.as_row() for r in rows], out / name)
    for r in rows:
        m = r.metrics
        print(f"{r.label:14s} xi_max={m.xi_max:.3e} xi_bar={m.xi_bar:.3e} rrmse={m.rrmse:.3e} "
              f"bp={r.bp_relative:.2e} mean_std={r.mean_std:.3e}")
    _write_manifest(out, cfg, "sweep", [name], axis=args.axis,
                    hyperparams="fixed" if hyper is not None else "optimized")


def cmd_ensemble(args, cfg: ScenarioConfig) -> None:
    out = _out_dir(args, cfg)
    levels = list(args.levels) if args.levels is not None else list(cfg.ensemble_levels)
    if not levels:
        raise ConfigError("ensemble needs at least one noise level")
    model = args.model or cfg.model.value
    kind = args.kernel or cfg.kernel.value
    if "all" in (model, kind):
        raise ConfigError("ensemble runs a single model/kernel combination")
    scn = cfg.scenario.replace(std_frac=cfg.ensemble_std, sigma_star=cfg.ensemble_std)
    hyper = cfg.fixed_hyper.get(KernelKind(kind))
    source = "fixed"
    if hyper is None:
        clean = measure(scn.replace(noise_frac=0.0), build_geometry(scn))
        hyper, _ = select_hyperparams(scn, clean, model, kind)
        source = "optimized"
    files, rows = [], []
    for level in levels:
        stats = noise_ensemble(scn, model, kind, level, cfg.ensemble_samples, cfg.seed, hyper, args.jobs)
        rows.append(stats.row())
        tag = f"{level:g}"
        stats.samples_to_csv(out / f"samples_{tag}.csv")
        files.append(f"samples_{tag}.csv")
        for metric, hist in stats.histograms().items():
            hist.to_csv(out / f"hist_{metric}_{tag}.csv")
            files.append(f"hist_{metric}_{tag}.csv")
        print(f"noise {tag:6s} mean rrmse={stats.mean['rrmse']:.3e} "
              f"median xi_max={stats.median['xi_max']:.3e} mean xi_max={stats.mean['xi_max']:.3e}")
    write_rows(rows, out / "ensemble_stats.csv")
    files.append("ensemble_stats.csv")
    _write_manifest(out, cfg, "ensemble", files, hyperparams=source,
                    sigma=hyper.sigma, length=hyper.length)


COMMANDS = {
    "generate": cmd_generate,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "ensemble": cmd_ensemble,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tomo", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="scenario JSON file (defaults are used if omitted)")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--model", choices=["single", "integrated", "all"])
        s.add_argument("--kernel", choices=["spatial", "flux", "all"])
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            s.add_argument("--axis", choices=["grid", "stddev"], required=True)
            s.add_argument("--levels", type=float, nargs="*", help="std fractions for --axis stddev")
            s.add_argument("--grids", nargs="*", help="grid sizes like 28x30 for --axis grid")
        if name == "ensemble":
            s.add_argument("--levels", type=float, nargs="*", help="noise fractions")
            s.add_argument("--samples", type=int)
            s.add_argument("--jobs", type=int, default=1)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"tomo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FactorizationError, np.linalg.LinAlgError, EnsembleError, SweepError) as exc:
        print(f"tomo: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"tomo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
