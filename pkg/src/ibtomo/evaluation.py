"""Reconstruction error metrics and sensitivity studies.

Metrics follow the usual tomography conventions::

    RRMSE   = sqrt( mean((F - Fp)**2) / sum(Fp**2) )
    xi_i    = |F_i - Fp_i| / max(Fp)
    xi_bar  = mean(xi),  xi_max = max(xi)

RRMSE deliberately divides a mean by a sum; values are therefore small and
scale with the node count.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._linalg import FactorizationError
from .gp import Hyperparams, KernelKind, prior_field
from .grid import Grid
from .scenario import Reconstruction, Scenario, build_geometry, measure, reconstruct, select_hyperparams
from .synthetic import LineMeasurements, SyntheticField
from .tomography import ModelTag, PosteriorResult

log = logging.getLogger(__name__)

METRIC_NAMES = ("xi_max", "xi_bar", "rrmse")
MAX_FAILURE_FRACTION = 0.1


class EnsembleError(RuntimeError):
    pass


class SweepError(RuntimeError):
    """A sweep point failed; the message names the offending grid or level."""


@dataclass(frozen=True)
class Metrics:
    rrmse: float
    xi: np.ndarray = field(repr=False)
    xi_bar: float
    xi_max: float

    def as_row(self) -> dict:
        return {"xi_max": self.xi_max, "xi_bar": self.xi_bar, "rrmse": self.rrmse}


def compute_metrics(F, Fp: SyntheticField | np.ndarray) -> Metrics:
    truth = np.asarray(Fp.values if isinstance(Fp, SyntheticField) else Fp, dtype=float)
    F = np.asarray(F, dtype=float)
    if F.shape != truth.shape:
        raise ValueError(f"length mismatch: {F.shape} vs {truth.shape}")
    fmax = float(truth.max())
    if not fmax > 0:
        raise ValueError("true field maximum must be positive")
    err = F - truth
    rrmse = float(np.sqrt(np.mean(err**2) / np.sum(truth**2)))
    xi = np.abs(err) / fmax
    return Metrics(rrmse, xi, float(xi.mean()), float(xi.max()))


@dataclass(frozen=True)
class BackProjection:
    residuals: np.ndarray
    relative_norm: float
    absolute: bool = False


def back_projection_check(R, result: PosteriorResult | np.ndarray, meas: LineMeasurements) -> BackProjection:
    """Residuals ``R mu_post - d`` and their norm relative to ``|d|``.

    If ``|d| = 0`` the absolute norm is reported and ``absolute`` is set.
    """
    mean = result.mean if isinstance(result, PosteriorResult) else np.asarray(result, dtype=float)
    Rm = R.entries if hasattr(R, "entries") else np.asarray(R, dtype=float)
    residuals = Rm @ mean - meas.d
    dnorm = float(np.linalg.norm(meas.d))
    rnorm = float(np.linalg.norm(residuals))
    if dnorm == 0:
        return BackProjection(residuals, rnorm, True)
    return BackProjection(residuals, rnorm / dnorm)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def histogram(samples) -> Histogram:
    """Freedman-Diaconis histogram; a single bin when the spread is zero."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return Histogram(np.array([0.0, 0.0]), np.array([0]))
    if np.ptp(x) == 0:
        return Histogram(np.array([x[0], x[0]]), np.array([x.size]))
    counts, edges = np.histogram(x, bins="fd")
    return Histogram(edges, counts)


def _summary(x: np.ndarray) -> tuple[float, float, float]:
    if x.size == 1 or np.ptp(x) == 0:
        return float(x[0]), float(x[0]), 0.0
    return float(np.mean(x)), float(np.median(x)), float(np.std(x))


@dataclass(frozen=True)
class EnsembleStats:
    noise_frac: float
    seed: int
    samples: dict[str, np.ndarray] = field(repr=False)
    mean: dict[str, float] = field(default_factory=dict)
    median: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    failures: int = 0
    hyper: Hyperparams | None = None

    @property
    def n(self) -> int:
        return len(next(iter(self.samples.values())))

    @classmethod
    def from_samples(cls, noise_frac, seed, rows: Sequence[Metrics], failures=0, hyper=None) -> "EnsembleStats":
        if not rows:
            raise EnsembleError("no successful samples")
        samples = {k: np.array([getattr(r, k) for r in rows]) for k in METRIC_NAMES}
        mean, median, std = {}, {}, {}
        for k, x in samples.items():
            mean[k], median[k], std[k] = _summary(x)
        return cls(noise_frac, seed, samples, mean, median, std, failures, hyper)

    def histograms(self) -> dict[str, Histogram]:
        return {k: histogram(x) for k, x in self.samples.items()}

    def row(self) -> dict:
        out = {"noise_frac": self.noise_frac, "n": self.n, "failures": self.failures}
        for stat in ("mean", "median", "std"):
            for k in METRIC_NAMES:
                out[f"{stat}_{k}"] = getattr(self, stat)[k]
        return out

    def samples_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_index", *METRIC_NAMES])
            for i in range(self.n):
                w.writerow([i, *(repr(float(self.samples[k][i])) for k in METRIC_NAMES)])


def sample_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent per-sample seed sequences; sample ``i`` is fixed by ``(seed, i)``."""
    return np.random.SeedSequence(seed).spawn(n)


def noise_ensemble(
    scn: Scenario,
    model: ModelTag | str = ModelTag.INTEGRATED,
    kind: KernelKind | str = KernelKind.FLUX_SE,
    noise_frac: float = 0.01,
    n_samples: int = 200,
    seed: int = 0,
    hyper: Hyperparams | None = None,
    n_jobs: int = 1,
) -> EnsembleStats:
    """Repeat the reconstruction over independent noise draws.

    Hyperparameters are held fixed across samples; when ``hyper`` is None
    they are selected once by evidence on the noise-free data.  Samples that
    fail to factorize are dropped and counted; more than 10 % failures is an
    error.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    model, kind = ModelTag(model), KernelKind(kind)
    noisy = scn.replace(noise_frac=noise_frac)
    geom = build_geometry(scn)
    if hyper is None:
        clean = measure(scn.replace(noise_frac=0.0), geom)
        hyper, _ = select_hyperparams(scn, clean, model, kind)
    prior = prior_field(scn.kernel(kind, hyper), geom.grid)

    def one(ss: np.random.SeedSequence) -> Metrics | None:
        data = measure(noisy, geom, np.random.default_rng(ss))
        try:
            rec = reconstruct(noisy, data, model, kind, hyper, prior=prior)
        except (FactorizationError, np.linalg.LinAlgError) as exc:
            log.warning("ensemble sample failed: %s", exc)
            return None
        return compute_metrics(rec.result.mean, geom.truth)

    seeds = sample_seeds(seed, n_samples)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(ss) for ss in seeds]
    rows = [r for r in results if r is not None]
    failures = n_samples - len(rows)
    if failures > MAX_FAILURE_FRACTION * n_samples:
        raise EnsembleError(f"{failures} of {n_samples} ensemble samples failed")
    return EnsembleStats.from_samples(noise_frac, seed, rows, failures, hyper)


@dataclass(frozen=True)
class SweepRow:
    label: str
    value: float | tuple
    metrics: Metrics
    mean_std: float
    bp_relative: float
    hyper: Hyperparams
    reconstruction: Reconstruction = field(repr=False)

    def as_row(self) -> dict:
        return {
            "label": self.label,
            **self.metrics.as_row(),
            "mean_posterior_std": self.mean_std,
            "bp_relative_norm": self.bp_relative,
            "sigma": self.hyper.sigma,
            "length": self.hyper.length,
        }


def _run(scn: Scenario, model, kind, hyper, label, value, seed=0) -> SweepRow:
    data = measure(scn, build_geometry(scn), np.random.default_rng(seed))
    rec = reconstruct(scn, data, model, kind, hyper)
    res = rec.result
    return SweepRow(
        label,
        value,
        compute_metrics(res.mean, data.truth),
        float(np.mean(res.std)),
        back_projection_check(data.R, res, data.meas).relative_norm,
        res.hyper,
        rec,
    )


STANDARD_GRIDS = ((14, 15), (28, 30), (42, 45), (56, 60))


def grid_sweep(
    scn: Scenario,
    grids: Iterable[tuple[int, int] | Grid] = STANDARD_GRIDS,
    model: ModelTag | str = ModelTag.INTEGRATED,
    kind: KernelKind | str = KernelKind.FLUX_SE,
    hyper: Hyperparams | None = None,
) -> list[SweepRow]:
    """Rebuild truth, geometry and reconstruction for each grid resolution.

    Hyperparameters are re-selected per grid unless ``hyper`` is given.
    """
    rows = []
    base = scn.grid
    for g in grids:
        n_r, n_z = (g.n_r, g.n_z) if isinstance(g, Grid) else g
        try:
            if not isinstance(g, Grid):
                g = Grid(n_r, n_z, base.r_min, base.r_max, base.z_min, base.z_max)
            label = f"{g.m} ({g.n_r}*{g.n_z})"
            rows.append(_run(scn.replace(grid=g), model, kind, hyper, label, (g.n_r, g.n_z)))
        except (FactorizationError, np.linalg.LinAlgError, ValueError) as exc:
            raise SweepError(f"grid {n_r}x{n_z}: {exc}") from exc
    return rows


STANDARD_STD_LEVELS = (0.0, 0.02, 0.05, 0.10)


def stddev_sweep(
    scn: Scenario,
    levels: Sequence[float] = STANDARD_STD_LEVELS,
    model: ModelTag | str = ModelTag.INTEGRATED,
    kind: KernelKind | str = KernelKind.FLUX_SE,
    hyper: Hyperparams | None = None,
) -> list[SweepRow]:
    """Vary the assumed measurement std of both diagnostics at zero noise.

    Without ``hyper`` the hyperparameters are chosen once at the 0 % level
    and reused for every level.
    """
    if not levels:
        raise ValueError("at least one std level is required")
    if min(levels) < 0:
        raise ValueError("std levels must be non-negative")
    base = scn.replace(noise_frac=0.0, std_frac=0.0, sigma_star=0.0)
    if hyper is None:
        data = measure(base, build_geometry(base))
        hyper, _ = select_hyperparams(base, data, model, kind)
    rows = []
    for level in levels:
        s = base.replace(std_frac=level, sigma_star=level)
        rows.append(_run(s, model, kind, hyper, f"{100 * level:g}%", level))
    return rows


def write_rows(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
