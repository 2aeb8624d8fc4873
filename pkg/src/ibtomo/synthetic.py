"""Synthetic ground truth and virtual diagnostics.

The density is a modified-tanh pedestal in the flux label ``rho = sqrt(psi)``
mapped onto the grid through a :class:`~ibtomo.equilibrium.FluxModel`.
Line-integrated interferometer data come from the contribution matrix,
point values come from reflectometer-like sampling of the low-field-side
midplane.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .equilibrium import FluxModel, normalized_flux
from .grid import ContributionMatrix, Grid

FMCW_PSI_RANGE = (0.6, 1.0)


@dataclass(frozen=True)
class MtanhParams:
    A: float = 2.0
    B: float = 2.0
    XSYM: float = 0.95
    HWID: float = 0.05
    alpha: float = 0.1

    def __post_init__(self):
        if not self.HWID > 0:
            raise ValueError(f"HWID must be positive, got {self.HWID}")
        if not self.A > 0:
            raise ValueError(f"A must be positive, got {self.A}")

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "XSYM": self.XSYM, "HWID": self.HWID, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "MtanhParams":
        unknown = set(d) - {"A", "B", "XSYM", "HWID", "alpha"}
        if unknown:
            raise ValueError(f"unknown mtanh field(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


def mtanh(alpha, z):
    """Modified tanh ``((1 + alpha z) e^z - e^-z) / (e^z + e^-z)``.

    Evaluated with ``exp(-2|z|)`` factored out so large ``|z|`` never
    overflows.
    """
    z = np.asarray(z, dtype=float)
    q = np.exp(-2.0 * np.abs(z))
    lin = 1.0 + alpha * z
    out = np.where(z >= 0, (lin - q) / (1.0 + q), (lin * q - 1.0) / (q + 1.0))
    return out if out.ndim else float(out)


def density_1d(rho, p: MtanhParams):
    z = (p.XSYM - np.asarray(rho, dtype=float)) / p.HWID
    out = np.maximum(0.0, p.A * np.asarray(mtanh(p.alpha, z)) + p.B)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SyntheticField:
    values: np.ndarray
    grid: Grid
    model: FluxModel
    params: MtanhParams

    @property
    def max(self) -> float:
        return float(self.values.max())

    def evaluate(self, r, z):
        """True density at arbitrary points (not restricted to nodes)."""
        psi = np.asarray(normalized_flux(self.model, r, z))
        return density_1d(np.sqrt(np.maximum(psi, 0.0)), self.params)

    __call__ = evaluate

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "r", "z", "value"])
            for i, ((r, z), v) in enumerate(zip(self.grid.nodes, self.values)):
                w.writerow([i, repr(float(r)), repr(float(z)), repr(float(v))])


def synthesize_field(grid: Grid, model: FluxModel, p: MtanhParams) -> SyntheticField:
    """Sample the mtanh profile at every grid node.

    Nodes outside the LCFS follow the same profile continued past
    ``rho = 1``; the clamp in :func:`density_1d` keeps them non-negative.
    """
    nodes = grid.nodes
    psi = np.atleast_1d(normalized_flux(model, nodes[:, 0], nodes[:, 1]))
    values = np.atleast_1d(density_1d(np.sqrt(psi), p)).astype(float)
    if not values.max() > 0:
        raise ValueError("synthetic field is identically zero; adjust A and B")
    values.flags.writeable = False
    return SyntheticField(values, grid, model, p)


def forward_project(R: ContributionMatrix | np.ndarray, F) -> np.ndarray:
    mat = R.entries if isinstance(R, ContributionMatrix) else np.asarray(R, dtype=float)
    F = np.asarray(F, dtype=float)
    if mat.ndim != 2 or F.shape[0] != mat.shape[1]:
        raise ValueError(f"dimension mismatch: R is {mat.shape}, field has {F.shape[0]} entries")
    return mat @ F


@dataclass(frozen=True)
class LineMeasurements:
    d: np.ndarray
    variances: np.ndarray
    channels: tuple[str, ...] = ()
    clean: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.d.shape != self.variances.shape:
            raise ValueError("d and variances must have the same length")
        if np.any(self.variances < 0):
            raise ValueError("variances must be non-negative")

    @property
    def k(self) -> int:
        return len(self.d)

    def to_csv(self, path: str | Path) -> None:
        labels = self.channels or tuple(str(j) for j in range(self.k))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", "d", "variance"])
            for lab, dj, vj in zip(labels, self.d, self.variances):
                w.writerow([lab, repr(float(dj)), repr(float(vj))])


def apply_measurement_model(
    d,
    std_frac: float = 0.0,
    noise_frac: float = 0.0,
    rng: np.random.Generator | None = None,
    channels: Sequence[str] = (),
) -> LineMeasurements:
    """Attach a diagonal error model to clean line integrals and perturb them.

    ``std_frac`` sets the assumed variance ``(std_frac * |d_j|)**2`` from the
    clean signal; ``noise_frac`` scales the relative Gaussian perturbation
    actually applied to the returned data.
    """
    if std_frac < 0 or noise_frac < 0:
        raise ValueError("std_frac and noise_frac must be non-negative")
    clean = np.asarray(d, dtype=float)
    variances = (std_frac * np.abs(clean)) ** 2
    if noise_frac > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_frac > 0")
        noisy = clean * (1.0 + noise_frac * rng.standard_normal(clean.shape))
    else:
        noisy = clean.copy()
    return LineMeasurements(noisy, variances, tuple(channels), clean.copy())


@dataclass(frozen=True)
class PointMeasurements:
    """Point density values ``v*`` with a single homoscedastic std ``sigma_star``."""

    locations: np.ndarray
    values: np.ndarray
    sigma_star: float = 0.0
    psi: np.ndarray | None = None

    def __post_init__(self):
        if self.locations.reshape(-1, 2).shape[0] != len(self.values):
            raise ValueError("locations and values must have the same length")
        if self.sigma_star < 0:
            raise ValueError("sigma_star must be non-negative")

    @property
    def n(self) -> int:
        return len(self.values)

    @classmethod
    def empty(cls) -> "PointMeasurements":
        return cls(np.zeros((0, 2)), np.zeros(0), 0.0, np.zeros(0))

    def to_csv(self, path: str | Path) -> None:
        psi = self.psi if self.psi is not None else np.full(self.n, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "r", "z", "psi_norm", "value", "sigma_star"])
            for i, ((r, z), p, v) in enumerate(zip(self.locations, psi, self.values)):
                w.writerow([i, repr(float(r)), repr(float(z)), repr(float(p)), repr(float(v)),
                            repr(float(self.sigma_star))])


def _midplane_radius(model: FluxModel, psi_target: float) -> float:
    if model.shift == 0.0:
        return model.r0 + model.a * np.sqrt(psi_target)

    def f(r):
        return normalized_flux(model, r, model.z0) - psi_target

    hi = model.r0 + model.a
    while f(hi) < 0:
        hi = model.r0 + 2.0 * (hi - model.r0)
    return brentq(f, model.r0, hi, xtol=1e-14)


def sample_fmcw(
    model: FluxModel,
    truth_fn: Callable,
    count: int = 20,
    sigma_star: float = 0.0,
    rng: np.random.Generator | None = None,
    *,
    noise_frac: float | None = None,
    grid: Grid | None = None,
) -> PointMeasurements:
    """Sample point densities on the low-field-side midplane.

    Points are placed at ``psi = 0.6 + 0.4 * i / count`` for ``i < count``.
    The recorded ``sigma_star`` is ``sigma_star`` times the mean true density
    at the points.  The data are perturbed by relative Gaussian noise of
    ``noise_frac`` (defaults to ``sigma_star``).  If ``grid`` is given every
    point must fall inside its bounding box.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if sigma_star < 0:
        raise ValueError("sigma_star must be non-negative")
    noise_frac = sigma_star if noise_frac is None else noise_frac

    lo, hi = FMCW_PSI_RANGE
    psi = lo + (hi - lo) * np.arange(count) / count
    r = np.array([_midplane_radius(model, p) for p in psi])
    z = np.full(count, float(model.z0))
    if grid is not None:
        keep = (r > grid.r_min) & (r < grid.r_max) & (z > grid.z_min) & (z < grid.z_max)
        if not keep.all():
            raise ValueError("FMCW detection zone falls outside the reconstruction grid")
    truth = np.atleast_1d(np.asarray(truth_fn(r, z), dtype=float))
    if noise_frac > 0:
        if rng is None:
            raise ValueError("an rng is required when noise is applied")
        values = truth * (1.0 + noise_frac * rng.standard_normal(count))
    else:
        values = truth.copy()
    return PointMeasurements(
        np.column_stack([r, z]),
        values,
        float(sigma_star * np.mean(np.abs(truth))),
        psi,
    )
