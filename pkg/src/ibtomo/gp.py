"""Squared-exponential Gaussian-process priors and conditioning on point data.

Two kernels share the SE form ``sigma**2 * exp(-dist**2 / (2 * length**2))``:

* ``SPATIAL_SE`` measures ``dist`` as the Euclidean distance in (R, Z);
* ``FLUX_SE`` measures ``dist`` as the difference of normalized flux, so all
  points on one flux surface are perfectly correlated.

The prior mean is zero everywhere.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from ._linalg import jittered_cholesky, symmetrize
from .equilibrium import FluxModel, normalized_flux
from .grid import Grid
from .synthetic import PointMeasurements

JITTER = 1e-8


class KernelKind(str, enum.Enum):
    SPATIAL_SE = "spatial"
    FLUX_SE = "flux"


@dataclass(frozen=True)
class Hyperparams:
    sigma: float
    length: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.length > 0):
            raise ValueError(f"hyperparameters must be positive, got {self}")


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    hyper: Hyperparams
    flux_model: FluxModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.FLUX_SE and self.flux_model is None:
            raise ValueError("FLUX_SE kernel requires a flux model")
        if self.kind is KernelKind.SPATIAL_SE and self.flux_model is not None:
            raise ValueError("SPATIAL_SE kernel must not carry a flux model")

    def with_hyper(self, hyper: Hyperparams) -> "KernelSpec":
        return KernelSpec(self.kind, hyper, self.flux_model)

    def features(self, coords) -> np.ndarray:
        """Map ``(n, 2)`` coordinates into the space the distance lives in."""
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        if self.kind is KernelKind.SPATIAL_SE:
            return coords
        psi = normalized_flux(self.flux_model, coords[:, 0], coords[:, 1])
        return np.atleast_1d(psi).reshape(-1, 1)


def se_kernel(dist, h: Hyperparams):
    dist = np.asarray(dist, dtype=float)
    out = h.sigma**2 * np.exp(-(dist**2) / (2.0 * h.length**2))
    return out if out.ndim else float(out)


def distance(spec: KernelSpec, p, q) -> float:
    fp, fq = spec.features(p), spec.features(q)
    return float(np.linalg.norm(fp[0] - fq[0]))


def covariance_matrix(spec: KernelSpec, coords_a, coords_b, jitter: bool = True) -> np.ndarray:
    """Kernel matrix between two coordinate lists.

    The kernel carries a nugget of ``1e-8 * sigma**2`` between locations that
    coincide exactly, which keeps grid covariances factorizable and makes
    noise-free conditioning interpolate at measured nodes.  ``jitter=False``
    drops the nugget.
    """
    a = np.asarray(coords_a, dtype=float).reshape(-1, 2)
    b = np.asarray(coords_b, dtype=float).reshape(-1, 2)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    fa, fb = spec.features(a), spec.features(b)
    # sigma**2 is applied last so that a cached unit-sigma matrix rescales
    # bit-identically.
    corr = np.exp(-cdist(fa, fb, "sqeuclidean") / (2.0 * spec.hyper.length**2))
    if jitter:
        if a.shape == b.shape and np.array_equal(a, b):
            corr[np.diag_indices_from(corr)] += JITTER
        else:
            corr[(a[:, None, :] == b[None, :, :]).all(axis=-1)] += JITTER
    return spec.hyper.sigma**2 * corr


@dataclass(frozen=True)
class GaussianField:
    mean: np.ndarray
    covariance: np.ndarray
    grid: Grid | None = None

    @property
    def m(self) -> int:
        return len(self.mean)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.covariance), 0.0))

    def to_csv(self, path: str | Path) -> None:
        nodes = self.grid.nodes if self.grid is not None else np.full((self.m, 2), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", "r", "z", "mean", "std"])
            for i, ((r, z), mu, sd) in enumerate(zip(nodes, self.mean, self.std)):
                w.writerow([i, repr(float(r)), repr(float(z)), repr(float(mu)), repr(float(sd))])

    def save_covariance(self, path: str | Path) -> None:
        np.save(path, self.covariance)


def prior_field(spec: KernelSpec, grid: Grid) -> GaussianField:
    nodes = grid.nodes
    return GaussianField(np.zeros(grid.m), covariance_matrix(spec, nodes, nodes), grid)


def gp_condition(
    spec: KernelSpec, grid: Grid, pts: PointMeasurements | None, prior: GaussianField | None = None
) -> GaussianField:
    """Condition the zero-mean grid prior on noisy point values.

    Returns the conditional mean ``Ks.T (Kss + s*^2 I)^-1 v*`` and covariance
    ``K - Ks.T (Kss + s*^2 I)^-1 Ks``.  ``prior`` may be passed to reuse an
    already assembled grid covariance for the same kernel.
    """
    if prior is None:
        prior = prior_field(spec, grid)
    if pts is None or pts.n == 0:
        return prior

    nodes = grid.nodes
    x = pts.locations.reshape(-1, 2)
    K_pp = covariance_matrix(spec, x, x)
    K_pp[np.diag_indices_from(K_pp)] += pts.sigma_star**2
    K_pg = covariance_matrix(spec, x, nodes)

    L, _ = jittered_cholesky(K_pp, spec.hyper.sigma**2)
    A = linalg.solve_triangular(L, K_pg, lower=True, check_finite=False)
    b = linalg.solve_triangular(L, pts.values, lower=True, check_finite=False)
    mean = A.T @ b
    cov = symmetrize(prior.covariance - A.T @ A)
    return GaussianField(mean, cov, grid)
