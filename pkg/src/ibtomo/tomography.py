"""Gaussian posterior fusion of line-integrated data with a Gaussian field.

For a field ``N(mu, S)`` and data ``d = R F + e`` with ``e ~ N(0, D)`` the
posterior is evaluated in data space::

    C         = R S R^T + D
    mu_post   = mu + S R^T C^-1 (d - R mu)
    S_post    = S - S R^T C^-1 R S

which never inverts ``S`` (nearly singular once the prior is pinned outside
the LCFS).  The equivalent information form
``S_post = (R^T D^-1 R + S^-1)^-1`` is kept for cross-checking.

The field entering the fusion is either the plain GP prior (``SINGLE``) or
the prior conditioned on point measurements (``INTEGRATED``).
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from ._linalg import FactorizationError, jittered_cholesky, symmetrize
from .equilibrium import FluxMap
from .gp import GaussianField, Hyperparams, KernelKind, KernelSpec, gp_condition, prior_field
from .grid import ContributionMatrix, Grid
from .synthetic import LineMeasurements, PointMeasurements

VARIANCE_FLOOR = 1e-6
MASK_FACTOR = 1e-3
_LOG_2PI = math.log(2.0 * math.pi)


class ModelTag(str, enum.Enum):
    SINGLE = "single"
    INTEGRATED = "integrated"


def _matrix(R) -> np.ndarray:
    return R.entries if isinstance(R, ContributionMatrix) else np.asarray(R, dtype=float)


def mask_covariance_outside_lcfs(cov: np.ndarray, flux_map: FluxMap, factor: float = MASK_FACTOR) -> np.ndarray:
    """Scale rows and columns of nodes with ``psi >= 1`` by ``factor``.

    Equivalent to ``D cov D`` with ``D`` diagonal, so symmetry and positive
    semi-definiteness are preserved.
    """
    if not 0 < factor <= 1:
        raise ValueError(f"mask factor must lie in (0, 1], got {factor}")
    scale = np.where(np.asarray(flux_map.values) >= 1.0, factor, 1.0)
    return cov * scale[:, None] * scale[None, :]


def mask_field(fld: GaussianField, flux_map: FluxMap, factor: float = MASK_FACTOR) -> GaussianField:
    """Apply the LCFS mask to a (possibly conditioned) Gaussian field.

    Masking the joint prior before conditioning is the same as scaling the
    conditional mean by ``D`` and covariance by ``D . D`` afterwards.
    """
    scale = np.where(np.asarray(flux_map.values) >= 1.0, factor, 1.0)
    return GaussianField(
        fld.mean * scale, mask_covariance_outside_lcfs(fld.covariance, flux_map, factor), fld.grid
    )


def noise_variances(meas: LineMeasurements) -> np.ndarray:
    """Diagonal of the data covariance with zero entries floored.

    A zero variance gets ``1e-6 * max|d|**2`` (or ``1e-6`` if all data are
    zero) so the likelihood stays proper.
    """
    var = np.asarray(meas.variances, dtype=float).copy()
    dmax = float(np.max(np.abs(meas.d))) if meas.k else 0.0
    floor = VARIANCE_FLOOR * (dmax**2 if dmax > 0 else 1.0)
    var[var <= 0] = floor
    return var


@dataclass(frozen=True)
class PosteriorResult:
    field: GaussianField
    std: np.ndarray
    back_projection: np.ndarray
    model: ModelTag
    hyper: Hyperparams | None = None
    log_evidence: float = 0.0

    @property
    def mean(self) -> np.ndarray:
        return self.field.mean

    @property
    def covariance(self) -> np.ndarray:
        return self.field.covariance

    def to_csv(self, path: str | Path) -> None:
        self.field.to_csv(path)

    def summary(self) -> dict:
        return {
            "model": self.model.value,
            "sigma": None if self.hyper is None else self.hyper.sigma,
            "length": None if self.hyper is None else self.hyper.length,
            "log_evidence": self.log_evidence,
        }

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def _fuse_data_space(fld: GaussianField, R: np.ndarray, d: np.ndarray, var: np.ndarray):
    k = R.shape[0]
    if k == 0:
        return fld.mean.copy(), fld.covariance.copy(), 0.0
    RS = R @ fld.covariance
    C = symmetrize(RS @ R.T) + np.diag(var)
    L, _ = jittered_cholesky(C, float(np.mean(np.diag(C))))
    W = linalg.solve_triangular(L, RS, lower=True, check_finite=False)
    beta = linalg.solve_triangular(L, d - R @ fld.mean, lower=True, check_finite=False)
    mean = fld.mean + W.T @ beta
    cov = symmetrize(fld.covariance - W.T @ W)
    logev = -0.5 * (beta @ beta + 2.0 * np.sum(np.log(np.diag(L))) + k * _LOG_2PI)
    return mean, cov, float(logev)


def _fuse_information(fld: GaussianField, R: np.ndarray, d: np.ndarray, var: np.ndarray):
    m = fld.m
    S_factor = linalg.cho_factor(fld.covariance, lower=True)
    S_inv = linalg.cho_solve(S_factor, np.eye(m))
    RtDi = R.T / var
    P = symmetrize(RtDi @ R + S_inv)
    P_factor = linalg.cho_factor(P, lower=True)
    cov = symmetrize(linalg.cho_solve(P_factor, np.eye(m)))
    mean = fld.mean + cov @ (RtDi @ (d - R @ fld.mean))
    return mean, cov


def fuse(
    fld: GaussianField,
    R,
    meas: LineMeasurements,
    model: ModelTag = ModelTag.SINGLE,
    hyper: Hyperparams | None = None,
    form: str = "data",
) -> PosteriorResult:
    """Posterior of ``fld`` given line data; ``form`` is ``"data"`` or ``"information"``."""
    Rm = _matrix(R)
    if Rm.shape != (meas.k, fld.m):
        raise ValueError(f"R has shape {Rm.shape}, expected ({meas.k}, {fld.m})")
    var = noise_variances(meas)
    mean, cov, logev = _fuse_data_space(fld, Rm, meas.d, var)
    if form == "information":
        if meas.k:
            mean, cov = _fuse_information(fld, Rm, meas.d, var)
    elif form != "data":
        raise ValueError(f"unknown form {form!r}")
    post = GaussianField(mean, cov, fld.grid)
    return PosteriorResult(post, post.std, Rm @ mean, ModelTag(model), hyper, logev)


def single_posterior(prior: GaussianField, R, meas: LineMeasurements, hyper=None, form="data") -> PosteriorResult:
    return fuse(prior, R, meas, ModelTag.SINGLE, hyper, form)


def integrated_posterior(conditional: GaussianField, R, meas: LineMeasurements, hyper=None, form="data") -> PosteriorResult:
    return fuse(conditional, R, meas, ModelTag.INTEGRATED, hyper, form)


def log_evidence(fld: GaussianField, R, meas: LineMeasurements) -> float:
    """``log N(d; R mu, R S R^T + D)``; zero when there are no data."""
    Rm = _matrix(R)
    if meas.k == 0:
        return 0.0
    return _fuse_data_space(fld, Rm, meas.d, noise_variances(meas))[2]


def field_scale(R, meas: LineMeasurements) -> float:
    """Typical field magnitude: the largest chord-averaged density."""
    Rm = _matrix(R)
    lengths = Rm.sum(axis=1)
    ok = lengths > 0
    if not ok.any():
        return 1.0
    scale = float(np.max(np.abs(meas.d[ok]) / lengths[ok]))
    return scale if scale > 0 else 1.0


DEFAULT_LENGTH_RANGE = {KernelKind.FLUX_SE: (0.02, 2.0), KernelKind.SPATIAL_SE: (0.05, 2.0)}


@dataclass(frozen=True)
class EvidenceSearchSpace:
    sigmas: tuple[float, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "lengths", tuple(float(s) for s in self.lengths))
        if not self.sigmas or not self.lengths:
            raise ValueError("search space must be nonempty")
        if min(self.sigmas) <= 0 or min(self.lengths) <= 0:
            raise ValueError("search candidates must be positive")

    @classmethod
    def default(
        cls,
        kind: KernelKind,
        scale: float = 1.0,
        sigma_range=(0.1, 10.0),
        sigma_count: int = 7,
        length_range=None,
        length_count: int = 9,
    ) -> "EvidenceSearchSpace":
        if sigma_count < 2 or length_count < 2:
            raise ValueError("need at least 2 candidates per axis")
        lo, hi = length_range or DEFAULT_LENGTH_RANGE[KernelKind(kind)]
        sigmas = scale * np.geomspace(sigma_range[0], sigma_range[1], sigma_count)
        return cls(tuple(sigmas), tuple(np.geomspace(lo, hi, length_count)))

    def pairs(self) -> list[tuple[float, float]]:
        return [(s, l) for l in self.lengths for s in self.sigmas]


@dataclass(frozen=True)
class EvidenceSurface:
    sigma: np.ndarray
    length: np.ndarray
    log_evidence: np.ndarray

    def __len__(self) -> int:
        return len(self.sigma)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "length", "log_evidence"])
            for row in zip(self.sigma, self.length, self.log_evidence):
                w.writerow([repr(float(x)) for x in row])


def build_field(
    kernel: KernelSpec,
    grid: Grid,
    model: ModelTag,
    pts: PointMeasurements | None = None,
    flux_map: FluxMap | None = None,
    mask_factor: float = MASK_FACTOR,
    mask_integrated: bool = False,
    prior: GaussianField | None = None,
) -> GaussianField:
    """The Gaussian field that enters the line-data fusion for ``model``.

    ``SINGLE`` uses the prior masked outside the LCFS (when a flux map is
    given); ``INTEGRATED`` conditions on ``pts`` and masks only when
    ``mask_integrated`` is set.
    """
    model = ModelTag(model)
    if prior is None:
        prior = prior_field(kernel, grid)
    if model is ModelTag.SINGLE:
        fld = prior
        if flux_map is not None:
            fld = GaussianField(fld.mean, mask_covariance_outside_lcfs(fld.covariance, flux_map, mask_factor), grid)
        return fld
    fld = gp_condition(kernel, grid, pts, prior=prior)
    if mask_integrated and flux_map is not None:
        fld = mask_field(fld, flux_map, mask_factor)
    return fld


def optimize_hyperparams(
    space: EvidenceSearchSpace,
    kernel: KernelSpec,
    grid: Grid,
    R,
    meas: LineMeasurements,
    model: ModelTag,
    pts: PointMeasurements | None = None,
    flux_map: FluxMap | None = None,
    mask_factor: float = MASK_FACTOR,
    mask_integrated: bool = False,
) -> tuple[Hyperparams, EvidenceSurface]:
    """Exhaustive evidence maximization over the ``(sigma, length)`` grid.

    The kernel correlation matrix is assembled once per length and rescaled
    for every sigma.  Candidates whose factorization fails get ``-inf``.
    Ties go to the larger length.
    """
    Rm = _matrix(R)
    sig, lens, logev = [], [], []
    for length in space.lengths:
        corr = prior_field(kernel.with_hyper(Hyperparams(1.0, length)), grid).covariance
        for sigma in space.sigmas:
            spec = kernel.with_hyper(Hyperparams(sigma, length))
            prior = GaussianField(np.zeros(grid.m), sigma**2 * corr, grid)
            try:
                fld = build_field(spec, grid, model, pts, flux_map, mask_factor, mask_integrated, prior)
                value = log_evidence(fld, Rm, meas)
            except (FactorizationError, np.linalg.LinAlgError):
                value = -math.inf
            sig.append(sigma)
            lens.append(length)
            logev.append(value)
    surface = EvidenceSurface(np.array(sig), np.array(lens), np.array(logev))
    if not np.any(np.isfinite(surface.log_evidence)):
        raise FactorizationError("every evidence candidate failed to factorize")
    best = max(range(len(sig)), key=lambda i: (logev[i], lens[i]))
    return Hyperparams(sig[best], lens[best]), surface
