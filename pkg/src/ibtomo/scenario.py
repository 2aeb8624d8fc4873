"""End-to-end synthetic scenario: truth, virtual diagnostics and reconstruction."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import FluxMap, FluxModel, flux_map
from .gp import GaussianField, Hyperparams, KernelKind, KernelSpec, prior_field
from .grid import Chord, ContributionMatrix, Grid, contribution_matrix, default_fir_chords
from .synthetic import (
    LineMeasurements,
    MtanhParams,
    PointMeasurements,
    SyntheticField,
    apply_measurement_model,
    forward_project,
    sample_fmcw,
    synthesize_field,
)
from .tomography import (
    MASK_FACTOR,
    EvidenceSearchSpace,
    EvidenceSurface,
    ModelTag,
    PosteriorResult,
    build_field,
    field_scale,
    fuse,
    optimize_hyperparams,
)


@dataclass(frozen=True)
class SearchSettings:
    sigma_range: tuple[float, float] = (0.1, 10.0)
    sigma_count: int = 7
    length_range: tuple[float, float] | None = None
    length_count: int = 9

    def space(self, kind: KernelKind, scale: float) -> EvidenceSearchSpace:
        return EvidenceSearchSpace.default(
            kind, scale, self.sigma_range, self.sigma_count, self.length_range, self.length_count
        )


@dataclass(frozen=True)
class Scenario:
    grid: Grid = field(default_factory=lambda: Grid(28, 30))
    flux_model: FluxModel = field(default_factory=FluxModel)
    mtanh: MtanhParams = field(default_factory=MtanhParams)
    chords: tuple[Chord, ...] = field(default_factory=lambda: tuple(default_fir_chords()))
    fmcw_count: int = 20
    sigma_star: float = 0.0
    std_frac: float = 0.0
    noise_frac: float = 0.0
    mask_factor: float = MASK_FACTOR
    mask_integrated: bool = True
    search: SearchSettings = field(default_factory=SearchSettings)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def kernel(self, kind: KernelKind | str, hyper: Hyperparams | None = None) -> KernelSpec:
        kind = KernelKind(kind)
        hyper = hyper or Hyperparams(1.0, 1.0)
        return KernelSpec(kind, hyper, self.flux_model if kind is KernelKind.FLUX_SE else None)


@dataclass(frozen=True)
class Geometry:
    """Noise-independent parts of a scenario."""

    grid: Grid
    flux_map: FluxMap
    truth: SyntheticField
    R: ContributionMatrix
    clean_d: np.ndarray


@dataclass(frozen=True)
class ScenarioData:
    geometry: Geometry
    meas: LineMeasurements
    pts: PointMeasurements

    @property
    def grid(self) -> Grid:
        return self.geometry.grid

    @property
    def R(self) -> ContributionMatrix:
        return self.geometry.R

    @property
    def truth(self) -> SyntheticField:
        return self.geometry.truth


def build_geometry(scn: Scenario) -> Geometry:
    scn.flux_model.check_axis_inside(scn.grid)
    fmap = flux_map(scn.flux_model, scn.grid)
    truth = synthesize_field(scn.grid, scn.flux_model, scn.mtanh)
    R = contribution_matrix(scn.grid, scn.chords)
    return Geometry(scn.grid, fmap, truth, R, forward_project(R, truth.values))


def measure(scn: Scenario, geom: Geometry, rng: np.random.Generator | None = None) -> ScenarioData:
    """Draw one realization of the line and point data.

    Line data are drawn before point data from the same generator.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    labels = [c.label or str(j) for j, c in enumerate(geom.R.chords)]
    meas = apply_measurement_model(geom.clean_d, scn.std_frac, scn.noise_frac, rng, labels)
    if scn.fmcw_count > 0:
        pts = sample_fmcw(
            scn.flux_model,
            geom.truth.evaluate,
            scn.fmcw_count,
            scn.sigma_star,
            rng,
            noise_frac=scn.noise_frac,
            grid=scn.grid,
        )
    else:
        pts = PointMeasurements.empty()
    return ScenarioData(geom, meas, pts)


def simulate(scn: Scenario, rng: np.random.Generator | None = None) -> ScenarioData:
    return measure(scn, build_geometry(scn), rng)


@dataclass(frozen=True)
class Reconstruction:
    result: PosteriorResult
    input_field: GaussianField
    kind: KernelKind
    surface: EvidenceSurface | None = None

    @property
    def optimized(self) -> bool:
        return self.surface is not None


def select_hyperparams(
    scn: Scenario, data: ScenarioData, model: ModelTag | str, kind: KernelKind | str
) -> tuple[Hyperparams, EvidenceSurface]:
    model, kind = ModelTag(model), KernelKind(kind)
    space = scn.search.space(kind, field_scale(data.R, data.meas))
    return optimize_hyperparams(
        space,
        scn.kernel(kind),
        data.grid,
        data.R,
        data.meas,
        model,
        data.pts,
        data.geometry.flux_map,
        scn.mask_factor,
        scn.mask_integrated,
    )


def reconstruct(
    scn: Scenario,
    data: ScenarioData,
    model: ModelTag | str = ModelTag.INTEGRATED,
    kind: KernelKind | str = KernelKind.FLUX_SE,
    hyper: Hyperparams | None = None,
    prior: GaussianField | None = None,
) -> Reconstruction:
    """Fuse the scenario data; optimize the evidence unless ``hyper`` is given.

    ``prior`` may carry a grid prior already built for ``(kind, hyper)``.
    """
    model, kind = ModelTag(model), KernelKind(kind)
    surface = None
    if hyper is None:
        hyper, surface = select_hyperparams(scn, data, model, kind)
    spec = scn.kernel(kind, hyper)
    fld = build_field(
        spec,
        data.grid,
        model,
        data.pts,
        data.geometry.flux_map,
        scn.mask_factor,
        scn.mask_integrated,
        prior if prior is not None else prior_field(spec, data.grid),
    )
    result = fuse(fld, data.R, data.meas, model, hyper)
    return Reconstruction(result, fld, kind, surface)
