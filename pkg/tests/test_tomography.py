import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from ibtomo._linalg import FactorizationError
from ibtomo.equilibrium import FluxModel, flux_map
from ibtomo.gp import GaussianField, Hyperparams, KernelKind, KernelSpec, gp_condition, prior_field
from ibtomo.grid import Chord, Grid, contribution_matrix, default_fir_chords
from ibtomo.scenario import Scenario, reconstruct, simulate
from ibtomo.evaluation import compute_metrics
from ibtomo import tomography
from ibtomo.synthetic import LineMeasurements, PointMeasurements, apply_measurement_model
from ibtomo.tomography import (
    EvidenceSearchSpace,
    ModelTag,
    build_field,
    fuse,
    log_evidence,
    mask_covariance_outside_lcfs,
    noise_variances,
    optimize_hyperparams,
)

# two cells side by side, one horizontal chord through both
G2 = Grid(2, 1, 0.0, 2.0, 0.0, 1.0)
CHORD = Chord(-1.0, 0.5, 0.0)
SPEC2 = KernelSpec(KernelKind.SPATIAL_SE, Hyperparams(1.2, 0.8))
D_OBS, D_STD = 2.1, 0.3
V_OBS, V_STD = 0.9, 0.4


def _se(a, b, h):
    return h.sigma**2 * math.exp(-math.dist(a, b) ** 2 / (2 * h.length**2))


def _lattice_moments(logp, axes):
    grids = np.meshgrid(*axes, indexing="ij")
    lp = logp(*grids)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    pts = [x.ravel() for x in grids]
    mean = np.array([np.sum(w.ravel() * x) for x in pts])
    cov = np.array([[np.sum(w.ravel() * (x - mx) * (y - my)) for y, my in zip(pts, mean)] for x, mx in zip(pts, mean)])
    return mean, cov


def _two_node_problem(point):
    R = contribution_matrix(G2, [CHORD])
    meas = LineMeasurements(np.array([D_OBS]), np.array([D_STD**2]))
    pts = PointMeasurements(np.array([point]), np.array([V_OBS]), V_STD)
    return R, meas, pts


def test_lattice_oracle_point_at_node():
    R, meas, pts = _two_node_problem(G2.nodes[0])
    np.testing.assert_allclose(R.entries, [[1.0, 1.0]])
    post = fuse(gp_condition(SPEC2, G2, pts), R, meas, ModelTag.INTEGRATED)

    h = SPEC2.hyper
    n0, n1 = G2.nodes
    K = np.array([[_se(n0, n0, h), _se(n0, n1, h)], [_se(n1, n0, h), _se(n1, n1, h)]])
    Ki = np.linalg.inv(K)

    def logp(f0, f1):
        prior = -0.5 * (Ki[0, 0] * f0**2 + 2 * Ki[0, 1] * f0 * f1 + Ki[1, 1] * f1**2)
        return prior - 0.5 * ((V_OBS - f0) / V_STD) ** 2 - 0.5 * ((D_OBS - f0 - f1) / D_STD) ** 2

    axis = np.linspace(-7 * h.sigma, 7 * h.sigma, 1401)
    mean, cov = _lattice_moments(logp, [axis, axis])
    np.testing.assert_allclose(post.mean, mean, atol=1e-3)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-3)


def test_lattice_oracle_point_off_node():
    # joint lattice over both nodes and the unobserved value at the point
    x = (1.0, 0.5)
    R, meas, pts = _two_node_problem(x)
    post = fuse(gp_condition(SPEC2, G2, pts), R, meas, ModelTag.INTEGRATED)

    h = SPEC2.hyper
    locs = [tuple(G2.nodes[0]), tuple(G2.nodes[1]), x]
    K = np.array([[_se(a, b, h) for b in locs] for a in locs])
    Ki = np.linalg.inv(K)

    def logp(f0, f1, fs):
        v = np.stack([f0, f1, fs])
        prior = -0.5 * np.einsum("i...,ij,j...->...", v, Ki, v)
        return prior - 0.5 * ((V_OBS - fs) / V_STD) ** 2 - 0.5 * ((D_OBS - f0 - f1) / D_STD) ** 2

    axis = np.linspace(-6 * h.sigma, 6 * h.sigma, 181)
    mean, cov = _lattice_moments(logp, [axis, axis, axis])
    np.testing.assert_allclose(post.mean, mean[:2], atol=1e-3)
    np.testing.assert_allclose(post.covariance, cov[:2, :2], atol=1e-3)


def test_lattice_oracle_single_model():
    R, meas, _ = _two_node_problem(G2.nodes[0])
    post = fuse(prior_field(SPEC2, G2), R, meas, ModelTag.SINGLE)
    h = SPEC2.hyper
    n0, n1 = G2.nodes
    K = np.array([[_se(n0, n0, h), _se(n0, n1, h)], [_se(n1, n0, h), _se(n1, n1, h)]])
    Ki = np.linalg.inv(K)

    def logp(f0, f1):
        prior = -0.5 * (Ki[0, 0] * f0**2 + 2 * Ki[0, 1] * f0 * f1 + Ki[1, 1] * f1**2)
        return prior - 0.5 * ((D_OBS - f0 - f1) / D_STD) ** 2

    axis = np.linspace(-7 * h.sigma, 7 * h.sigma, 1401)
    mean, cov = _lattice_moments(logp, [axis, axis])
    np.testing.assert_allclose(post.mean, mean, atol=1e-3)
    np.testing.assert_allclose(post.covariance, cov, atol=1e-3)


def test_scalar_evidence():
    fld = GaussianField(np.zeros(1), np.ones((1, 1)))
    meas = LineMeasurements(np.zeros(1), np.ones(1))
    assert log_evidence(fld, np.ones((1, 1)), meas) == pytest.approx(-1.2655121234846454, abs=1e-12)


def test_evidence_monte_carlo():
    R, meas, _ = _two_node_problem(G2.nodes[0])
    prior = prior_field(SPEC2, G2)
    rng = np.random.default_rng(0)
    F = rng.multivariate_normal(prior.mean, prior.covariance, size=400_000)
    like = norm.pdf(D_OBS, loc=F @ R.entries[0], scale=D_STD)
    assert log_evidence(prior, R, meas) == pytest.approx(math.log(like.mean()), abs=0.05)


def test_evidence_matches_marginal_density():
    g = Grid(4, 4)
    spec = KernelSpec(KernelKind.SPATIAL_SE, Hyperparams(1.0, 0.6))
    R = contribution_matrix(g, default_fir_chords()[:5])
    fld = GaussianField(np.full(g.m, 0.3), prior_field(spec, g).covariance)
    meas = LineMeasurements(np.linspace(0.5, 1.5, 5), np.full(5, 0.04))
    C = R.entries @ fld.covariance @ R.entries.T + np.diag(meas.variances)
    expected = multivariate_normal(R.entries @ fld.mean, C).logpdf(meas.d)
    assert log_evidence(fld, R, meas) == pytest.approx(expected, rel=1e-10)


def test_no_data_evidence_is_zero():
    fld = prior_field(SPEC2, G2)
    assert log_evidence(fld, np.zeros((0, 2)), LineMeasurements(np.zeros(0), np.zeros(0))) == 0.0


def _five_by_five():
    g = Grid(5, 5)
    spec = KernelSpec(KernelKind.SPATIAL_SE, Hyperparams(2.0, 0.5))
    chords = [default_fir_chords()[i] for i in (1, 3, 9)]
    R = contribution_matrix(g, chords)
    truth = np.linspace(1.0, 3.0, g.m)
    meas = apply_measurement_model(R @ truth, std_frac=0.05)
    return g, spec, R, meas


def test_two_forms_agree():
    g, spec, R, meas = _five_by_five()
    prior = prior_field(spec, g)
    a = fuse(prior, R, meas, form="data")
    b = fuse(prior, R, meas, form="information")
    assert np.linalg.norm(a.mean - b.mean) <= 1e-8 * np.linalg.norm(b.mean)
    assert np.linalg.norm(a.covariance - b.covariance) <= 1e-8 * np.linalg.norm(b.covariance)


def test_unknown_form_rejected():
    g, spec, R, meas = _five_by_five()
    with pytest.raises(ValueError, match="form"):
        fuse(prior_field(spec, g), R, meas, form="dual")


def test_zero_chords_return_prior():
    fld = gp_condition(SPEC2, G2, _two_node_problem(G2.nodes[0])[2])
    post = fuse(fld, np.zeros((0, 2)), LineMeasurements(np.zeros(0), np.zeros(0)), ModelTag.INTEGRATED)
    np.testing.assert_array_equal(post.mean, fld.mean)
    np.testing.assert_array_equal(post.covariance, fld.covariance)


def test_zero_matrix_returns_input():
    fld = gp_condition(SPEC2, G2, _two_node_problem(G2.nodes[0])[2])
    post = fuse(fld, np.zeros((1, 2)), LineMeasurements(np.array([1.0]), np.array([0.1])))
    np.testing.assert_allclose(post.mean, fld.mean, atol=1e-15)
    np.testing.assert_allclose(post.covariance, fld.covariance, atol=1e-15)


def test_uninformative_data_limit():
    g, spec, R, meas = _five_by_five()
    fld = GaussianField(np.full(g.m, 2.0), prior_field(spec, g).covariance, g)
    wide = LineMeasurements(meas.d, meas.variances * 1e12)
    post = fuse(fld, R, wide)
    np.testing.assert_allclose(post.mean, fld.mean, atol=1e-6 * 2.0)


def test_variance_floor():
    meas = LineMeasurements(np.array([2.0, 4.0]), np.array([0.0, 0.5]))
    np.testing.assert_allclose(noise_variances(meas), [1e-6 * 16.0, 0.5])
    zero = LineMeasurements(np.zeros(2), np.zeros(2))
    np.testing.assert_allclose(noise_variances(zero), [1e-6, 1e-6])


def test_mask():
    g = Grid(2, 1, 1.5, 2.9, -0.1, 0.1)
    model = FluxModel(r0=1.85, a=0.65)
    fm = flux_map(model, g)
    assert fm.inside.tolist() == [True, False]
    cov = np.array([[4.0, 1.0], [1.0, 9.0]])
    out = mask_covariance_outside_lcfs(cov, fm, 1e-3)
    np.testing.assert_allclose(out, [[4.0, 1e-3], [1e-3, 9e-6]])
    np.testing.assert_array_equal(mask_covariance_outside_lcfs(cov, fm, 1.0), cov)
    inside = flux_map(FluxModel(r0=1.85, a=5.0, b=5.0), g)
    np.testing.assert_array_equal(mask_covariance_outside_lcfs(cov, inside), cov)
    with pytest.raises(ValueError):
        mask_covariance_outside_lcfs(cov, fm, 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), std=st.floats(0.005, 0.2), length=st.floats(0.2, 1.5))
def test_posterior_never_more_uncertain(seed, std, length):
    g = Grid(6, 6)
    spec = KernelSpec(KernelKind.SPATIAL_SE, Hyperparams(1.0, length))
    rng = np.random.default_rng(seed)
    R = contribution_matrix(g, default_fir_chords())
    meas = apply_measurement_model(R @ rng.uniform(0.5, 2.0, g.m), std_frac=std)
    prior = prior_field(spec, g)
    post = fuse(prior, R, meas)
    gap = prior.covariance - post.covariance
    assert np.linalg.eigvalsh(gap).min() > -1e-8
    np.testing.assert_array_equal(post.covariance, post.covariance.T)
    assert np.all(np.diag(post.covariance) >= 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_posterior_mean_affine_in_data(seed, a, b):
    g, spec, R, meas = _five_by_five()
    rng = np.random.default_rng(seed)
    fld = GaussianField(rng.normal(size=g.m), prior_field(spec, g).covariance, g)
    d1, d2 = rng.normal(5, 1, R.k), rng.normal(5, 1, R.k)
    var = meas.variances

    def mean(d):
        return fuse(fld, R, LineMeasurements(d, var)).mean

    combo = mean(a * d1 + b * d2 + (1 - a - b) * (R @ fld.mean))
    expected = a * mean(d1) + b * mean(d2) + (1 - a - b) * fld.mean
    np.testing.assert_allclose(combo, expected, atol=1e-8 * (1 + abs(a) + abs(b)) * 10)


def test_fuse_is_reproducible():
    g, spec, R, meas = _five_by_five()
    prior = prior_field(spec, g)
    a, b = fuse(prior, R, meas), fuse(prior, R, meas)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.covariance, b.covariance)
    assert a.log_evidence == b.log_evidence


def test_single_equals_integrated_without_points():
    g, spec, R, meas = _five_by_five()
    single = build_field(spec, g, ModelTag.SINGLE)
    integ = build_field(spec, g, ModelTag.INTEGRATED, PointMeasurements.empty())
    a = fuse(single, R, meas, ModelTag.SINGLE)
    b = fuse(integ, R, meas, ModelTag.INTEGRATED)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-10)


def test_zero_noise_back_projection():
    data = simulate(Scenario())
    rec = reconstruct(Scenario(), data, "single", "flux", Hyperparams(10.0, 0.2))
    bp = np.linalg.norm(data.R @ rec.result.mean - data.meas.d) / np.linalg.norm(data.meas.d)
    assert bp < 0.01


def test_search_space_shape():
    space = EvidenceSearchSpace.default(KernelKind.FLUX_SE, 2.0)
    assert len(space.pairs()) == 63
    np.testing.assert_allclose([space.sigmas[0], space.sigmas[-1]], [0.2, 20.0])
    g, spec, R, meas = _five_by_five()
    best, surface = optimize_hyperparams(space.__class__((1.0, 2.0, 3.0), (0.3, 0.6)), spec, g, R, meas, ModelTag.SINGLE)
    assert len(surface) == 6
    assert surface.log_evidence[np.argmax(surface.log_evidence)] == max(surface.log_evidence)


def test_single_candidate():
    g, spec, R, meas = _five_by_five()
    best, surface = optimize_hyperparams(EvidenceSearchSpace((1.7,), (0.45,)), spec, g, R, meas, ModelTag.SINGLE)
    assert best == Hyperparams(1.7, 0.45)
    assert len(surface) == 1


def test_optimizer_ties_prefer_longer_length(monkeypatch):
    g, spec, R, meas = _five_by_five()
    monkeypatch.setattr(tomography, "log_evidence", lambda *a: 0.0)
    best, _ = optimize_hyperparams(EvidenceSearchSpace((1.0, 2.0), (0.3, 0.9)), spec, g, R, meas, ModelTag.SINGLE)
    assert best.length == 0.9


def test_all_candidates_failing(monkeypatch):
    g, spec, R, meas = _five_by_five()

    def boom(*args):
        raise FactorizationError("nope")

    monkeypatch.setattr(tomography, "log_evidence", boom)
    with pytest.raises(FactorizationError, match="every"):
        optimize_hyperparams(EvidenceSearchSpace((1.0,), (0.3,)), spec, g, R, meas, ModelTag.SINGLE)


def test_evidence_argmax_beats_misscaled_length():
    scn = Scenario()
    data = simulate(scn)
    best = reconstruct(scn, data, "integrated", "flux")
    h = best.result.hyper
    bad = reconstruct(scn, data, "integrated", "flux", Hyperparams(h.sigma, h.length * 100))
    assert compute_metrics(best.result.mean, data.truth).rrmse <= compute_metrics(bad.result.mean, data.truth).rrmse
