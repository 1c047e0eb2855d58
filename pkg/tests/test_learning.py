import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from plenoptic.learning import BrdfFitter, FrankotChellappa, LightfieldReconstructor, NormalSolver
from plenoptic.learning.cost import cost, cost_gradient, huber, huber_derivative
from plenoptic.learning.estimators import group_observations
from plenoptic.learning.forward import Environment, Panel, ooi_cameras
from plenoptic.learning.integrate import integrate_gradients
from plenoptic.learning.pipeline import (CaptureSetup, capture_ooi, dent_grid, lightfield_truth, observation_table,
                                         rmsd_aligned, run_panel)
from plenoptic.physics import Brdf
from plenoptic.sao import sael_table

DEPTH = 3
BRDF = Brdf(0.05, 0.2, 1.5, 1.0)


@pytest.fixture(scope="module")
def light():
    return lightfield_truth(Environment(), DEPTH)


def _table(normals, light, noise=0.0, seed=0):
    g = int(math.isqrt(len(normals)))
    x, y = Panel(grid=g).coords()
    pos = np.stack([x.ravel(), y.ravel(), np.zeros(g * g)], axis=1)
    cams = ooi_cameras(12, 0.5)
    _, obs, sigma, visible = capture_ooi(pos, normals, cams, BRDF, light, DEPTH, noise,
                                         np.random.default_rng(seed))
    return pos, cams, sigma, visible, obs


def _tilted(count, deg, seed=0):
    rng = np.random.default_rng(seed)
    az = rng.uniform(0, 2 * np.pi, count)
    t = np.radians(deg) * rng.uniform(0.3, 1.0, count)
    return np.stack([np.sin(t) * np.cos(az), np.sin(t) * np.sin(az), np.cos(t)], axis=1)


@pytest.mark.parametrize("est", [NormalSolver(brdf=BRDF, lightfield=np.ones(3)), BrdfFitter(n_starts=2),
                                 LightfieldReconstructor(depth=2), FrankotChellappa(spacing=0.5)])
def test_estimators_follow_sklearn_conventions(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params().keys() == params.keys()
    assert type(twin) is type(est)


def test_huber_is_continuous_and_derivative_matches():
    r = np.linspace(-5, 5, 1001)
    h = huber(r, 2.0)
    assert np.max(np.abs(np.diff(h))) <= 0.02 + 1e-12
    fd = (huber(r + 1e-6, 2.0) - huber(r - 1e-6, 2.0)) / 2e-6
    assert np.allclose(huber_derivative(r, 2.0), fd, atol=1e-5)


@given(st.floats(0.01, 100))
def test_cost_invariant_to_common_rescaling(c):
    rng = np.random.default_rng(0)
    obs, pred = rng.normal(size=50), rng.normal(size=50)
    sigma = rng.uniform(0.1, 1, 50)
    assert cost(c * obs, c * pred, c * sigma) == pytest.approx(cost(obs, pred, sigma), rel=1e-9)


def test_cost_gradient_and_sigma_check():
    rng = np.random.default_rng(1)
    obs, pred, dp = rng.normal(size=20), rng.normal(size=20), rng.normal(size=20)
    sigma = rng.uniform(0.2, 1, 20)
    fd = (cost(obs, pred + 1e-6 * dp, sigma) - cost(obs, pred - 1e-6 * dp, sigma)) / 2e-6
    assert cost_gradient(obs, pred, dp, sigma) == pytest.approx(fd, rel=1e-6)
    with pytest.raises(ValueError):
        cost(obs, pred, np.zeros(20))


def test_group_observations_validates_shape():
    with pytest.raises(ValueError):
        group_observations(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        group_observations(np.ones((3, 11)), np.zeros((3, 2)))


def test_normal_solver_recovers_tilts_noise_free(light):
    truth = _tilted(16, 6.0)
    pos, cams, sigma, visible, obs = _table(truth, light)
    prior = np.tile([0.0, 0.0, 1.0], (16, 1))
    X = observation_table(pos, prior, cams, sigma, visible)
    solver = NormalSolver(brdf=BRDF, lightfield=light, lightfield_depth=DEPTH).fit(X, obs[visible])
    err = np.degrees(np.arccos(np.clip(np.sum(solver.normals_ * truth[solver.surfels_], axis=1), -1, 1)))
    assert not solver.degenerate_.any()
    assert np.max(err) < 0.005
    assert np.allclose(solver.predict(X), solver.normals_[np.searchsorted(solver.surfels_, X[:, 0])])


def test_normal_solver_is_thread_count_independent(light):
    truth = _tilted(16, 5.0, seed=3)
    pos, cams, sigma, visible, obs = _table(truth, light, noise=0.01)
    X = observation_table(pos, np.tile([0.0, 0.0, 1.0], (16, 1)), cams, sigma, visible)
    a = NormalSolver(brdf=BRDF, lightfield=light, lightfield_depth=DEPTH, chunk=4, n_jobs=1).fit(X, obs[visible])
    b = NormalSolver(brdf=BRDF, lightfield=light, lightfield_depth=DEPTH, chunk=4, n_jobs=3).fit(X, obs[visible])
    assert np.array_equal(a.normals_, b.normals_)


def test_single_observation_surfel_is_degenerate(light):
    truth = _tilted(4, 3.0)
    pos, cams, sigma, visible, obs = _table(truth, light)
    visible[0] = False
    visible[0, 0] = True
    X = observation_table(pos, truth, cams, sigma, visible)
    solver = NormalSolver(brdf=BRDF, lightfield=light, lightfield_depth=DEPTH).fit(X, obs[visible])
    assert solver.degenerate_[0] and not solver.degenerate_[1:].any()
    assert np.allclose(solver.normals_[0], truth[0])
    with pytest.raises(ValueError):
        NormalSolver().fit(X, obs[visible])


def test_brdf_fitter_recovers_parameters_noise_free(light):
    truth = _tilted(36, 8.0, seed=5)
    pos, cams, sigma, visible, obs = _table(truth, light)
    X = observation_table(pos, truth, cams, sigma, visible)
    fit = BrdfFitter(lightfield=light, lightfield_depth=DEPTH, n_starts=2).fit(X, obs[visible])
    assert np.allclose(fit.params_, BRDF.params(), rtol=0.02, atol=2e-3)
    assert fit.cost_history_[-1] <= fit.cost_history_[0]
    assert np.allclose(fit.predict(X), obs[visible], rtol=0.02, atol=1e-4)


def test_lightfield_reconstructor_averages_and_fills():
    t = sael_table(3)
    up = np.nonzero(t.directions[:, 2] > 0.3)[0]
    dirs = np.repeat(t.directions[up], 2, axis=0)
    vals = np.tile([1.0, 3.0], len(up))
    lfr = LightfieldReconstructor(depth=3).fit(dirs, vals)
    assert np.allclose(lfr.values_[up, 0], 2.0)
    assert np.allclose(lfr.predict(t.directions[up]), 2.0)
    assert 0 < lfr.coverage_ < 1
    assert np.all(lfr.values_[~lfr.observed_, 0] > 0)
    assert np.allclose(lfr.complete_sao().values_at_depth(3), lfr.values_)
    with pytest.raises(ValueError):
        LightfieldReconstructor(depth=3).fit(-t.directions[up], vals[: len(up)])


def test_frankot_chellappa_exact_cases():
    n = np.zeros((12, 16, 3))
    n[..., 2] = 1.0
    assert np.allclose(FrankotChellappa().fit_transform(n), 0.0)
    x, y = np.meshgrid(np.arange(16.0), np.arange(12.0))
    z = 0.1 * x - 0.05 * y + 0.01 * x * x + 0.02 * x * y
    zx, zy = 0.1 + 0.02 * x + 0.02 * y, -0.05 + 0.02 * x
    n = np.stack([-zx, -zy, np.ones_like(z)], axis=-1)
    got = FrankotChellappa().fit_transform(n)
    assert np.allclose(got, z - z.mean(), atol=1e-9)
    with pytest.raises(ValueError):
        FrankotChellappa().fit(np.ones((4, 4, 3)) * [1.0, 0.0, 0.05]).transform(np.ones((4, 4, 3)) * [1, 0, 0.05])
    with pytest.raises(ValueError):
        integrate_gradients(np.zeros((4, 4)), np.zeros((4, 4)), method="poisson")


def test_fft_integrator_is_exact_for_periodic_fields():
    h = w = 32
    x, y = np.meshgrid(np.arange(w), np.arange(h))
    k = 2 * np.pi / w
    z = np.sin(k * x) + 0.5 * np.cos(2 * k * y)
    # spectral derivatives of a band-limited periodic field
    p = k * np.cos(k * x)
    q = -k * np.sin(2 * k * y)
    assert np.allclose(integrate_gradients(p, q, method="fft"), z - z.mean(), atol=1e-9)


def test_rmsd_aligned_ignores_offsets_and_checks_shapes():
    a = np.random.default_rng(0).normal(size=(8, 8))
    assert rmsd_aligned(a, a + 5.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        rmsd_aligned(a, a[:4])
    with pytest.raises(ValueError):
        rmsd_aligned(a, a, np.zeros((8, 8), bool))


def test_dent_grid_layout():
    dents = dent_grid(4, 0.05)
    assert len(dents) == 4
    assert dents[0].depth == pytest.approx(100e-6) and dents[-1].depth == pytest.approx(200e-6)
    xs = sorted({d.center[0] for d in dents})
    assert xs == pytest.approx([-0.015, 0.015])


SMALL = CaptureSetup(n_loi=30, loi_resolution=4)


def test_truth_initialized_pipeline_without_alternations_is_exact():
    panel = Panel(grid=16, dents=dent_grid(1, 0.05, radius=0.004))
    res = run_panel("t", panel, BRDF, sao_depth=DEPTH, setup=SMALL, alternations=0, truth_init=True)
    assert res.rmsd_m == 0.0
    assert res.stage_costs[0][0] == "initial"


def test_pipeline_stage_costs_never_increase():
    panel = Panel(grid=16, dents=dent_grid(1, 0.05, radius=0.004))
    res = run_panel("s", panel, BRDF, sao_depth=DEPTH, setup=SMALL, alternations=2, subsample=32, seed=4)
    costs = [c for _, c in res.stage_costs]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert [n for n, _ in res.stage_costs] == ["initial", "brdf", "normals", "lightfield", "brdf", "normals"]
    assert res.rmsd_ppt < 2.0
