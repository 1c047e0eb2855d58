"""Estimators for the inverse problem, following the scikit-learn API.

Observation tables are 2-D arrays with the columns in :data:`OBS_COLUMNS`:
one row per observed exitant radiel (a surfel seen by a camera). Targets
are the measured Stokes vectors ``(n, 3)`` in the canonical frame of the
exitant ray.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from ..geometry import normalize
from ..physics import Brdf
from ..sao import INCIDENT, Sao, locate_indices, sael_table
from .cost import DEFAULT_HUBER_K, cost_gradient, cost_terms
from .forward import Design, build_design, incident_saels, predict
from .integrate import integrate_normals

OBS_COLUMNS = ("surfel", "px", "py", "pz", "nx", "ny", "nz", "cx", "cy", "cz", "sigma")
BRDF_PARAMS = ("diffuse_albedo", "roughness", "ior", "specular")
DEFAULT_BOUNDS = ((0.0, 1.0), (0.03, 1.0), (1.05, 2.5), (0.0, 1.0))


@dataclass
class ObservationBlock:
    """Observations grouped per surfel and padded to a common count."""

    surfels: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    cameras: np.ndarray
    stokes: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def take(self, idx) -> "ObservationBlock":
        return ObservationBlock(self.surfels[idx], self.positions[idx], self.normals[idx], self.cameras[idx],
                                self.stokes[idx], self.sigma[idx], self.mask[idx])


def group_observations(X, y=None) -> ObservationBlock:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != len(OBS_COLUMNS):
        raise ValueError(f"observation tables need {len(OBS_COLUMNS)} columns {OBS_COLUMNS}")
    if y is None:
        y = np.zeros((len(X), 3))
    y = check_array(y, dtype=np.float64)
    if y.shape != (len(X), 3):
        raise ValueError("targets must be (n_observations, 3) Stokes vectors")
    if np.any(X[:, 10] <= 0):
        raise ValueError("observation sigma must be positive")
    ids = X[:, 0].astype(np.int64)
    order = np.argsort(ids, kind="stable")
    ids, X, y = ids[order], X[order], y[order]
    surfels, start, counts = np.unique(ids, return_index=True, return_counts=True)
    s, j = len(surfels), int(counts.max())
    rank = np.arange(len(ids)) - np.repeat(start, counts)
    row = np.repeat(np.arange(s), counts)
    cams = np.zeros((s, j, 3))
    stokes = np.zeros((s, j, 3))
    sigma = np.ones((s, j))
    mask = np.zeros((s, j), dtype=bool)
    cams[:, :, :] = X[start, 7:10][:, None, :]
    cams[row, rank] = X[:, 7:10]
    stokes[row, rank] = y
    sigma[row, rank] = X[:, 10]
    mask[row, rank] = True
    return ObservationBlock(surfels, X[start, 1:4], normalize(X[start, 4:7]), cams, stokes, sigma, mask)


def _radiance(lightfield, depth: int, sael_idx: np.ndarray) -> np.ndarray:
    if isinstance(lightfield, Sao):
        return lightfield.values_at_depth(depth, fill="parent")[sael_idx, 0]
    values = np.asarray(lightfield, dtype=float).reshape(len(sael_table(depth)), -1)
    return values[sael_idx, 0]


def block_cost(block: ObservationBlock, pred: np.ndarray, k: float = DEFAULT_HUBER_K) -> np.ndarray:
    """Per-surfel, per-candidate cost for predictions ``(S, K, J, 3)``."""
    terms = cost_terms(block.stokes[:, None], pred, block.sigma[:, None, :, None], k,
                       block.mask[:, None, :, None])
    return terms.sum(axis=(2, 3))


def _tangent_basis(n: np.ndarray):
    helper = np.where(np.abs(n[:, 0:1]) < 0.9, np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    t1 = normalize(np.cross(n, helper))
    t2 = np.cross(n, t1)
    return t1, t2


def _candidates(n0, t1, t2, offsets):
    """Normals at tangent-plane angle offsets ``(S, K, 2)`` (radians) about ``n0``."""
    a = np.tan(offsets[..., 0])[..., None]
    b = np.tan(offsets[..., 1])[..., None]
    return normalize(n0[:, None, :] + a * t1[:, None, :] + b * t2[:, None, :])


class NormalSolver(BaseEstimator):
    """Per-surfel normal by hierarchical search around the prior normal.

    A coarse grid of tangent-plane tilts is followed by ``refine_rounds``
    rounds of a 3x3 stencil with a quadratic-fit step. Within a round the
    stencil re-centers while a neighbour beats its center (at most
    ``max_moves`` times) before shrinking by four. Surfels with fewer than
    ``min_observations`` observations, or whose coarse-grid cost varies by
    less than ``flat_tolerance`` (in weighted chi-square units), are flagged
    as unconstrained and keep their prior normal.
    """

    def __init__(self, brdf=None, lightfield=None, lightfield_depth: int = 4, grid_step_deg: float = 4.0,
                 grid_radius_deg: float = 8.0, refine_rounds: int = 3, chunk: int = 32,
                 max_moves: int = 4, huber_k: float = DEFAULT_HUBER_K, min_observations: int = 2,
                 flat_tolerance: float = 1.0, n_jobs: int = 1):
        self.brdf = brdf
        self.lightfield = lightfield
        self.lightfield_depth = lightfield_depth
        self.grid_step_deg = grid_step_deg
        self.grid_radius_deg = grid_radius_deg
        self.refine_rounds = refine_rounds
        self.max_moves = max_moves
        self.chunk = chunk
        self.huber_k = huber_k
        self.min_observations = min_observations
        self.flat_tolerance = flat_tolerance
        self.n_jobs = n_jobs

    def fit(self, X, y):
        if self.brdf is None or self.lightfield is None:
            raise ValueError("NormalSolver needs a brdf and a lightfield")
        block = group_observations(X, y)
        sael_idx = incident_saels(self.lightfield_depth)
        radiance = _radiance(self.lightfield, self.lightfield_depth, sael_idx)
        params = self.brdf.params()
        s = len(block.surfels)
        normals = block.normals.copy()
        costs = np.zeros(s)
        degenerate = block.counts < self.min_observations
        slices = [slice(lo, min(lo + self.chunk, s)) for lo in range(0, s, self.chunk)]

        def solve(sl):
            sub = block.take(sl)
            design = build_design(sub.positions, sub.cameras, self.lightfield_depth, sael_idx, sub.mask)
            return self._search(design, sub, params, radiance)

        # chunks are independent, so results do not depend on the worker count
        if self.n_jobs > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                results = list(pool.map(solve, slices))
        else:
            results = [solve(sl) for sl in slices]
        for sl, (n, c, flat) in zip(slices, results):
            normals[sl], costs[sl] = n, c
            degenerate[sl] |= flat
        normals[degenerate] = block.normals[degenerate]
        self.surfels_ = block.surfels
        self.normals_ = normals
        self.cost_ = costs
        self.degenerate_ = degenerate
        self.prior_normals_ = block.normals
        return self

    def _evaluate(self, design, sub, params, radiance, cands):
        out = []
        for k in range(0, cands.shape[1], 9):
            pred = predict(design, cands[:, k:k + 9], params, radiance).stokes
            out.append(block_cost(sub, pred, self.huber_k))
        return np.concatenate(out, axis=1)

    def _search(self, design, sub, params, radiance):
        n0 = sub.normals
        t1, t2 = _tangent_basis(n0)
        step = math.radians(self.grid_step_deg)
        m = int(round(self.grid_radius_deg / self.grid_step_deg))
        g = np.arange(-m, m + 1) * step
        ga, gb = np.meshgrid(g, g, indexing="ij")
        grid = np.stack([ga.ravel(), gb.ravel()], axis=1)
        offs = np.broadcast_to(grid, (len(n0),) + grid.shape)
        costs = self._evaluate(design, sub, params, radiance, _candidates(n0, t1, t2, offs))
        flat = (costs.max(axis=1) - costs.min(axis=1)) < self.flat_tolerance
        rows = np.arange(len(n0))
        best = offs[rows, np.argmin(costs, axis=1)]
        best_cost = costs.min(axis=1)
        stencil = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
        h = step / 2
        for _ in range(self.refine_rounds):
            # re-center while a stencil neighbour beats the center, then shrink
            active = rows
            for _ in range(self.max_moves):
                d_act, s_act = _take_design(design, active), sub.take(active)
                n_act, t1a, t2a = n0[active], t1[active], t2[active]
                pts = best[active, None, :] + h * stencil[None]
                c = self._evaluate(d_act, s_act, params, radiance, _candidates(n_act, t1a, t2a, pts))
                newton = best[active] + h * _quadratic_step(c, stencil)
                cn = self._evaluate(d_act, s_act, params, radiance,
                                    _candidates(n_act, t1a, t2a, newton[:, None, :]))[:, 0]
                allc = np.concatenate([c, cn[:, None]], axis=1)
                allp = np.concatenate([pts, newton[:, None, :]], axis=1)
                pick = np.argmin(allc, axis=1)
                sel = np.arange(len(active))
                moved = allc[sel, pick] < best_cost[active]
                best[active[moved]] = allp[sel[moved], pick[moved]]
                best_cost[active[moved]] = allc[sel[moved], pick[moved]]
                # a win by the Newton point alone means the minimum is already bracketed
                active = active[moved & (np.argmin(c, axis=1) != 4)]
                if len(active) == 0:
                    break
            h /= 4
        normals = _candidates(n0, t1, t2, best[:, None, :])[:, 0]
        return normals, best_cost, flat

    def predict(self, X):
        """Normals for the surfels named in the observation table ``X``."""
        check_is_fitted(self, "normals_")
        X = check_array(X, dtype=np.float64)
        ids = X[:, 0].astype(np.int64)
        pos = np.searchsorted(self.surfels_, ids)
        if np.any(pos >= len(self.surfels_)) or np.any(self.surfels_[np.minimum(pos, len(self.surfels_) - 1)] != ids):
            raise ValueError("unknown surfel id")
        return self.normals_[pos]


def _take_design(design: Design, idx) -> Design:
    return Design(design.dirs, design.omega, design.wo[idx], design.mask[idx], design.h[idx], design.cd[idx],
                  design.c2[idx], design.s2[idx])


def _quadratic_step(c: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    """Minimizer of a least-squares quadratic through a 3x3 stencil (clipped to +-1.5 cells)."""
    a, b = stencil[:, 0], stencil[:, 1]
    basis = np.stack([np.ones_like(a), a, b, a * a, a * b, b * b], axis=1)
    coef = np.linalg.lstsq(basis, c.T, rcond=None)[0]
    _, ga, gb, haa, hab, hbb = coef
    hess = np.stack([np.stack([2 * haa, hab], -1), np.stack([hab, 2 * hbb], -1)], -2)
    grad = np.stack([ga, gb], -1)
    det = hess[:, 0, 0] * hess[:, 1, 1] - hess[:, 0, 1] ** 2
    ok = (det > 0) & (hess[:, 0, 0] > 0)
    safe = np.where(ok[:, None, None], hess, np.eye(2)[None])
    step = -np.linalg.solve(safe, grad[..., None])[..., 0]
    step = np.where(ok[:, None], step, 0.0)
    return np.clip(step, -1.5, 1.5)


def brdf_objective(x, design, block: ObservationBlock, radiance, k: float = DEFAULT_HUBER_K):
    """Cost and its gradient with respect to ``(diffuse_albedo, roughness, ior, specular)``."""
    pred = predict(design, block.normals[:, None, :], x, radiance, grad=True)
    obs = block.stokes[:, None]
    sig = block.sigma[:, None, :, None]
    msk = block.mask[:, None, :, None]
    c = float(np.sum(cost_terms(obs, pred.stokes, sig, k, msk)))
    g = np.array([cost_gradient(obs, pred.stokes, pred.grad[name], sig, k, msk) for name in BRDF_PARAMS])
    return c, g


class BrdfFitter(BaseEstimator):
    """Fit BRDF parameters with normals fixed to the observation table's normals.

    Bounded L-BFGS-B with the analytic gradient from ``n_starts`` starting
    points (the first is the center of the bounds, the rest are random).
    """

    def __init__(self, lightfield=None, lightfield_depth: int = 4, n_starts: int = 4, max_iter: int = 200,
                 bounds=DEFAULT_BOUNDS, huber_k: float = DEFAULT_HUBER_K, max_surfels: int = 256,
                 random_state=0, initial=None):
        self.lightfield = lightfield
        self.lightfield_depth = lightfield_depth
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.bounds = bounds
        self.huber_k = huber_k
        self.max_surfels = max_surfels
        self.random_state = random_state
        self.initial = initial

    def _prepare(self, X, y):
        block = group_observations(X, y)
        if len(block.surfels) > self.max_surfels:
            pick = np.unique(np.linspace(0, len(block.surfels) - 1, self.max_surfels).round().astype(int))
            block = block.take(pick)
        sael_idx = incident_saels(self.lightfield_depth)
        design = build_design(block.positions, block.cameras, self.lightfield_depth, sael_idx, block.mask)
        return block, design, _radiance(self.lightfield, self.lightfield_depth, sael_idx)

    def fit(self, X, y):
        if self.lightfield is None:
            raise ValueError("BrdfFitter needs a lightfield")
        block, design, radiance = self._prepare(X, y)
        rng = check_random_state(self.random_state)
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        starts = [] if self.initial is None else [np.clip(np.asarray(self.initial, dtype=float), lo, hi)]
        starts.append((lo + hi) / 2)
        while len(starts) < max(self.n_starts, 1):
            starts.append(lo + rng.random_sample(4) * (hi - lo))
        best = None
        for x0 in starts:
            history = [brdf_objective(x0, design, block, radiance, self.huber_k)[0]]

            def fun(x):
                return brdf_objective(x, design, block, radiance, self.huber_k)

            res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=list(self.bounds),
                           options={"maxiter": self.max_iter},
                           callback=lambda xk: history.append(fun(xk)[0]))
            if best is None or res.fun < best[0].fun:
                best = (res, history)
        res, history = best
        x = np.clip(res.x, lo, hi)
        x[1] = max(x[1], 1e-6)
        x[2] = max(x[2], 1.0 + 1e-6)
        self.params_ = x
        self.brdf_ = Brdf.from_params(x)
        self.cost_ = float(res.fun)
        self.cost_history_ = history
        self.converged_ = bool(res.success)
        self.n_iter_ = int(res.nit)
        return self

    def predict(self, X):
        """Predicted Stokes per observation row of ``X``."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        sael_idx = incident_saels(self.lightfield_depth)
        radiance = _radiance(self.lightfield, self.lightfield_depth, sael_idx)
        pos = X[:, 1:4]
        design = build_design(pos, X[:, None, 7:10], self.lightfield_depth, sael_idx)
        return predict(design, normalize(X[:, 4:7])[:, None, :], self.params_, radiance).stokes[:, 0, 0]


class LightfieldReconstructor(BaseEstimator):
    """Far-field incident light from outward-looking radiance samples.

    Samples are averaged per sael at ``depth``; saels without samples read
    their nearest observed ancestor's summary.
    """

    def __init__(self, depth: int = 4, fill: str = "parent"):
        self.depth = depth
        self.fill = fill

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=float).reshape(len(X), -1)[:, 0]
        if X.shape[1] != 3:
            raise ValueError("samples must be (n, 3) directions")
        if not np.any(X[:, 2] > 0):
            raise ValueError("samples leave the upper hemisphere empty")
        w = np.ones(len(X)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        idx = locate_indices(normalize(X), self.depth)
        m = len(sael_table(self.depth))
        wsum = np.bincount(idx, weights=w, minlength=m)
        vsum = np.bincount(idx, weights=w * y, minlength=m)
        table = sael_table(self.depth)
        sao = Sao((0.5, 0.5, 0.5), INCIDENT, 1, max(self.depth, 8))
        for i in np.nonzero(wsum > 0)[0]:
            sao.splat(table.directions[i], [vsum[i] / wsum[i]], self.depth, weight=float(wsum[i]))
        self.sao_ = sao
        self.values_ = sao.values_at_depth(self.depth, fill=self.fill)
        upper = table.directions[:, 2] > 0
        self.observed_ = wsum > 0
        self.coverage_ = float(np.mean(self.observed_[upper]))
        return self

    def predict(self, X):
        check_is_fitted(self, "values_")
        X = check_array(X, dtype=np.float64)
        return self.values_[locate_indices(normalize(X), self.depth), 0]

    def complete_sao(self) -> Sao:
        check_is_fitted(self, "values_")
        out = Sao((0.5, 0.5, 0.5), INCIDENT, 1, max(self.depth, 8))
        out.set_uniform(self.depth, self.values_)
        return out


class FrankotChellappa(TransformerMixin, BaseEstimator):
    """Normal map ``(H, W, 3)`` to mean-free depth map ``(H, W)``."""

    def __init__(self, spacing: float = 1.0, method: str = "dct"):
        self.spacing = spacing
        self.method = method

    def fit(self, X, y=None):
        X = check_array(X, allow_nd=True, dtype=np.float64)
        if X.ndim != 3 or X.shape[-1] != 3:
            raise ValueError("expected an (H, W, 3) normal map")
        self.shape_ = X.shape[:2]
        return self

    def transform(self, X):
        check_is_fitted(self, "shape_")
        X = check_array(X, allow_nd=True, dtype=np.float64)
        return integrate_normals(X, self.spacing, self.method)
