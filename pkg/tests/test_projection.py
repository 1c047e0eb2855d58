import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plenoptic.geometry import to_fixed
from plenoptic.projection import ProjectionState, covered_fraction, gather_terms, iter_hits, sael_spans
from plenoptic.sao import SaelId, slope_bounds, slopes_to_direction
from plenoptic.vlo import FULL, Vlo, cell_bounds, cell_to_path, half_space_classifier

dyadic = st.integers(1, 63).map(lambda k: k / 64)


def _ray_hits_box(src, dirs, lo, size):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - src) / dirs
        t2 = (lo + size - src) / dirs
    near = np.nanmax(np.minimum(t1, t2), axis=1)
    far = np.nanmin(np.maximum(t1, t2), axis=1)
    return (near < far) & (far > 0)


def _state_for(src, sid, path):
    st_ = ProjectionState.start(tuple(to_fixed(v) for v in src), sid.top, sael_spans(sid))
    for ci in path:
        st_ = st_.push(ci)
    return st_


@settings(max_examples=150, deadline=None)
@given(st.tuples(dyadic, dyadic, dyadic), st.integers(0, 23), st.lists(st.integers(0, 3), max_size=2),
       st.integers(1, 3).flatmap(lambda d: st.tuples(st.just(d), *[st.integers(0, (1 << d) - 1)] * 3)))
def test_intersects_agrees_with_ray_sampling(src, top, sub, cell):
    sid = SaelId(top, tuple(sub))
    path = cell_to_path(*cell)
    lo, size = cell_bounds(path)
    u0, u1, v0, v1 = slope_bounds(sid)
    rng = np.random.default_rng(abs(hash((src, top, tuple(sub), cell))) % 2 ** 32)
    u = u0 + (u1 - u0) * rng.uniform(0.001, 0.999, 400)
    v = v0 + (v1 - v0) * rng.uniform(0.001, 0.999, 400)
    dirs = slopes_to_direction(top, u, v)
    sampled = _ray_hits_box(np.asarray(src), dirs, lo, size).any()
    exact = _state_for(src, sid, path).intersects()
    if sampled:
        assert exact


def test_intersects_rejects_cells_behind_source():
    src = (0.25, 0.25, 0.25)
    sid = SaelId(3 * 7 + 0)  # +x major, all-positive octant
    assert _state_for(src, sid, cell_to_path(2, 3, 1, 1)).intersects()
    assert not _state_for(src, sid, cell_to_path(2, 0, 1, 1)).intersects()


def test_covered_fraction_matches_monte_carlo():
    src = np.array([0.5, 0.5, 0.1])
    sid = SaelId(3 * 7 + 2, (0,))  # +z major
    path = cell_to_path(3, 4, 4, 5)
    lo, size = cell_bounds(path)
    rng = np.random.default_rng(3)
    u0, u1, v0, v1 = slope_bounds(sid)
    u = rng.uniform(u0, u1, 400_000)
    v = rng.uniform(v0, v1, 400_000)
    w = (1 + u * u + v * v) ** -1.5
    hit = _ray_hits_box(src, slopes_to_direction(sid.top, u, v), lo, size)
    mc = float((w * hit).sum() / w.sum())
    assert covered_fraction(src, sid, path) == pytest.approx(mc, abs=0.01)


def test_hits_are_front_to_back():
    vlo = Vlo.build_from_implicit(half_space_classifier(2, 0.5), 3)
    src = (0.5, 0.5, 0.125)
    sid = SaelId(3 * 7 + 2, (0, 0))
    hits = list(iter_hits(vlo, src, sid))
    assert hits
    z = [cell_bounds(h.path)[0][2] for h in hits]
    assert z[0] == min(z)


def test_gather_weights_sum_to_one():
    vlo = Vlo.build_from_implicit(half_space_classifier(2, 0.75), 3)
    src = (0.3125, 0.625, 0.1875)
    for top in range(24):
        hits, env = gather_terms(vlo, src, SaelId(top))
        total = sum(f for f, *_ in hits) + sum(f for f, _ in env)
        assert total == pytest.approx(1.0, abs=1e-9)
        assert all(f > 0 for f, *_ in hits)


def test_enclosed_source_sees_no_environment():
    vlo = Vlo(FULL, 0)
    hits, env = gather_terms(vlo, (0.5, 0.5, 0.5), SaelId(0))
    assert env == [] and hits
