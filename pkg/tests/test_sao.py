import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad

from plenoptic.geometry import ONE
from plenoptic.sao import (EXITANT, INCIDENT, Sao, SaelId, antipode, center_direction, locate_indices,
                           locate_sael, sael_table, slope_bounds, solid_angle, subdivide, top_saels)

# Solid angles of the slope rectangles [0,.5]^2 and [.5,1]^2 at unit distance,
# frozen from adaptive quadrature of (1+u^2+v^2)^(-3/2).
FROZEN_LOW_QUADRANT = 0.2013579207903308
FROZEN_HIGH_QUADRANT = 0.08145558759534527

sael_ids = st.builds(SaelId, st.integers(0, 23), st.lists(st.integers(0, 3), max_size=6).map(tuple))


def _quad(u0, u1, v0, v1):
    return dblquad(lambda v, u: (1 + u * u + v * v) ** -1.5, u0, u1, v0, v1, epsabs=1e-13, epsrel=1e-13)[0]


def test_solid_angle_frozen_values():
    assert solid_angle(SaelId(0, (0,))) == pytest.approx(FROZEN_LOW_QUADRANT, rel=1e-12)
    assert solid_angle(SaelId(5, (3,))) == pytest.approx(FROZEN_HIGH_QUADRANT, rel=1e-12)


@given(sael_ids)
def test_solid_angle_matches_quadrature(sid):
    assert solid_angle(sid) == pytest.approx(_quad(*slope_bounds(sid)), rel=1e-9)


@pytest.mark.parametrize("depth", [1, 2, 4])
def test_table_covers_sphere(depth):
    t = sael_table(depth)
    assert t.weights.sum() == pytest.approx(4 * math.pi, rel=1e-12)
    assert np.allclose(np.linalg.norm(t.directions, axis=1), 1.0)
    assert np.array_equal(locate_indices(t.directions, depth), np.arange(len(t)))


@given(sael_ids)
def test_index_round_trip(sid):
    assert SaelId.from_index(sid.index(), sid.depth) == sid


@given(sael_ids)
def test_antipode_is_involution_and_opposite(sid):
    a = antipode(sid)
    assert antipode(a) == sid
    assert np.allclose(center_direction(a), -center_direction(sid))


def test_table_antipode_index_agrees():
    t = sael_table(3)
    ai = t.antipode_index()
    assert np.allclose(t.directions[ai], -t.directions)


@given(sael_ids)
def test_children_are_consecutive_indices(sid):
    kids = [sid.child(c).index() for c in range(4)]
    assert kids == [4 * sid.index() + c for c in range(4)]
    assert sum(solid_angle(sid.child(c)) for c in range(4)) == pytest.approx(solid_angle(sid), rel=1e-12)


def test_locate_center_direction():
    sid = SaelId(13, (2, 1, 3))
    assert locate_sael(center_direction(sid), sid.depth) == sid


def test_subdivide_spans_and_weights():
    top = top_saels()[0]
    assert top.span_u[0].value == ONE
    kids = subdivide(top)
    assert sum(k.weight for k in kids) == pytest.approx(top.weight)
    assert kids[1].span_l[0].value == ONE // 2 and kids[1].span_l[1].value == 0
    grand = subdivide(kids[3])
    assert grand[0].span_l[0].value == ONE // 2 and grand[0].span_u[0].value == 3 * ONE // 4
    with pytest.raises(ValueError):
        subdivide(top, max_depth=1)


def test_bad_ids_rejected():
    with pytest.raises(ValueError):
        SaelId(24)
    with pytest.raises(ValueError):
        SaelId(0, (4,))


def test_splat_is_running_mean_and_summaries_hold(rng):
    sao = Sao(channels=1)
    d = center_direction(SaelId(2, (1, 1)))
    sao.splat(d, 1.0, 3, weight=1.0)
    sao.splat(d, 4.0, 3, weight=2.0)
    assert sao.value(locate_sael(d, 3))[0] == pytest.approx(3.0)
    for _ in range(50):
        v = rng.normal(size=3)
        sao.splat(v / np.linalg.norm(v), rng.random(), int(rng.integers(1, 5)))
    assert sao.check_summaries() < 1e-12
    with pytest.raises(ValueError):
        sao.splat(d, 1.0, 3, weight=0.0)


def test_parent_fill_reads_ancestor():
    sao = Sao()
    sid = SaelId(0, (1, 2))
    sao.set_value(sid, 2.0)
    sibling = SaelId(0, (1, 3))
    assert sao.value(sibling)[0] == 0.0
    assert sao.value(sibling, fill="parent")[0] == pytest.approx(2.0)


def test_set_uniform_round_trips_values(rng):
    depth = 3
    vals = rng.random((len(sael_table(depth)), 3))
    sao = Sao(channels=3, kind=INCIDENT)
    sao.set_uniform(depth, vals)
    assert np.allclose(sao.values_at_depth(depth), vals)
    assert sao.check_summaries() < 1e-12
    w = sael_table(depth).weights
    assert np.allclose(sao.root_summary(), (vals * w[:, None]).sum(0) / w.sum())


def test_serialization_round_trip(rng):
    sao = Sao(center=(0.25, 0.5, 0.75), kind=EXITANT, channels=3)
    for _ in range(40):
        v = rng.normal(size=3)
        sao.splat(v / np.linalg.norm(v), rng.random(3) * [1, 0.1, 0.1], int(rng.integers(1, 6)))
    back = Sao.from_bytes(sao.to_bytes())
    assert back.center == sao.center and back.kind == sao.kind and back.channels == 3
    assert back.stored_ids() == sao.stored_ids()
    for sid in sao.stored_ids():
        assert np.array_equal(back.get(sid), sao.get(sid))
    assert back.to_bytes() == sao.to_bytes()
    with pytest.raises(ValueError):
        Sao.from_bytes(b"XXXX" + sao.to_bytes()[4:])
