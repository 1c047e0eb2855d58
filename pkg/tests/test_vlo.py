import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_vlo
from plenoptic.vlo import (EMPTY, FULL, Mediel, NodeStatus, Vlo, cell_to_path, difference, ftb_order, intersection,
                           internal, leaf, locate, path_to_cell, sphere_classifier, union)

seeds = st.integers(0, 2 ** 32 - 1)


def _pair(seed, depth=4):
    rng = np.random.default_rng(seed)
    return random_vlo(rng, depth), random_vlo(rng, depth)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_set_ops_match_dense(seed):
    a, b = _pair(seed)
    da, db = a.to_dense(4), b.to_dense(4)
    assert np.array_equal(union(a, b).to_dense(4), da | db)
    assert np.array_equal(intersection(a, b).to_dense(4), da & db)
    assert np.array_equal(difference(a, b).to_dense(4), da & ~db)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_serialization_round_trip(seed):
    a, _ = _pair(seed, 5)
    back = Vlo.from_bytes(a.to_bytes())
    assert back == a
    assert back.to_bytes() == a.to_bytes()
    assert [p for p, _ in back.leaves()] == [p for p, _ in a.leaves()]
    for (_, x), (_, y) in zip(a.occupied_leaves(), back.occupied_leaves()):
        assert x.payload == y.payload


def test_from_bytes_rejects_garbage():
    with pytest.raises(ValueError):
        Vlo.from_bytes(b"NOPE")


@given(st.integers(0, 6).flatmap(lambda d: st.tuples(st.just(d), *[st.integers(0, (1 << d) - 1)] * 3)))
def test_cell_path_inverse(cell):
    d, ix, iy, iz = cell
    path = cell_to_path(d, ix, iy, iz)
    assert path_to_cell(path) == cell
    center = (np.array([ix, iy, iz]) + 0.5) / (1 << d)
    assert locate(center, d) == path


def test_locate_boundary_goes_low_and_rejects_outside():
    assert locate((0.5, 0.5, 0.5), 1) == (0,)
    assert locate((0.0, 0.0, 0.0), 2) == (0, 0)
    with pytest.raises(ValueError):
        locate((1.5, 0.2, 0.2), 2)


@pytest.mark.parametrize("octant", range(8))
def test_ftb_order_respects_dominance(octant):
    order = ftb_order(octant)
    assert sorted(order) == list(range(8))
    assert order[0] == octant
    # nearer on every axis where two children differ means it must come first
    near = [bin(~(c ^ octant) & 7).count("1") for c in range(8)]
    for i, a in enumerate(order):
        for b in order[i + 1:]:
            assert not (near[b] > near[a] and (b ^ octant) & (a ^ octant) == (b ^ octant))


def test_ftb_traverse_prunes():
    v = Vlo(internal([FULL] + [EMPTY] * 7), 1)
    assert v.ftb_traverse(0) == [(), (0,), (1,), (2,), (3,), (4,), (5,), (6,), (7,)]
    assert v.ftb_traverse(0, lambda p, n: False) == [()]


def test_internal_merges_identical_children():
    assert internal([FULL] * 8).is_leaf
    assert internal([EMPTY] * 8).status == NodeStatus.DISJOINT


def test_sphere_mass_properties():
    v = Vlo.build_from_implicit(sphere_classifier((0.5, 0.5, 0.5), 0.3), 6)
    props = v.mass_properties()
    assert props["volume"] == pytest.approx(4 / 3 * np.pi * 0.3 ** 3, rel=0.03)
    assert np.allclose(props["center_of_mass"].as_array(), 0.5, atol=1e-12)
    cube = Vlo(FULL, 0).mass_properties()
    assert cube["volume"] == 1.0 and cube["surface_area"] == 6.0


def test_with_cell_and_leaf_containing():
    v = Vlo(EMPTY, 3).with_cell((7, 0), True, Mediel(blif_id=3, normal=(0, 0, 2)))
    path, node = v.leaf_containing((0.6, 0.6, 0.6))
    assert path == (7, 0) and node.payload.blif_id == 3
    assert node.payload.normal == (0.0, 0.0, 1.0)
    assert v.to_dense(2).sum() == 1


def test_mediel_offset_range():
    with pytest.raises(ValueError):
        Mediel(offset=0.75)
    assert leaf(True).status == NodeStatus.OCCUPIED
