import math

import numpy as np
import pytest

from plenoptic.render import HALF_EXTENT, OrthoCamera, ShadowQuadtree, render_orthographic
from plenoptic.vlo import EMPTY, FULL, Mediel, Vlo, leaf, sphere_classifier


def test_empty_scene_is_background():
    r = render_orthographic(Vlo(EMPTY, 0), 7, 32)
    assert not r.foreground.any()
    assert np.isinf(r.depth).all()
    assert r.stats.leaves_drawn == 0


def test_unit_cube_silhouette_and_nearest_depth():
    r = render_orthographic(Vlo(leaf(True, Mediel(blif_id=4)), 0), 7, 128)
    # the silhouette of the cube seen along a diagonal is a hexagon of area sqrt(3)
    frac = r.foreground.mean()
    assert frac == pytest.approx(math.sqrt(3) / (2 * HALF_EXTENT) ** 2, rel=0.03)
    assert set(np.unique(r.material)) == {-1, 4}
    assert np.isfinite(r.depth[r.foreground]).all()
    assert r.depth.min() == pytest.approx(2 - math.sqrt(3) / 2, abs=0.02)


@pytest.mark.parametrize("octant", [0, 3, 7])
def test_culling_preserves_image_and_saves_work(octant):
    vlo = Vlo.build_from_implicit(sphere_classifier((0.5, 0.5, 0.5), 0.35), 5)
    fast = render_orthographic(vlo, octant, 64, cull=True)
    slow = render_orthographic(vlo, octant, 64, cull=False)
    assert np.array_equal(fast.material, slow.material)
    assert np.allclose(fast.depth, slow.depth, equal_nan=True)
    assert fast.stats.nodes_visited < slow.stats.nodes_visited


def test_lod_draws_coarse_cubes():
    vlo = Vlo.build_from_implicit(sphere_classifier((0.5, 0.5, 0.5), 0.35), 6)
    fine = render_orthographic(vlo, 7, 32)
    coarse = render_orthographic(vlo, 7, 32, lod_pixels=4.0)
    assert coarse.stats.nodes_without_culling < fine.stats.nodes_without_culling
    assert (coarse.foreground | ~fine.foreground).all()


def test_camera_validation():
    with pytest.raises(ValueError):
        OrthoCamera(8, 16)
    with pytest.raises(ValueError):
        OrthoCamera(0, 0)


def test_shadow_pyramid_marks_parents_only_when_full():
    q = ShadowQuadtree(4)
    q.mark((0, 2, 0, 2), np.ones((2, 2), bool))
    assert q.levels[1][0, 0] and not q.levels[1][1, 1]
    assert not q.levels[2][0, 0]
    q.mark((0, 4, 0, 4), np.ones((4, 4), bool))
    assert q.levels[-1].all()
    assert q.region_covered((0, 4, 0, 4))


def test_full_universe_renders_everywhere_inside_hexagon():
    r = render_orthographic(Vlo(FULL, 0), 0, 16)
    assert r.foreground[8, 8]
