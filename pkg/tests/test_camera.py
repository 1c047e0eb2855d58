import numpy as np
import pytest

from plenoptic.camera import PinholeCamera, cast_rays, simulate_polarimeter
from plenoptic.physics import Brdf, OpaqueSurfelBlif
from plenoptic.sao import INCIDENT, Sao, sael_table
from plenoptic.transport import PlenopticOctree, solve_transport
from plenoptic.vlo import Mediel, Vlo, cell_to_path


def test_cast_rays_hits_nearest_cell():
    v = Vlo().with_cell(cell_to_path(2, 1, 1, 1), True).with_cell(cell_to_path(2, 1, 1, 3), True)
    o = np.array([[0.375, 0.375, 0.0], [0.375, 0.375, 1.0], [0.9, 0.9, 0.0]])
    d = np.array([[0, 0, 1.0], [0, 0, -1.0], [0, 0, 1.0]])
    t, idx, leaves = cast_rays(v, o, d)
    assert t[0] == pytest.approx(0.25) and t[1] == pytest.approx(0.0)
    assert np.isinf(t[2]) and idx[2] == -1
    assert leaves[idx[0]][0] == cell_to_path(2, 1, 1, 1)


def test_rays_are_unit_and_centered():
    cam = PinholeCamera((0.5, 0.5, 2.0), (0.5, 0.5, 0.5), up=(0, 1, 0), resolution=8)
    dirs, right = cam.rays()
    assert dirs.shape == (8, 8, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)
    assert np.allclose(dirs.mean(axis=(0, 1)) / np.linalg.norm(dirs.mean(axis=(0, 1))), [0, 0, -1])
    assert abs(right @ [0, 0, 1.0]) < 1e-12


def test_polarimeter_sees_surfel_and_recovers_stokes():
    depth = 3
    sky = Sao(kind=INCIDENT, channels=3)
    vals = np.zeros((len(sael_table(depth)), 3))
    vals[:, 0] = 1.0
    sky.set_uniform(depth, vals)
    sp = cell_to_path(2, 1, 1, 0)
    p = PlenopticOctree(Vlo().with_cell(sp, True, Mediel(1, (0, 0, 1))),
                        {1: OpaqueSurfelBlif(Brdf(0.05, 0.2, 1.5, 1.0), polarimetric=True)},
                        sao_depth=depth, channels=3, environment=sky)
    solve_transport(p, 1)
    cam = PinholeCamera((0.95, 0.375, 0.6), (0.375, 0.375, 0.125), resolution=16, fov_deg=30)
    cap = simulate_polarimeter(p, cam)
    hit = np.isfinite(cap.distance)
    assert hit.any() and (~hit).any()
    assert np.allclose(cap.stokes, cap.rendered_stokes, atol=1e-12)
    assert np.allclose(cap.stokes[~hit], [1.0, 0.0, 0.0])
    s = cap.stokes[hit]
    assert np.all(s[:, 0] >= np.hypot(s[:, 1], s[:, 2]) - 1e-12)
    assert np.hypot(s[:, 1], s[:, 2]).max() > 0
