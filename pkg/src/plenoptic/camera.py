"""Pinhole polarimetric cameras looking into a plenoptic octree."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import frame_angle, malus_intensity, normalize, reference_x, stokes_images_from_analyzer, stokes_rotation
from .sao import locate_indices
from .vlo import Vlo, cell_bounds

ANALYZER_ANGLES = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)


@dataclass(frozen=True)
class PinholeCamera:
    position: tuple
    look_at: tuple
    up: tuple = (0.0, 0.0, 1.0)
    fov_deg: float = 40.0
    resolution: int = 32
    analyzer_angles: tuple = ANALYZER_ANGLES

    def basis(self):
        f = normalize(np.subtract(self.look_at, self.position))
        r = np.cross(f, self.up)
        if np.linalg.norm(r) < 1e-9:
            r = np.cross(f, (0.0, 1.0, 0.0))
        r = normalize(r)
        d = np.cross(f, r)
        return f, r, d

    def rays(self):
        """Per-pixel unit directions ``(H, W, 3)`` and the image x axis per pixel."""
        f, r, d = self.basis()
        n = self.resolution
        half = math.tan(math.radians(self.fov_deg) / 2)
        s = (np.arange(n) + 0.5) / n * 2 - 1
        x = s[None, :] * half
        y = s[:, None] * half
        dirs = f + x[..., None] * r + y[..., None] * d
        return normalize(dirs), r


@dataclass(frozen=True)
class PolarimeterCapture:
    intensities: np.ndarray
    stokes: np.ndarray
    rendered_stokes: np.ndarray
    distance: np.ndarray


def cast_rays(vlo: Vlo, origins: np.ndarray, dirs: np.ndarray):
    """Nearest occupied leaf per ray: distances (inf on miss) and leaf index (-1 on miss).

    Returns ``(t, index, leaves)`` with ``leaves`` the occupied ``(path, node)`` list.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    o = np.broadcast_to(o, d.shape)
    leaves = vlo.occupied_leaves()
    best = np.full(len(d), np.inf)
    idx = np.full(len(d), -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        for k, (path, _) in enumerate(leaves):
            lo, size = cell_bounds(path)
            t1 = (lo - o) * inv
            t2 = (lo + size - o) * inv
            tn = np.nanmax(np.minimum(t1, t2), axis=1)
            tf = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (tn < tf) & (tf > 0) & (tn < best)
            best[hit] = np.maximum(tn[hit], 0.0)
            idx[hit] = k
    return best, idx, leaves


def simulate_polarimeter(scene, camera: PinholeCamera, sao_depth: int = None):
    """Analyzer intensity images ``(4, H, W)`` and the Stokes image ``(H, W, 3)`` derived from them.

    Each pixel shows the exitant Stokes radiance of the first surfel hit,
    toward the camera, or the environment behind it; Stokes vectors are
    re-expressed with the image x axis as reference before analysis.
    """
    depth = sao_depth or scene.sao_depth
    dirs, right = camera.rays()
    h, w, _ = dirs.shape
    flat = dirs.reshape(-1, 3)
    t, idx, leaves = cast_rays(scene.vlo, np.asarray(camera.position, dtype=float), flat)
    stokes = np.zeros((len(flat), 3))
    ch = scene.channels
    env = scene.environment_values() if scene.environment is not None else None
    out_dir = -flat
    sael = locate_indices(out_dir, depth)
    for k, (path, _) in enumerate(leaves):
        sel = np.nonzero(idx == k)[0]
        if len(sel) == 0 or path not in scene.exitant:
            continue
        vals = scene.exitant[path].values_at_depth(depth)
        stokes[sel, :ch] = vals[sael[sel]]
    miss = np.nonzero(idx < 0)[0]
    if env is not None and len(miss):
        stokes[miss, :ch] = env[locate_indices(flat[miss], depth)]
    # light travels along -ray toward the camera
    k = out_dir
    x_img = normalize(np.broadcast_to(right, k.shape) - np.sum(right * k, axis=1, keepdims=True) * k)
    rot = stokes_rotation(frame_angle(reference_x(k), x_img, k))
    stokes = np.einsum("nij,nj->ni", rot, stokes)
    img = stokes.reshape(h, w, 3)
    intens = np.stack([malus_intensity(img, a) for a in camera.analyzer_angles])
    if tuple(camera.analyzer_angles) == ANALYZER_ANGLES:
        recon = stokes_images_from_analyzer(np.maximum(intens, 0.0))
    else:
        recon = img.copy()
    return PolarimeterCapture(intens, recon, img, t.reshape(h, w))
