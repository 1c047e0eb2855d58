"""Orthographic front-to-back rendering of a volumetric octree.

The view looks along the diagonal ``-(s_x, s_y, s_z)`` of ``view_octant``
(bits set for positive axes, as for the viewer's octant). Nodes are visited
front to back; a :class:`ShadowQuadtree` over the image records which
pixels already hold an opaque hit so that hidden subtrees are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .vlo import NodeStatus, Vlo, child_offset, ftb_order

# irrational sub-pixel offsets keep pixel rays off cell edges
_JITTER_U = (math.sqrt(2.0) - 1.0) * 1e-3
_JITTER_V = (math.sqrt(3.0) - 1.0) * 1e-3
HALF_EXTENT = math.sqrt(3.0) / 2.0 + 1e-6


@dataclass(frozen=True)
class OrthoCamera:
    """Pixel-ray geometry for an octant-diagonal orthographic view."""

    view_octant: int
    resolution: int
    direction: np.ndarray = field(init=False)
    u_axis: np.ndarray = field(init=False)
    v_axis: np.ndarray = field(init=False)
    pixel: float = field(init=False)

    def __post_init__(self):
        if not 0 <= self.view_octant <= 7:
            raise ValueError("view octant must be in 0..7")
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        s = np.array([1.0 if (self.view_octant >> i) & 1 else -1.0 for i in range(3)])
        d = -s / math.sqrt(3.0)
        u = np.cross(np.array([0.0, 0.0, 1.0]), d)
        u /= np.linalg.norm(u)
        v = np.cross(d, u)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", v)
        object.__setattr__(self, "pixel", 2.0 * HALF_EXTENT / self.resolution)

    def pixel_coords(self):
        """Image-plane coordinates of pixel centers along u (columns) and v (rows)."""
        k = np.arange(self.resolution) + 0.5
        return (-HALF_EXTENT + k * self.pixel + _JITTER_U,
                -HALF_EXTENT + k * self.pixel + _JITTER_V)

    def origin_base(self) -> np.ndarray:
        return np.full(3, 0.5) - 2.0 * self.direction

    def footprint(self, lo: np.ndarray, size: float) -> Optional[tuple]:
        """Pixel rectangle ``(r0, r1, c0, c1)`` bounding the projection of a cube."""
        base = self.origin_base()
        out = []
        for ax in (self.v_axis, self.u_axis):
            p0 = float(ax @ (lo - base))
            ext = size * float(np.sum(np.abs(ax)))
            mn = p0 + size * float(np.sum(np.minimum(ax, 0.0)))
            i0 = math.floor((mn + HALF_EXTENT - 0.5 * self.pixel) / self.pixel) - 1
            i1 = math.ceil((mn + ext + HALF_EXTENT - 0.5 * self.pixel) / self.pixel) + 2
            out.append((max(i0, 0), min(i1, self.resolution)))
        (r0, r1), (c0, c1) = out
        if r0 >= r1 or c0 >= c1:
            return None
        return r0, r1, c0, c1

    def slab(self, lo: np.ndarray, size: float, rect: tuple):
        """Entry distance and hit mask of pixel rays against a cube inside ``rect``."""
        r0, r1, c0, c1 = rect
        uc, vc = self.pixel_coords()
        base = self.origin_base()
        U = uc[c0:c1][None, :]
        V = vc[r0:r1][:, None]
        t_near = np.full((r1 - r0, c1 - c0), -np.inf)
        t_far = np.full((r1 - r0, c1 - c0), np.inf)
        for k in range(3):
            o = base[k] + U * self.u_axis[k] + V * self.v_axis[k]
            inv = 1.0 / self.direction[k]
            t1 = (lo[k] - o) * inv
            t2 = (lo[k] + size - o) * inv
            t_near = np.maximum(t_near, np.minimum(t1, t2))
            t_far = np.minimum(t_far, np.maximum(t1, t2))
        return t_near, (t_near < t_far) & (t_far > 0)


class ShadowQuadtree:
    """Image-plane occupancy pyramid.

    Level 0 holds one flag per pixel; a cell at level ``k`` is set only once
    every pixel beneath it has been covered by an opaque projection.
    """

    def __init__(self, resolution: int):
        self.resolution = resolution
        self.levels = [np.zeros((resolution, resolution), dtype=bool)]
        n = resolution
        while n > 1:
            n = (n + 1) // 2
            self.levels.append(np.zeros((n, n), dtype=bool))

    @property
    def covered(self) -> np.ndarray:
        return self.levels[0]

    def mark(self, rect: tuple, mask: np.ndarray):
        r0, r1, c0, c1 = rect
        self.levels[0][r0:r1, c0:c1] |= mask
        for k in range(1, len(self.levels)):
            r0, r1, c0, c1 = r0 // 2, (r1 + 1) // 2, c0 // 2, (c1 + 1) // 2
            fine = self.levels[k - 1]
            blk = fine[2 * r0:2 * r1, 2 * c0:2 * c1]
            if blk.shape[0] % 2 or blk.shape[1] % 2:
                blk = np.pad(blk, ((0, blk.shape[0] % 2), (0, blk.shape[1] % 2)), constant_values=True)
            self.levels[k][r0:r1, c0:c1] = blk.reshape(blk.shape[0] // 2, 2, blk.shape[1] // 2, 2).all(axis=(1, 3))

    def region_covered(self, rect: tuple) -> bool:
        """Conservative test using the coarsest level whose cells tile ``rect``."""
        r0, r1, c0, c1 = rect
        span = max(r1 - r0, c1 - c0)
        k = min(max(int(math.log2(span)) - 1, 0), len(self.levels) - 1)
        s = 1 << k
        return bool(self.levels[k][r0 // s:(r1 + s - 1) // s, c0 // s:(c1 + s - 1) // s].all())

    def mask_covered(self, rect: tuple, mask: np.ndarray) -> bool:
        r0, r1, c0, c1 = rect
        return bool(np.all(self.levels[0][r0:r1, c0:c1][mask]))


@dataclass
class RenderStats:
    nodes_visited: int = 0
    nodes_culled: int = 0
    nodes_without_culling: int = 0
    leaves_drawn: int = 0


@dataclass
class RenderResult:
    depth: np.ndarray
    material: np.ndarray
    stats: RenderStats

    @property
    def foreground(self) -> np.ndarray:
        return self.material >= 0


def render_orthographic(p, view_octant: int, resolution: int, cull: bool = True,
                        lod_pixels: Optional[float] = None) -> RenderResult:
    """Render nearest opaque hits (ray distance and material id, -1 for background).

    ``lod_pixels`` stops descent once a subtree's projection is smaller than
    that many pixels across; the subtree is then drawn as a solid cube.
    """
    vlo: Vlo = p.vlo if hasattr(p, "vlo") else p
    cam = OrthoCamera(view_octant, resolution)
    depth = np.full((resolution, resolution), np.inf)
    material = np.full((resolution, resolution), -1, dtype=np.int64)
    shadow = ShadowQuadtree(resolution)
    stats = RenderStats(nodes_without_culling=_count_nodes(vlo.root, 1.0, cam, lod_pixels))
    order = ftb_order(view_octant)
    stack = [(vlo.root, np.zeros(3), 1.0)]
    while stack:
        node, lo, size = stack.pop()
        stats.nodes_visited += 1
        if node.status == NodeStatus.DISJOINT:
            continue
        rect = cam.footprint(lo, size)
        if rect is None:
            continue
        if cull and shadow.region_covered(rect):
            stats.nodes_culled += 1
            continue
        coarse = lod_pixels is not None and size * math.sqrt(2.0) / cam.pixel < lod_pixels
        if node.is_leaf or coarse:
            t, mask = cam.slab(lo, size, rect)
            if not mask.any():
                continue
            r0, r1, c0, c1 = rect
            fresh = mask & ~shadow.covered[r0:r1, c0:c1]
            if fresh.any():
                depth[r0:r1, c0:c1][fresh] = t[fresh]
                material[r0:r1, c0:c1][fresh] = _material_id(node)
                shadow.mark(rect, mask)
                stats.leaves_drawn += 1
            continue
        if cull:
            _, mask = cam.slab(lo, size, rect)
            if not mask.any() or shadow.mask_covered(rect, mask):
                stats.nodes_culled += 1
                continue
        half = size / 2
        for ci in reversed(order):
            off = np.array(child_offset(ci), dtype=float)
            stack.append((node.children[ci], lo + off * half, half))
    return RenderResult(depth, material, stats)


def _material_id(node) -> int:
    if node.is_leaf:
        return node.payload.blif_id if node.payload is not None else 0
    for c in node.children:
        if c.occupied_leaves:
            return _material_id(c)
    return 0


def _count_nodes(node, size, cam, lod_pixels) -> int:
    if node.is_leaf:
        return 1
    if lod_pixels is not None and size * math.sqrt(2.0) / cam.pixel < lod_pixels:
        return 1
    return 1 + sum(_count_nodes(c, size / 2, cam, lod_pixels) for c in node.children)
