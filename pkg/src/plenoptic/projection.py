"""Projection of saels onto the volumetric octree with shift/add span updates.

A sael from a point ``c`` is the pyramid ``c + t * (sigma e_a + s_b u e_b + s_c v e_c)``
with ``t >= 0`` and slope magnitudes ``u, v`` in the sael's spans. For the
current octree node, the projection plane is perpendicular to the sael's
axis ``a`` through the node center. On that plane each bounding plane of the
sael crosses at a span endpoint; endpoints are held relative to the node
center together with their change per half-edge step along ``a``. Descending
into a child (a PUSH) then costs one shift and a few adds per endpoint.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .geometry import FRAC_BITS, ONE, FixedPointError, _check_range, shr_exact, to_fixed
from .sao import SaelId, solid_angle, top_frame
from .vlo import NodeStatus, Vlo, cell_bounds, child_offset, ftb_order, locate

DEFAULT_REFINE_LEVELS = 3


def _mul_fixed(x: int, y: int) -> int:
    """Exact fixed-point product; raises if the result is not representable."""
    return _check_range(shr_exact(x * y, FRAC_BITS))


def sael_spans(sid: SaelId) -> tuple:
    """Fixed-point slope-magnitude spans ``((lo_b, hi_b), (lo_c, hi_c))``."""
    n = 1 << (sid.depth - 1)
    if n > ONE:
        raise FixedPointError("sael too deep for the fixed-point format")
    step = ONE // n
    iu, iv = sid.grid_index()
    return (iu * step, (iu + 1) * step), (iv * step, (iv + 1) * step)


class ProjectionState:
    """Sael projection onto one octree node.

    ``rel[k]`` and ``step[k]`` are indexed ``[lo_b, hi_b, lo_c, hi_c]``: the
    span endpoint on the projection plane (relative to the node center) and
    its change when the plane moves by half an edge along ``sigma * e_a``.
    """

    __slots__ = ("axis", "faces", "sigma", "face_signs", "center", "edge", "depth0",
                 "rel", "step", "path")

    def __init__(self, axis, faces, sigma, face_signs, center, edge, depth0, rel, step, path):
        self.axis = axis
        self.faces = faces
        self.sigma = sigma
        self.face_signs = face_signs
        self.center = center
        self.edge = edge
        self.depth0 = depth0
        self.rel = rel
        self.step = step
        self.path = path

    @classmethod
    def start(cls, source_center, top: int, spans) -> "ProjectionState":
        """State at the universe root for a sael with the given fixed-point spans."""
        c = tuple(int(v) for v in source_center)
        a, b, cc, sa, sb, sc = top_frame(top)
        sigma = int(sa)
        signs = (int(sb), int(sc))
        m = (ONE >> 1,) * 3
        d0 = sigma * (m[a] - c[a])
        rel = []
        step = []
        for (lo, hi), e, s in zip(spans, (b, cc), signs):
            for slope in (lo, hi):
                rel.append(_check_range(c[e] - m[e] + s * _mul_fixed(slope, d0)))
                step.append(s * shr_exact(slope, 1))
        return cls(a, (b, cc), sigma, signs, m, ONE, d0, tuple(rel), tuple(step), ())

    @property
    def plane(self) -> int:
        """Fixed-point position of the projection plane along the sael axis."""
        return self.center[self.axis]

    def spans(self) -> tuple:
        """Absolute endpoints ``((lo_b, hi_b), (lo_c, hi_c))`` on the projection plane."""
        mb, mc = self.center[self.faces[0]], self.center[self.faces[1]]
        r = self.rel
        return (mb + r[0], mb + r[1]), (mc + r[2], mc + r[3])

    def push(self, ci: int) -> "ProjectionState":
        off = child_offset(ci)
        q = shr_exact(self.edge, 2)
        sgn = tuple(1 if o else -1 for o in off)
        center = tuple(_check_range(m + s * q) for m, s in zip(self.center, sgn))
        along = self.sigma * sgn[self.axis]
        d0 = _check_range(self.depth0 + along * q)
        half_steps = tuple(shr_exact(s, 1) for s in self.step)
        rel = []
        for k in range(4):
            e_sign = sgn[self.faces[k >> 1]]
            rel.append(_check_range(self.rel[k] - e_sign * q + along * half_steps[k]))
        return ProjectionState(self.axis, self.faces, self.sigma, self.face_signs, center,
                               self.edge >> 1, d0, tuple(rel), half_steps, self.path + (ci,))

    def _edges(self):
        """Per face axis: (lower edge (rel, step), upper edge (rel, step))."""
        out = []
        for f in range(2):
            lo = (self.rel[2 * f], self.step[2 * f])
            hi = (self.rel[2 * f + 1], self.step[2 * f + 1])
            out.append((lo, hi) if self.face_signs[f] > 0 else (hi, lo))
        return out

    def intersects(self) -> bool:
        """Exact test: does the open sael pyramid meet the open node cell?

        With the plane offset ``tau * h`` (``tau`` in (-1, 1)), every
        condition is linear in ``tau``; the rational bounds are compared by
        cross-multiplication.
        """
        h = self.edge >> 1
        cons = [(1, 1), (1, -1), (self.depth0, h)]
        for (l0, l1), (u0, u1) in self._edges():
            cons.append((h - l0, -l1))
            cons.append((u0 + h, u1))
        return _feasible(cons)

    def span_width(self) -> int:
        return max(abs(self.rel[1] - self.rel[0]), abs(self.rel[3] - self.rel[2]))


def _feasible(cons) -> bool:
    """Is there a ``tau`` with ``alpha + beta * tau > 0`` for every constraint?"""
    lo_n, lo_d = None, 1
    hi_n, hi_d = None, 1
    for alpha, beta in cons:
        if beta == 0:
            if alpha <= 0:
                return False
        elif beta > 0:
            n, d = -alpha, beta
            if lo_n is None or n * lo_d > lo_n * d:
                lo_n, lo_d = n, d
        else:
            n, d = alpha, -beta
            if hi_n is None or n * hi_d < hi_n * d:
                hi_n, hi_d = n, d
    if lo_n is None or hi_n is None:
        return True
    return lo_n * hi_d < hi_n * lo_d


# -- coverage -------------------------------------------------------------------


def _hull(points):
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _clip(poly, axis, bound, keep_below):
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        pin = p[axis] <= bound if keep_below else p[axis] >= bound
        qin = q[axis] <= bound if keep_below else q[axis] >= bound
        if pin:
            out.append(p)
        if pin != qin:
            t = (bound - p[axis]) / (q[axis] - p[axis])
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _area(poly):
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2


def covered_fraction(source_center, sid: SaelId, path) -> float:
    """Fraction of the sael's solid angle covered by the cell's silhouette.

    The silhouette is clipped to the sael exactly in slope coordinates; its
    solid angle uses the density at the clipped polygon's centroid.
    """
    a, b, c, sa, sb, sc = top_frame(sid.top)
    lo, size = cell_bounds(path)
    src = np.asarray(source_center, dtype=float)
    corners = lo + size * np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    t = sa * (corners[:, a] - src[a])
    if np.any(t <= 0):
        return 1.0
    u = sb * (corners[:, b] - src[b]) / t
    v = sc * (corners[:, c] - src[c]) / t
    poly = _hull(list(zip(u.tolist(), v.tolist())))
    n = 1 << (sid.depth - 1)
    iu, iv = sid.grid_index()
    u0, u1, v0, v1 = iu / n, (iu + 1) / n, iv / n, (iv + 1) / n
    for axis, bound, below in ((0, u0, False), (0, u1, True), (1, v0, False), (1, v1, True)):
        if len(poly) < 3:
            return 0.0
        poly = _clip(poly, axis, bound, below)
    if len(poly) < 3:
        return 0.0
    # weight the slope-plane area by the solid-angle density at its centroid
    uc = sum(q[0] for q in poly) / len(poly)
    vc = sum(q[1] for q in poly) / len(poly)
    omega = _area(poly) * (1.0 + uc * uc + vc * vc) ** -1.5
    return min(1.0, omega / solid_angle(sid))


# -- FTB search -----------------------------------------------------------------


@dataclass(frozen=True)
class Hit:
    path: tuple
    covered: float
    sael: SaelId
    span_width: int
    edge: int


def iter_hits(vlo: Vlo, source_center, sid: SaelId, exclude: Optional[tuple] = None,
              interacting=None) -> Iterator[Hit]:
    """Interacting leaves met by the sael, in front-to-back order.

    ``interacting(path, node)`` decides which occupied leaves count; by
    default every occupied leaf does. ``exclude`` names a leaf to pass
    through (normally the one holding the source point).
    """
    c_fixed = tuple(to_fixed(float(v)) for v in source_center)
    state = ProjectionState.start(c_fixed, sid.top, sael_spans(sid))
    order = ftb_order(sid.octant ^ 7)
    stack = [(vlo.root, state)]
    while stack:
        node, st = stack.pop()
        if node.status == NodeStatus.DISJOINT:
            continue
        if not st.intersects():
            continue
        if node.is_leaf:
            if st.path == exclude:
                continue
            if interacting is not None and not interacting(st.path, node):
                continue
            yield Hit(st.path, covered_fraction(source_center, sid, st.path), sid,
                      st.span_width(), st.edge)
            continue
        for ci in reversed(order):
            stack.append((node.children[ci], st.push(ci)))


def project_sael(p, source, s: SaelId) -> Optional[Hit]:
    """Nearest interacting node met by sael ``s`` of ``source`` (``None`` if it leaves the universe)."""
    vlo = p.vlo if hasattr(p, "vlo") else p
    exclude = _source_leaf(vlo, source.center)
    return next(iter_hits(vlo, source.center, s, exclude), None)


def _source_leaf(vlo: Vlo, center) -> Optional[tuple]:
    path, node = vlo.leaf_containing(center)
    return path if node.status == NodeStatus.OCCUPIED else None


def gather_terms(vlo: Vlo, center, sid: SaelId, exclude=None, max_depth: Optional[int] = None,
                 interacting=None) -> tuple:
    """Linear gather weights for the incident radiance of sael ``sid`` at ``center``.

    Returns ``(hits, env)`` where ``hits`` is a list of
    ``(weight, source_path, exitant_sael)`` and ``env`` a list of
    ``(weight, sael)`` for radiance arriving from the far field. Saels whose
    projected span is more than twice a hit node's edge are subdivided until
    they match (``max_depth`` bounds the subdivision).
    """
    if max_depth is None:
        max_depth = sid.depth + DEFAULT_REFINE_LEVELS
    remaining = 1.0
    hits = []
    for hit in iter_hits(vlo, center, sid, exclude, interacting):
        if hit.span_width > 2 * hit.edge and sid.depth < max_depth:
            return _refined_terms(vlo, center, sid, exclude, max_depth, interacting)
        f = min(hit.covered, remaining)
        if f <= 0:
            continue
        hits.append((f, hit.path, _antipode_id(sid)))
        remaining -= f
        if remaining <= 1e-12:
            return hits, []
    return hits, ([(remaining, sid)] if remaining > 0 else [])


def _antipode_id(sid: SaelId) -> SaelId:
    return SaelId(3 * (sid.octant ^ 7) + sid.axis, sid.path)


def _refined_terms(vlo, center, sid, exclude, max_depth, interacting):
    total = solid_angle(sid)
    hits, env = [], []
    for c in range(4):
        child = sid.child(c)
        w = solid_angle(child) / total
        h, e = gather_terms(vlo, center, child, exclude, max_depth, interacting)
        hits.extend((w * f, path, s) for f, path, s in h)
        env.extend((w * f, s) for f, s in e)
    return hits, env


def source_leaf_path(vlo: Vlo, center) -> tuple:
    """Path of the leaf containing ``center`` at the tree's resolution."""
    return locate(center, vlo.depth())
