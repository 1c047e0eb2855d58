"""Solid-angle octree (SAO): a hierarchy of direction cells around a point.

Top saels are indexed ``top = 3 * octant + axis``: the octant's bits give the
signs of x, y, z and ``axis`` is the universe face the sael pierces. Within a
top sael, directions are parameterized by slope magnitudes
``u = |d_b| / |d_a|`` and ``v = |d_c| / |d_a|`` with ``b = (axis + 1) % 3``
and ``c = (axis + 2) % 3``; both lie in [0, 1]. A child index sets bit 0 for
the upper half in ``u`` and bit 1 for the upper half in ``v``. The antipode of
a sael keeps the path and flips the octant.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .geometry import ONE, FixedCoord, push_halve

MAGIC = b"SAO1"
FORMAT_VERSION = 1
N_TOP = 24
DEFAULT_MAX_DEPTH = 8
INCIDENT = "incident"
EXITANT = "exitant"


@dataclass(frozen=True, order=True)
class SaelId:
    top: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= self.top < N_TOP:
            raise ValueError(f"top sael index must be in 0..23, got {self.top}")
        if any(not 0 <= c <= 3 for c in self.path):
            raise ValueError("sael child indices must be in 0..3")
        object.__setattr__(self, "path", tuple(self.path))

    @property
    def depth(self) -> int:
        return len(self.path) + 1

    @property
    def octant(self) -> int:
        return self.top // 3

    @property
    def axis(self) -> int:
        return self.top % 3

    def child(self, c: int) -> "SaelId":
        return SaelId(self.top, self.path + (c,))

    def parent(self) -> Optional["SaelId"]:
        return SaelId(self.top, self.path[:-1]) if self.path else None

    def grid_index(self) -> tuple:
        """Integer slope-cell coordinates ``(iu, iv)`` at this depth."""
        iu = iv = 0
        for c in self.path:
            iu = (iu << 1) | (c & 1)
            iv = (iv << 1) | (c >> 1)
        return iu, iv

    def index(self) -> int:
        """Position among all saels of the same depth (top-major, preorder)."""
        k = 0
        for c in self.path:
            k = 4 * k + c
        return self.top * 4 ** len(self.path) + k

    @classmethod
    def from_index(cls, index: int, depth: int) -> "SaelId":
        per_top = 4 ** (depth - 1)
        top, k = divmod(index, per_top)
        path = []
        for _ in range(depth - 1):
            k, c = divmod(k, 4)
            path.append(c)
        return cls(top, tuple(reversed(path)))


def antipode(sid: SaelId) -> SaelId:
    """The sael diametrically opposite ``sid`` through the center."""
    return SaelId(3 * (sid.octant ^ 7) + sid.axis, sid.path)


def top_frame(top: int) -> tuple:
    """``(a, b, c, sign_a, sign_b, sign_c)`` for a top sael."""
    octant, a = divmod(top, 3)
    b, c = (a + 1) % 3, (a + 2) % 3
    sign = [1.0 if (octant >> i) & 1 else -1.0 for i in range(3)]
    return a, b, c, sign[a], sign[b], sign[c]


def slope_bounds(sid: SaelId) -> tuple:
    """Slope-magnitude rectangle ``(u0, u1, v0, v1)`` of a sael."""
    n = 1 << (sid.depth - 1)
    iu, iv = sid.grid_index()
    return iu / n, (iu + 1) / n, iv / n, (iv + 1) / n


def slopes_to_direction(top: int, u, v) -> np.ndarray:
    a, b, c, sa, sb, sc = top_frame(top)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.zeros(np.broadcast(u, v).shape + (3,))
    d[..., a] = sa
    d[..., b] = sb * u
    d[..., c] = sc * v
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def center_direction(sid: SaelId) -> np.ndarray:
    u0, u1, v0, v1 = slope_bounds(sid)
    return slopes_to_direction(sid.top, (u0 + u1) / 2, (v0 + v1) / 2)


def corner_directions(sid: SaelId) -> np.ndarray:
    """The four edge rays in counter-clockwise slope order."""
    u0, u1, v0, v1 = slope_bounds(sid)
    return slopes_to_direction(sid.top, np.array([u0, u1, u1, u0]), np.array([v0, v0, v1, v1]))


def _rect_corner_angle(u, v):
    return np.arctan(u * v / np.sqrt(1.0 + u * u + v * v))


def rect_solid_angle(u0, u1, v0, v1):
    """Solid angle of the pyramid over ``[u0,u1] x [v0,v1]`` on a unit-distance plane."""
    return (_rect_corner_angle(u1, v1) - _rect_corner_angle(u0, v1)
            - _rect_corner_angle(u1, v0) + _rect_corner_angle(u0, v0))


@lru_cache(maxsize=None)
def _weight_cached(depth: int, iu: int, iv: int) -> float:
    n = 1 << (depth - 1)
    return float(rect_solid_angle(iu / n, (iu + 1) / n, iv / n, (iv + 1) / n))


def solid_angle(sid: SaelId) -> float:
    """Solid angle (sr) subtended by a sael; identical for all 24 tops by symmetry."""
    return _weight_cached(sid.depth, *sid.grid_index())


# -- whole-depth tables --------------------------------------------------------


@dataclass(frozen=True)
class SaelTable:
    """All saels of one uniform depth, in :meth:`SaelId.index` order."""

    depth: int
    tops: np.ndarray
    iu: np.ndarray
    iv: np.ndarray
    directions: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.tops)

    def antipode_index(self) -> np.ndarray:
        per_top = 4 ** (self.depth - 1)
        idx = np.arange(len(self))
        top, rest = np.divmod(idx, per_top)
        octant, axis = np.divmod(top, 3)
        return (3 * (octant ^ 7) + axis) * per_top + rest


@lru_cache(maxsize=16)
def sael_table(depth: int) -> SaelTable:
    if depth < 1:
        raise ValueError("sael depth starts at 1")
    per_top = 4 ** (depth - 1)
    k = np.arange(per_top)
    iu = np.zeros(per_top, dtype=np.int64)
    iv = np.zeros(per_top, dtype=np.int64)
    for level in range(depth - 1):
        digit = (k >> (2 * (depth - 2 - level))) & 3
        iu = (iu << 1) | (digit & 1)
        iv = (iv << 1) | (digit >> 1)
    n = 1 << (depth - 1)
    w = rect_solid_angle(iu / n, (iu + 1) / n, iv / n, (iv + 1) / n)
    uc, vc = (iu + 0.5) / n, (iv + 0.5) / n
    dirs = np.concatenate([slopes_to_direction(t, uc, vc) for t in range(N_TOP)])
    tops = np.repeat(np.arange(N_TOP), per_top)
    table = SaelTable(depth, tops, np.tile(iu, N_TOP), np.tile(iv, N_TOP), dirs, np.tile(w, N_TOP))
    for arr in (table.tops, table.iu, table.iv, table.directions, table.weights):
        arr.setflags(write=False)
    return table


def locate_indices(dirs: np.ndarray, depth: int) -> np.ndarray:
    """Index (at ``depth``) of the sael containing each direction.

    Directions on cell boundaries resolve to the lowest containing index.
    """
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    ad = np.abs(d)
    axis = np.argmax(ad, axis=1)
    octant = (d[:, 0] > 0).astype(np.int64) | ((d[:, 1] > 0) << 1) | ((d[:, 2] > 0) << 2)
    rows = np.arange(len(d))
    major = ad[rows, axis]
    u = ad[rows, (axis + 1) % 3] / major
    v = ad[rows, (axis + 2) % 3] / major
    n = 1 << (depth - 1)
    iu = np.clip(np.ceil(u * n).astype(np.int64) - 1, 0, n - 1)
    iv = np.clip(np.ceil(v * n).astype(np.int64) - 1, 0, n - 1)
    k = np.zeros(len(d), dtype=np.int64)
    for level in range(depth - 2, -1, -1):
        k = 4 * k + (((iu >> level) & 1) | (((iv >> level) & 1) << 1))
    return (3 * octant + axis) * (4 ** (depth - 1)) + k


def locate_sael(d, depth: int) -> SaelId:
    return SaelId.from_index(int(locate_indices(np.asarray(d, dtype=float)[None], depth)[0]), depth)


# -- saels with fixed-point spans ---------------------------------------------


@dataclass(frozen=True)
class Sael:
    """A sael with its face spans and payload.

    ``span_l``/``span_u`` hold the lower and upper slope magnitudes along the
    two face axes ``(b, c)`` as fixed-point values.
    """

    id: SaelId
    span_l: tuple
    span_u: tuple
    weight: float
    radiance: np.ndarray = field(default_factory=lambda: np.zeros(1))


def top_saels(channels: int = 1) -> list:
    """The 24 top saels with spans initialized to lower 0 and upper 1."""
    zero, one = FixedCoord(0), FixedCoord(ONE)
    return [Sael(SaelId(t), (zero, zero), (one, one), solid_angle(SaelId(t)), np.zeros(channels))
            for t in range(N_TOP)]


def subdivide(s: Sael, max_depth: int = DEFAULT_MAX_DEPTH) -> list:
    """Four child saels; each face span splits at its exact midpoint."""
    if s.id.depth >= max_depth:
        raise ValueError(f"sael depth {s.id.depth} already at the maximum {max_depth}")
    mids = tuple(push_halve(FixedCoord(u.value - l.value), l) for l, u in zip(s.span_l, s.span_u))
    out = []
    for c in range(4):
        lo = list(s.span_l)
        hi = list(s.span_u)
        for ax in range(2):
            if (c >> ax) & 1:
                lo[ax] = mids[ax]
            else:
                hi[ax] = mids[ax]
        cid = s.id.child(c)
        out.append(Sael(cid, tuple(lo), tuple(hi), solid_angle(cid), s.radiance.copy()))
    return out


# -- the tree -------------------------------------------------------------------


class _Rec:
    __slots__ = ("value", "samples", "has_children")

    def __init__(self, value, samples=0.0, has_children=False):
        self.value = value
        self.samples = samples
        self.has_children = has_children


class Sao:
    """Sparse solid-angle octree with solid-angle-weighted parent summaries.

    Radiance payloads are mean radiance over each sael. Unset saels read as
    zero. ``channels`` is 1 for scalar radiance and 3 for Stokes ``[S0,S1,S2]``.
    """

    def __init__(self, center=(0.5, 0.5, 0.5), kind: str = EXITANT, channels: int = 1,
                 max_depth: int = DEFAULT_MAX_DEPTH):
        if kind not in (INCIDENT, EXITANT):
            raise ValueError(f"kind must be '{INCIDENT}' or '{EXITANT}'")
        if channels not in (1, 3):
            raise ValueError("channels must be 1 (scalar) or 3 (Stokes)")
        self._center = tuple(float(c) for c in center)
        self.kind = kind
        self.channels = channels
        self.max_depth = max_depth
        self._nodes: dict = {}

    @property
    def center(self) -> tuple:
        return self._center

    def __len__(self):
        return len(self._nodes)

    def depth(self) -> int:
        """Deepest stored level (1 for an empty tree)."""
        return max((len(p) + 1 for _, p in self._nodes), default=1)

    def copy(self) -> "Sao":
        other = Sao(self._center, self.kind, self.channels, self.max_depth)
        other._nodes = {k: _Rec(r.value.copy(), r.samples, r.has_children) for k, r in self._nodes.items()}
        return other

    def _zero(self):
        return np.zeros(self.channels)

    def _as_radiance(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if hasattr(r, "shape") and r.shape != (self.channels,):
            raise ValueError(f"radiance must have {self.channels} channel(s)")
        return r

    # tree maintenance -------------------------------------------------------

    def _ensure(self, key: tuple) -> _Rec:
        """Create the record for ``key`` and its ancestors, pushing samples down."""
        top, path = key
        rec = self._nodes.get((top, ()))
        if rec is None:
            rec = self._nodes[(top, ())] = _Rec(self._zero())
        for i in range(len(path)):
            parent_key = (top, path[:i])
            parent = self._nodes[parent_key]
            if not parent.has_children:
                parent.has_children = True
                if parent.samples > 0 or np.any(parent.value != 0):
                    for c in range(4):
                        self._nodes[(top, path[:i] + (c,))] = _Rec(parent.value.copy(), parent.samples)
            child_key = (top, path[:i + 1])
            rec = self._nodes.get(child_key)
            if rec is None:
                rec = self._nodes[child_key] = _Rec(self._zero())
        return rec

    def _refresh_ancestors(self, key: tuple):
        top, path = key
        for i in range(len(path), 0, -1):
            pkey = (top, path[:i - 1])
            num = self._zero()
            den = 0.0
            for c in range(4):
                ck = (top, pkey[1] + (c,))
                rec = self._nodes.get(ck)
                if rec is not None:
                    w = solid_angle(SaelId(top, ck[1]))
                    num = num + w * rec.value
                    den += w
            self._nodes[pkey].value = num / den if den > 0 else self._zero()

    def _apply(self, key: tuple, fn):
        rec = self._ensure(key)
        if rec.has_children:
            for c in range(4):
                self._apply((key[0], key[1] + (c,)), fn)
            return
        fn(rec)
        self._refresh_ancestors(key)

    # public API ---------------------------------------------------------------

    def splat(self, d, r, depth: int, weight: float = 1.0):
        """Accumulate a radiance sample (weighted running mean) into the depth-``depth`` sael of ``d``."""
        if weight <= 0:
            raise ValueError("splat weight must be positive")
        if not 1 <= depth <= self.max_depth:
            raise ValueError(f"depth must be in 1..{self.max_depth}")
        r = self._as_radiance(r)
        sid = locate_sael(d, depth)

        def fn(rec):
            total = rec.samples + weight
            rec.value = (rec.value * rec.samples + weight * r) / total
            rec.samples = total

        self._apply((sid.top, sid.path), fn)

    def deposit(self, sid: SaelId, r):
        """Add radiance to a sael (additive; used by light transport)."""
        r = self._as_radiance(r)

        def fn(rec):
            rec.value = rec.value + r

        self._apply((sid.top, sid.path), fn)

    def set_value(self, sid: SaelId, r):
        r = self._as_radiance(r)

        def fn(rec):
            rec.value = r.copy()

        self._apply((sid.top, sid.path), fn)

    def value(self, sid: SaelId, fill: str = "zero") -> np.ndarray:
        """Radiance of ``sid`` read through stored ancestors (see :meth:`lookup`)."""
        return self._lookup_value(sid, fill)[0]

    def get(self, sid: SaelId) -> Optional[np.ndarray]:
        rec = self._nodes.get((sid.top, sid.path))
        return None if rec is None else rec.value.copy()

    def lookup(self, d, depth: int, fill: str = "zero") -> Sael:
        """The deepest stored sael containing ``d`` (or the unset depth cell).

        With ``fill="parent"``, an unset cell reads its nearest stored
        ancestor's summary instead of zero.
        """
        sid = locate_sael(d, depth)
        value, found = self._lookup_value(sid, fill)
        n_l, n_u = _fixed_spans(found)
        return Sael(found, n_l, n_u, solid_angle(found), value)

    def _lookup_value(self, sid: SaelId, fill: str):
        rec = self._nodes.get((sid.top, ()))
        if rec is None:
            return (self.root_summary() if fill == "parent" else self._zero()), sid
        for i in range(len(sid.path)):
            if not rec.has_children:
                return rec.value.copy(), SaelId(sid.top, sid.path[:i])
            child = self._nodes.get((sid.top, sid.path[:i + 1]))
            if child is None:
                return (rec.value.copy() if fill == "parent" else self._zero()), sid
            rec = child
        return rec.value.copy(), sid

    def root_summary(self) -> np.ndarray:
        num = self._zero()
        den = 0.0
        w = solid_angle(SaelId(0))
        for t in range(N_TOP):
            rec = self._nodes.get((t, ()))
            if rec is not None:
                num = num + w * rec.value
                den += w
        return num / den if den > 0 else self._zero()

    def values_at_depth(self, depth: int, fill: str = "zero") -> np.ndarray:
        """Radiance of every depth-``depth`` sael, ``(24 * 4**(depth-1), channels)``."""
        per_top = 4 ** (depth - 1)
        out = np.zeros((N_TOP * per_top, self.channels))
        observed = np.zeros(N_TOP * per_top, dtype=bool)
        if fill == "parent":
            out[:] = self.root_summary()
        for (top, path), rec in sorted(self._nodes.items(), key=lambda kv: len(kv[0][1])):
            j = len(path) + 1
            if j > depth:
                continue
            k = 0
            for c in path:
                k = 4 * k + c
            block = 4 ** (depth - j)
            start = top * per_top + k * block
            if j == depth or not rec.has_children or fill == "parent":
                out[start:start + block] = rec.value
            if j == depth or not rec.has_children:
                observed[start:start + block] = True
        return out

    def set_uniform(self, depth: int, values: np.ndarray):
        """Replace the tree by one complete level of saels plus summaries."""
        table = sael_table(depth)
        values = np.asarray(values, dtype=float).reshape(len(table), self.channels)
        self._nodes = {}
        w = table.weights
        level_vals, level_w = values, w
        for j in range(depth, 0, -1):
            per_top = 4 ** (j - 1)
            for idx in range(len(level_vals)):
                top, k = divmod(idx, per_top)
                path = []
                for _ in range(j - 1):
                    k, c = divmod(k, 4)
                    path.append(c)
                self._nodes[(top, tuple(reversed(path)))] = _Rec(level_vals[idx].copy(), 0.0, j < depth)
            if j > 1:
                wv = (level_vals * level_w[:, None]).reshape(-1, 4, self.channels).sum(axis=1)
                level_w = level_w.reshape(-1, 4).sum(axis=1)
                level_vals = wv / level_w[:, None]

    def stored_ids(self) -> list:
        return [SaelId(t, p) for (t, p) in sorted(self._nodes)]

    def leaf_ids(self) -> list:
        return [SaelId(t, p) for (t, p), r in sorted(self._nodes.items()) if not r.has_children]

    def check_summaries(self) -> float:
        """Largest deviation between a parent and the weighted mean of its children."""
        worst = 0.0
        for (top, path), rec in self._nodes.items():
            if not rec.has_children:
                continue
            num = self._zero()
            den = 0.0
            for c in range(4):
                child = self._nodes.get((top, path + (c,)))
                if child is not None:
                    w = solid_angle(SaelId(top, path + (c,)))
                    num = num + w * child.value
                    den += w
            if den > 0:
                worst = max(worst, float(np.max(np.abs(num / den - rec.value))))
        return worst

    # serialization ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        kind = 0 if self.kind == INCIDENT else 1
        out.write(struct.pack("<BdddBBBI", FORMAT_VERSION, *self._center, kind, self.channels,
                              self.max_depth, len(self._nodes)))
        fmt = "<BBQ" + "d" * self.channels + "ddB"
        for (top, path), rec in sorted(self._nodes.items()):
            packed = 0
            for c in path:
                packed = (packed << 2) | c
            out.write(struct.pack(fmt, top, len(path) + 1, packed, *rec.value,
                                  solid_angle(SaelId(top, path)), rec.samples, rec.has_children))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Sao":
        if data[:4] != MAGIC:
            raise ValueError("not an SAO1 stream")
        head = "<BdddBBBI"
        version, cx, cy, cz, kind, channels, max_depth, count = struct.unpack_from(head, data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported SAO1 version {version}")
        sao = cls((cx, cy, cz), INCIDENT if kind == 0 else EXITANT, channels, max_depth)
        pos = 4 + struct.calcsize(head)
        fmt = "<BBQ" + "d" * channels + "ddB"
        size = struct.calcsize(fmt)
        for _ in range(count):
            rec = struct.unpack_from(fmt, data, pos)
            pos += size
            top, depth, packed = rec[0], rec[1], rec[2]
            path = tuple((packed >> (2 * (depth - 2 - i))) & 3 for i in range(depth - 1))
            value = np.array(rec[3:3 + channels], dtype=float)
            sao._nodes[(top, path)] = _Rec(value, rec[4 + channels], bool(rec[5 + channels]))
        return sao


def _fixed_spans(sid: SaelId) -> tuple:
    n = 1 << (sid.depth - 1)
    iu, iv = sid.grid_index()
    step = ONE // n
    lo = (FixedCoord(iu * step), FixedCoord(iv * step))
    hi = (FixedCoord((iu + 1) * step), FixedCoord((iv + 1) * step))
    return lo, hi


def sao_from_function(fn, depth: int, center=(0.5, 0.5, 0.5), kind: str = INCIDENT,
                      channels: int = 1, supersample: int = 4) -> Sao:
    """Complete SAO whose saels hold cell averages of ``fn(directions) -> (n, channels)``.

    Averages are solid-angle weighted over a ``supersample**2`` slope grid.
    """
    table = sael_table(depth)
    n = 1 << (depth - 1)
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    ou, ov = np.meshgrid(offs, offs, indexing="ij")
    ou, ov = ou.ravel(), ov.ravel()
    values = np.zeros((len(table), channels))
    per_top = 4 ** (depth - 1)
    for t in range(N_TOP):
        sl = slice(t * per_top, (t + 1) * per_top)
        iu = table.iu[sl][:, None]
        iv = table.iv[sl][:, None]
        u = (iu + ou[None, :]) / n
        v = (iv + ov[None, :]) / n
        dirs = slopes_to_direction(t, u, v)
        # solid-angle density on the slope plane is (1 + u^2 + v^2)^(-3/2)
        dens = (1.0 + u * u + v * v) ** -1.5
        vals = np.asarray(fn(dirs.reshape(-1, 3)), dtype=float).reshape(dirs.shape[0], dirs.shape[1], channels)
        values[sl] = np.sum(vals * dens[..., None], axis=1) / dens.sum(axis=1)[:, None]
    sao = Sao(center, kind, channels, max(depth, DEFAULT_MAX_DEPTH))
    sao.set_uniform(depth, values)
    return sao
