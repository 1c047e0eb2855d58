"""Volumetric octree (VLO) over the unit universe cube.

Child index convention: bit 0 selects the high x half, bit 1 the high y half
and bit 2 the high z half. Trees are kept canonical: an internal node never
has eight identical pure leaves as children.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterator, Optional

import numpy as np

from .geometry import MAX_VLO_DEPTH, Vec3

MAGIC = b"VLO1"
FORMAT_VERSION = 1


class NodeStatus(IntEnum):
    DISJOINT = 0
    OCCUPIED = 1
    OTHER = 2


class SetOp(IntEnum):
    UNION = 0
    INTERSECTION = 1
    DIFFERENCE = 2


@dataclass(frozen=True)
class Mediel:
    """Payload of an occupied leaf.

    ``normal`` and ``offset`` describe an optional surfel plane inside the
    cell (offset in cell units, within [-1/2, 1/2]).
    """

    blif_id: int = 0
    normal: Optional[tuple] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.normal is not None:
            n = math.sqrt(sum(c * c for c in self.normal))
            object.__setattr__(self, "normal", tuple(float(c) / n for c in self.normal))
        if not -0.5 <= self.offset <= 0.5:
            raise ValueError("surfel offset must lie in [-1/2, 1/2]")

    @property
    def is_surfel(self) -> bool:
        return self.normal is not None


DEFAULT_MEDIEL = Mediel()


class Node:
    """Immutable octree node. Leaves have ``children is None``."""

    __slots__ = ("status", "children", "payload", "occupied_leaves")

    def __init__(self, status, children=None, payload=None):
        self.status = NodeStatus(status)
        self.children = children
        self.payload = payload
        if children is None:
            self.occupied_leaves = 1 if self.status == NodeStatus.OCCUPIED else 0
        else:
            self.occupied_leaves = sum(c.occupied_leaves for c in children)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def same_leaf(self, other: "Node") -> bool:
        return (self.children is None and other.children is None
                and self.status == other.status and self.payload == other.payload)

    def __repr__(self):
        if self.children is None:
            return f"Node({self.status.name})"
        return f"Node(OTHER, {self.occupied_leaves} occupied leaves)"


EMPTY = Node(NodeStatus.DISJOINT)
FULL = Node(NodeStatus.OCCUPIED, payload=DEFAULT_MEDIEL)


def leaf(occupied: bool, payload: Optional[Mediel] = None) -> Node:
    if not occupied:
        return EMPTY
    if payload is None or payload == DEFAULT_MEDIEL:
        return FULL
    return Node(NodeStatus.OCCUPIED, payload=payload)


def internal(children) -> Node:
    """Build an internal node, collapsing it when all children are the same pure leaf."""
    children = tuple(children)
    if len(children) != 8:
        raise ValueError("an octree node has exactly 8 children")
    first = children[0]
    if first.is_leaf and all(first.same_leaf(c) for c in children[1:]):
        return first
    return Node(NodeStatus.OTHER, children=children)


def child_offset(ci: int) -> tuple:
    return (ci & 1, (ci >> 1) & 1, (ci >> 2) & 1)


def ftb_order(view_octant: int) -> tuple:
    """Child visit order for a viewer in ``view_octant`` (bits = positive axes)."""
    if not 0 <= view_octant <= 7:
        raise ValueError("view octant must be in 0..7")
    mask = view_octant ^ 7
    return tuple(i ^ mask for i in range(7, -1, -1))


def path_to_cell(path) -> tuple:
    """Integer cell coordinates ``(depth, ix, iy, iz)`` of an OctPath."""
    ix = iy = iz = 0
    for ci in path:
        ix = (ix << 1) | (ci & 1)
        iy = (iy << 1) | ((ci >> 1) & 1)
        iz = (iz << 1) | ((ci >> 2) & 1)
    return len(path), ix, iy, iz


def cell_to_path(depth: int, ix: int, iy: int, iz: int) -> tuple:
    return tuple(((ix >> s) & 1) | (((iy >> s) & 1) << 1) | (((iz >> s) & 1) << 2)
                 for s in range(depth - 1, -1, -1))


def cell_bounds(path) -> tuple:
    """Lower corner (array) and edge length of the cell named by ``path``."""
    d, ix, iy, iz = path_to_cell(path)
    size = 1.0 / (1 << d)
    return np.array([ix, iy, iz], dtype=float) * size, size


def cell_center(path) -> np.ndarray:
    lo, size = cell_bounds(path)
    return lo + size / 2


def locate(p, depth: int) -> tuple:
    """Path of the depth-``depth`` cell containing ``p``.

    Points on a cell boundary resolve toward the lower-index child.
    """
    if not 0 <= depth <= MAX_VLO_DEPTH:
        raise ValueError(f"depth must be in 0..{MAX_VLO_DEPTH}")
    coords = [float(c) for c in p]
    if any(not (0.0 <= c <= 1.0) for c in coords):
        raise ValueError(f"point {tuple(coords)} lies outside the universe")
    scale = float(1 << depth)
    idx = [max(math.ceil(c * scale) - 1, 0) for c in coords]
    return cell_to_path(depth, *idx)


# -- the tree ------------------------------------------------------------------


class Vlo:
    """A volumetric octree over the unit cube."""

    def __init__(self, root: Node = EMPTY, max_depth: int = MAX_VLO_DEPTH):
        if not 0 <= max_depth <= MAX_VLO_DEPTH:
            raise ValueError(f"max_depth must be in 0..{MAX_VLO_DEPTH}")
        self.root = root
        self.max_depth = max_depth

    def __eq__(self, other):
        return isinstance(other, Vlo) and _tree_equal(self.root, other.root)

    def __repr__(self):
        return f"Vlo(nodes={self.node_count()}, occupied_leaves={self.root.occupied_leaves})"

    # construction ----------------------------------------------------------

    @classmethod
    def build_from_implicit(cls, classifier: Callable[[np.ndarray], np.ndarray], depth: int,
                            payload: Optional[Mediel] = None) -> "Vlo":
        """Classify regularly subdividing cells against an implicit solid.

        ``classifier`` maps an ``(n, 3)`` array of points to a boolean array
        (True = inside). Each cell is sampled at its 8 corners and its center;
        unanimous cells become leaves, the rest subdivide. Cells still mixed at
        ``depth`` are decided by their center sample.
        """
        if not 0 <= depth <= MAX_VLO_DEPTH:
            raise ValueError(f"depth must be in 0..{MAX_VLO_DEPTH}")
        sample_offsets = np.array([child_offset(i) for i in range(8)] + [(0.5, 0.5, 0.5)])
        child_bits = np.array([child_offset(i) for i in range(8)], dtype=np.int64)

        levels = []
        cells = np.zeros((1, 3), dtype=np.int64)
        for level in range(depth + 1):
            size = 1.0 / (1 << level)
            pts = (cells[:, None, :] + sample_offsets[None, :, :]) * size
            inside = np.asarray(classifier(pts.reshape(-1, 3)), dtype=bool).reshape(-1, 9)
            status = np.full(len(cells), int(NodeStatus.OTHER), dtype=np.int8)
            status[inside.all(axis=1)] = NodeStatus.OCCUPIED
            status[~inside.any(axis=1)] = NodeStatus.DISJOINT
            mixed = status == NodeStatus.OTHER
            if level == depth:
                status[mixed] = np.where(inside[mixed, 8], NodeStatus.OCCUPIED, NodeStatus.DISJOINT)
                mixed[:] = False
            levels.append(status)
            cells = (2 * cells[mixed][:, None, :] + child_bits[None, :, :]).reshape(-1, 3)
            if len(cells) == 0:
                break

        full = leaf(True, payload)
        below: list = []
        for status in reversed(levels):
            nodes = []
            k = 0
            for s in status:
                if s == NodeStatus.OCCUPIED:
                    nodes.append(full)
                elif s == NodeStatus.DISJOINT:
                    nodes.append(EMPTY)
                else:
                    nodes.append(internal(below[8 * k:8 * k + 8]))
                    k += 1
            below = nodes
        return cls(below[0], max_depth=max(depth, 0))

    @classmethod
    def from_dense(cls, grid: np.ndarray, payloads: Optional[dict] = None) -> "Vlo":
        """Build from a cubic boolean grid indexed ``[ix, iy, iz]`` of side ``2**d``.

        ``payloads`` optionally maps ``(ix, iy, iz)`` to a :class:`Mediel`.
        """
        grid = np.asarray(grid, dtype=bool)
        n = grid.shape[0]
        depth = int(round(math.log2(n))) if n > 0 else 0
        if grid.shape != (n, n, n) or (1 << depth) != n:
            raise ValueError("grid must be a cube with power-of-two side")
        payloads = payloads or {}

        def build(d, ix, iy, iz):
            if d == depth:
                return leaf(bool(grid[ix, iy, iz]), payloads.get((ix, iy, iz)))
            span = n >> d
            block = grid[ix * span:(ix + 1) * span, iy * span:(iy + 1) * span, iz * span:(iz + 1) * span]
            if not payloads:
                if block.all():
                    return FULL
                if not block.any():
                    return EMPTY
            kids = [build(d + 1, 2 * ix + b[0], 2 * iy + b[1], 2 * iz + b[2])
                    for b in (child_offset(i) for i in range(8))]
            return internal(kids)

        return cls(build(0, 0, 0, 0), max_depth=depth)

    def with_cell(self, path, occupied: bool, payload: Optional[Mediel] = None) -> "Vlo":
        """Return a copy with the cell at ``path`` replaced by a pure leaf."""
        path = tuple(path)
        if len(path) > self.max_depth:
            raise ValueError("path deeper than max_depth")
        new_leaf = leaf(occupied, payload)

        def rebuild(node, rest):
            if not rest:
                return new_leaf
            kids = list(node.children) if node.children is not None else [node] * 8
            kids[rest[0]] = rebuild(kids[rest[0]], rest[1:])
            return internal(kids)

        return Vlo(rebuild(self.root, path), self.max_depth)

    def canonicalize(self) -> "Vlo":
        def canon(node):
            if node.is_leaf:
                return node
            return internal([canon(c) for c in node.children])
        return Vlo(canon(self.root), self.max_depth)

    # queries ---------------------------------------------------------------

    def node_count(self) -> int:
        def count(node):
            if node.is_leaf:
                return 1
            return 1 + sum(count(c) for c in node.children)
        return count(self.root)

    def depth(self) -> int:
        def dep(node):
            if node.is_leaf:
                return 0
            return 1 + max(dep(c) for c in node.children)
        return dep(self.root)

    def leaves(self) -> Iterator[tuple]:
        """Yield ``(path, node)`` for every leaf in preorder."""
        stack = [((), self.root)]
        while stack:
            path, node = stack.pop()
            if node.is_leaf:
                yield path, node
            else:
                for ci in range(7, -1, -1):
                    stack.append((path + (ci,), node.children[ci]))

    def occupied_leaves(self) -> list:
        return [(p, n) for p, n in self.leaves() if n.status == NodeStatus.OCCUPIED]

    def node_at(self, path) -> tuple:
        """Deepest node along ``path``: returns ``(node, depth_reached)``."""
        node = self.root
        for i, ci in enumerate(path):
            if node.is_leaf:
                return node, i
            node = node.children[ci]
        return node, len(path)

    def leaf_containing(self, p) -> tuple:
        """``(path, node)`` of the leaf containing point ``p`` (lower-index tie-break)."""
        path = locate(p, self.max_depth)
        node, d = self.node_at(path)
        return path[:d], node

    def to_dense(self, depth: int) -> np.ndarray:
        """Rasterize occupancy to a ``2**depth`` cubic grid (cells coarser than depth only)."""
        n = 1 << depth
        grid = np.zeros((n, n, n), dtype=bool)
        for path, node in self.leaves():
            if node.status != NodeStatus.OCCUPIED:
                continue
            d, ix, iy, iz = path_to_cell(path)
            if d > depth:
                raise ValueError("tree is finer than the requested raster depth")
            s = 1 << (depth - d)
            grid[ix * s:(ix + 1) * s, iy * s:(iy + 1) * s, iz * s:(iz + 1) * s] = True
        return grid

    def ftb_traverse(self, view_octant: int,
                     visit: Optional[Callable[[tuple, Node], Optional[bool]]] = None) -> list:
        """Front-to-back traversal for a viewer in ``view_octant``.

        ``visit(path, node)`` may return ``False`` to skip the node's subtree.
        Returns the visited paths in order.
        """
        order = ftb_order(view_octant)
        visited = []

        def walk(path, node):
            visited.append(path)
            keep = visit(path, node) if visit is not None else True
            if keep is False or node.is_leaf:
                return
            for ci in order:
                walk(path + (ci,), node.children[ci])

        walk((), self.root)
        return visited

    def mass_properties(self) -> dict:
        """Volume, exposed surface area and center of mass of the occupied set."""
        volume = 0.0
        moment = np.zeros(3)
        area = 0.0
        for path, node in self.leaves():
            if node.status != NodeStatus.OCCUPIED:
                continue
            lo, size = cell_bounds(path)
            v = size ** 3
            volume += v
            moment += v * (lo + size / 2)
            area += self._exposed_area(path, size)
        com = moment / volume if volume > 0 else np.full(3, np.nan)
        return {"volume": volume, "surface_area": area, "center_of_mass": Vec3(*com) if volume > 0 else None}

    def _exposed_area(self, path, size) -> float:
        d, ix, iy, iz = path_to_cell(path)
        idx = [ix, iy, iz]
        n = 1 << d
        exposed = 0.0
        for axis in range(3):
            for step in (-1, 1):
                nb = list(idx)
                nb[axis] += step
                if not 0 <= nb[axis] < n:
                    exposed += size * size
                    continue
                node, reached = self.node_at(cell_to_path(d, *nb))
                if node.is_leaf:
                    covered = size * size if node.status == NodeStatus.OCCUPIED else 0.0
                else:
                    # the neighbor's face touching us is on its low side when step > 0
                    covered = _face_area(node, axis, step < 0, size)
                exposed += size * size - covered
        return exposed

    # serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        codes = []
        payloads = []

        def walk(node):
            codes.append(int(node.status))
            if node.is_leaf:
                if node.status == NodeStatus.OCCUPIED:
                    payloads.append(node.payload or DEFAULT_MEDIEL)
                return
            for c in node.children:
                walk(c)

        walk(self.root)
        packed = bytearray((len(codes) + 3) // 4)
        for i, c in enumerate(codes):
            packed[i >> 2] |= c << (2 * (i & 3))
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<BBI", FORMAT_VERSION, self.max_depth, len(codes)))
        out.write(bytes(packed))
        out.write(struct.pack("<I", len(payloads)))
        for m in payloads:
            nx, ny, nz = m.normal if m.normal is not None else (0.0, 0.0, 0.0)
            out.write(struct.pack("<IBdddd", m.blif_id, m.normal is not None, nx, ny, nz, m.offset))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Vlo":
        if data[:4] != MAGIC:
            raise ValueError("not a VLO1 stream")
        version, max_depth, count = struct.unpack_from("<BBI", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported VLO1 version {version}")
        pos = 10
        nbytes = (count + 3) // 4
        packed = data[pos:pos + nbytes]
        codes = [(packed[i >> 2] >> (2 * (i & 3))) & 3 for i in range(count)]
        pos += nbytes
        (npay,) = struct.unpack_from("<I", data, pos)
        pos += 4
        payloads = []
        rec = struct.calcsize("<IBdddd")
        for _ in range(npay):
            bid, has_n, nx, ny, nz, off = struct.unpack_from("<IBdddd", data, pos)
            pos += rec
            payloads.append(Mediel(bid, (nx, ny, nz) if has_n else None, off))
        it = iter(codes)
        pit = iter(payloads)

        def build():
            c = next(it)
            if c == NodeStatus.OTHER:
                return internal([build() for _ in range(8)])
            if c == NodeStatus.OCCUPIED:
                return leaf(True, next(pit))
            return EMPTY

        return cls(build(), max_depth)


def _face_area(node: Node, axis: int, high_side: bool, size: float) -> float:
    """Occupied area on one face of ``node`` (edge ``size``)."""
    if node.is_leaf:
        return size * size if node.status == NodeStatus.OCCUPIED else 0.0
    total = 0.0
    for ci, child in enumerate(node.children):
        if ((ci >> axis) & 1) == int(high_side):
            total += _face_area(child, axis, high_side, size / 2)
    return total


def _tree_equal(a: Node, b: Node) -> bool:
    if a.is_leaf or b.is_leaf:
        return a.same_leaf(b)
    return all(_tree_equal(x, y) for x, y in zip(a.children, b.children))


def _combine_leaves(a: Node, b: Node, op: SetOp) -> Node:
    ao = a.status == NodeStatus.OCCUPIED
    bo = b.status == NodeStatus.OCCUPIED
    if op == SetOp.UNION:
        return a if ao else (b if bo else EMPTY)
    if op == SetOp.INTERSECTION:
        return a if (ao and bo) else EMPTY
    return a if (ao and not bo) else EMPTY


def _set_op_nodes(a: Node, b: Node, op: SetOp) -> Node:
    if a.is_leaf and b.is_leaf:
        return _combine_leaves(a, b, op)
    if op == SetOp.UNION and a.is_leaf and a.status == NodeStatus.OCCUPIED:
        return a
    if op == SetOp.UNION and b.is_leaf and b.status == NodeStatus.DISJOINT:
        return a
    if op == SetOp.UNION and a.is_leaf and a.status == NodeStatus.DISJOINT:
        return b
    if op == SetOp.INTERSECTION and (a.status == NodeStatus.DISJOINT or b.status == NodeStatus.DISJOINT):
        return EMPTY
    if op == SetOp.DIFFERENCE:
        if a.status == NodeStatus.DISJOINT or (b.is_leaf and b.status == NodeStatus.OCCUPIED):
            return EMPTY
        if b.is_leaf and b.status == NodeStatus.DISJOINT:
            return a
    ac = a.children if not a.is_leaf else (a,) * 8
    bc = b.children if not b.is_leaf else (b,) * 8
    return internal([_set_op_nodes(x, y, op) for x, y in zip(ac, bc)])


def set_op(a: Vlo, b: Vlo, op) -> Vlo:
    """Leafwise boolean combination; occupied payloads are taken from ``a`` first."""
    if isinstance(op, str):
        op = SetOp[op.upper()]
    return Vlo(_set_op_nodes(a.root, b.root, SetOp(op)), max(a.max_depth, b.max_depth))


def union(a: Vlo, b: Vlo) -> Vlo:
    return set_op(a, b, SetOp.UNION)


def intersection(a: Vlo, b: Vlo) -> Vlo:
    return set_op(a, b, SetOp.INTERSECTION)


def difference(a: Vlo, b: Vlo) -> Vlo:
    return set_op(a, b, SetOp.DIFFERENCE)


def sphere_classifier(center=(0.5, 0.5, 0.5), radius: float = 0.4):
    c = np.asarray(center, dtype=float)

    def inside(points):
        return np.sum((points - c) ** 2, axis=1) <= radius * radius

    return inside


def half_space_classifier(axis: int, threshold: float, upper: bool = True):
    def inside(points):
        return points[:, axis] >= threshold if upper else points[:, axis] <= threshold
    return inside
