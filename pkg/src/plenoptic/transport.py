"""The plenoptic octree and light transport through empty space.

Every occupied leaf may carry an incident and an exitant SAO at its cell
center. Incident saels hold radiance arriving *from* their direction;
exitant saels hold radiance leaving *toward* theirs. Light travelling in
direction ``w`` therefore leaves a source through exitant sael ``s`` and
enters a target through incident sael ``antipode(s)``.

Transport is solved as a gather: the incident radiance of sael ``t`` at a
node is the coverage-weighted exitant radiance of the nodes met by sael
``t`` (projected outward), plus the far-field environment for any uncovered
fraction. The projection weights depend only on geometry and are cached.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .physics import Blif, EmissiveBlif, IdentityBlif
from .projection import gather_terms
from .sao import EXITANT, INCIDENT, Sao, SaelId, antipode, sael_table
from .vlo import NodeStatus, Vlo, cell_bounds, cell_center


@dataclass
class PlenopticOctree:
    """Volumetric octree plus per-node SAOs and an optional far-field environment.

    ``blifs`` maps a mediel's ``blif_id`` to its :class:`Blif`. The
    environment is an incident-kind SAO at the universe center: its sael
    ``t`` is the radiance arriving from direction ``t`` from beyond the
    universe.
    """

    vlo: Vlo
    blifs: dict
    sao_depth: int = 3
    channels: int = 1
    environment: Optional[Sao] = None
    incident: dict = field(default_factory=dict)
    exitant: dict = field(default_factory=dict)
    _gather_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        for path, node in self.vlo.occupied_leaves():
            self.register(path)

    def register(self, path: tuple):
        center = tuple(cell_center(path))
        lo, size = cell_bounds(path)
        if not all(lo[i] <= center[i] <= lo[i] + size for i in range(3)):
            raise ValueError("SAO center must lie inside its node's cell")
        if path not in self.incident:
            self.incident[path] = Sao(center, INCIDENT, self.channels, max(self.sao_depth, 8))
            self.exitant[path] = Sao(center, EXITANT, self.channels, max(self.sao_depth, 8))

    def mediel(self, path: tuple):
        node, depth = self.vlo.node_at(path)
        if depth != len(path) or node.status != NodeStatus.OCCUPIED:
            raise KeyError(f"no occupied leaf at {path}")
        return node.payload

    def blif(self, path: tuple) -> Blif:
        m = self.mediel(path)
        if m is None or m.blif_id not in self.blifs:
            raise KeyError(f"no BLIF registered for node {path}")
        return self.blifs[m.blif_id]

    def nodes(self) -> list:
        return sorted(self.incident)

    def environment_values(self) -> np.ndarray:
        if self.environment is None:
            return np.zeros((len(sael_table(self.sao_depth)), self.channels))
        return self.environment.values_at_depth(self.sao_depth, fill="parent")

    def gather_plan(self, path: tuple) -> list:
        """Cached projection weights for every incident sael of ``path``."""
        if path not in self._gather_cache:
            table = sael_table(self.sao_depth)
            center = self.incident[path].center
            plan = []
            for idx in range(len(table)):
                sid = SaelId.from_index(idx, self.sao_depth)
                hits, env = gather_terms(self.vlo, center, sid, exclude=path,
                                         interacting=lambda p, n: p in self.incident)
                plan.append((hits, env))
            self._gather_cache[path] = plan
        return self._gather_cache[path]


def transfer(p: PlenopticOctree, source: Sao, target_path: tuple, sael: SaelId, covered: float = 1.0):
    """Move the radiance of exitant sael ``sael`` of ``source`` into the target.

    It lands in the target's incident sael ``antipode(sael)`` scaled by the
    covered fraction; empty space leaves radiance unchanged.
    """
    value = source.value(sael)
    if covered <= 0 or not np.any(value):
        return
    p.incident[target_path].deposit(antipode(sael), covered * value)


def _gather_values(p: PlenopticOctree, path: tuple, exitant_vals: dict, env_vals: np.ndarray) -> np.ndarray:
    table_len = len(sael_table(p.sao_depth))
    out = np.zeros((table_len, p.channels))
    env_sao = p.environment
    for idx, (hits, env) in enumerate(p.gather_plan(path)):
        acc = np.zeros(p.channels)
        for f, src, sid in hits:
            acc += f * _read(exitant_vals[src], sid, p.sao_depth)
        for f, sid in env:
            if env_sao is None:
                continue
            if sid.depth == p.sao_depth:
                acc += f * env_vals[sid.index()]
            else:
                acc += f * env_sao.value(sid, fill="parent")
        out[idx] = acc
    return out


def _read(values: np.ndarray, sid: SaelId, depth: int) -> np.ndarray:
    """Value of ``sid`` from a complete depth-``depth`` sael array."""
    if sid.depth > depth:
        sid = SaelId(sid.top, sid.path[:depth - 1])
    if sid.depth == depth:
        return values[sid.index()]
    # coarser than the table: solid-angle weighted mean of descendants
    table = sael_table(depth)
    block = 4 ** (depth - sid.depth)
    start = SaelId(sid.top, sid.path + (0,) * (depth - sid.depth)).index()
    w = table.weights[start:start + block]
    return (values[start:start + block] * w[:, None]).sum(axis=0) / w.sum()


def scatter(p: PlenopticOctree, path: tuple, incident: Optional[np.ndarray] = None) -> np.ndarray:
    """Exitant field of ``path`` from its incident field and BLIF (no light hopping)."""
    blif = p.blif(path)
    if incident is None:
        incident = p.incident[path].values_at_depth(p.sao_depth)
    normal = p.mediel(path).normal
    return blif.scatter(incident, p.sao_depth, normal)


@dataclass
class TransportReport:
    bounces: int
    increments: list
    total_exitant: float


def solve_transport(p: PlenopticOctree, bounces: int) -> TransportReport:
    """Jacobi iteration: each bounce gathers from the previous exitant iterate, then scatters.

    Bounce 0 holds only emitted radiance. ``increments`` records, per bounce,
    the largest change of any exitant sael.
    """
    if bounces < 0:
        raise ValueError("bounces must be non-negative")
    nodes = p.nodes()
    m = len(sael_table(p.sao_depth))
    zero = np.zeros((m, p.channels))
    emitted = {}
    for path in nodes:
        blif = p.blif(path)
        emitted[path] = blif.emission(p.sao_depth, p.channels) if isinstance(blif, EmissiveBlif) else zero
    exitant = dict(emitted)
    incident = {path: zero for path in nodes}
    env_vals = p.environment_values()
    increments = []
    for _ in range(bounces):
        incident = {path: _gather_values(p, path, exitant, env_vals) for path in nodes}
        new = {}
        for path in nodes:
            blif = p.blif(path)
            if isinstance(blif, EmissiveBlif):
                new[path] = emitted[path]
            else:
                new[path] = scatter(p, path, incident[path])
        increments.append(max((float(np.max(np.abs(new[k] - exitant[k]))) for k in nodes), default=0.0))
        exitant = new
    for path in nodes:
        p.incident[path].set_uniform(p.sao_depth, incident[path])
        p.exitant[path].set_uniform(p.sao_depth, exitant[path])
    total = float(sum(np.sum(v[:, 0]) for v in exitant.values()))
    return TransportReport(bounces, increments, total)


def identity_chain(p: PlenopticOctree, values: np.ndarray, times: int) -> np.ndarray:
    """Apply the empty-space BLIF ``times`` times (helper for consistency checks)."""
    blif = IdentityBlif()
    out = values
    for _ in range(times):
        out = blif.scatter(out, p.sao_depth)
    return out
