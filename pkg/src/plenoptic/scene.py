"""Scene specification files and the scenes built from them.

A scene spec is JSON validated by pydantic; unknown keys are rejected. Its
``run`` block holds run settings that take precedence over command-line
flags.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from scipy import ndimage
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .learning.forward import Dent, Environment, Lobe, Panel
from .learning.pipeline import BLACK, WHITE, CaptureSetup, dent_grid
from .physics import Brdf, OpaqueSurfelBlif
from .sao import INCIDENT, sao_from_function
from .transport import PlenopticOctree
from .vlo import Mediel, Vlo, cell_center

SCHEMA_VERSION = 1
PRESETS = {"black": BLACK, "white": WHITE}


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DentSpec(Strict):
    center: Tuple[float, float]
    radius: float = Field(gt=0)
    depth: float = Field(ge=0)


class DentGridSpec(Strict):
    count: int = Field(ge=1, le=256)
    depth_min: float = Field(default=100e-6, ge=0)
    depth_max: float = Field(default=200e-6, ge=0)
    radius: Optional[float] = Field(default=None, gt=0)
    margin: float = Field(default=0.2, ge=0, lt=0.5)


class BrdfSpec(Strict):
    diffuse_albedo: float = Field(ge=0, le=1)
    roughness: float = Field(gt=0, le=1)
    ior: float = Field(gt=1, le=4)
    specular: float = Field(ge=0, le=1)


class PanelSpec(Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9_-]+$")
    grid: int = Field(default=64, ge=8, le=512)
    extent: float = Field(default=0.05, gt=0)
    curvature: Tuple[float, float, float] = (0.6, 0.4, 0.1)
    dents: List[DentSpec] = []
    dent_grid: Optional[DentGridSpec] = None
    material: Optional[Literal["black", "white"]] = None
    brdf: Optional[BrdfSpec] = None

    @model_validator(mode="after")
    def _one_material(self):
        if (self.material is None) == (self.brdf is None):
            raise ValueError("give exactly one of 'material' and 'brdf'")
        if self.dent_grid is not None and self.dent_grid.depth_max < self.dent_grid.depth_min:
            raise ValueError("dent_grid.depth_max must be >= depth_min")
        return self

    def to_brdf(self) -> Brdf:
        return PRESETS[self.material] if self.material else Brdf(**self.brdf.model_dump())

    def to_panel(self) -> Panel:
        dents = tuple(Dent(tuple(d.center), d.radius, d.depth) for d in self.dents)
        if self.dent_grid is not None:
            g = self.dent_grid
            dents += dent_grid(g.count, self.extent, (g.depth_min, g.depth_max), g.radius, g.margin)
        return Panel(self.grid, self.extent, tuple(self.curvature), dents)


class LobeSpec(Strict):
    direction: Tuple[float, float, float]
    intensity: float = Field(ge=0)
    width_deg: float = Field(gt=0, le=90)


class EnvironmentSpec(Strict):
    base: float = Field(default=0.3, ge=0)
    gradient: float = 0.6
    floor: float = Field(default=0.05, ge=0)
    lobes: Optional[List[LobeSpec]] = None

    def to_environment(self) -> Environment:
        if self.lobes is None:
            return Environment(self.base, self.gradient, self.floor)
        lobes = tuple(Lobe(tuple(l.direction), l.intensity, l.width_deg) for l in self.lobes)
        return Environment(self.base, self.gradient, self.floor, lobes)


class CaptureSpec(Strict):
    n_ooi: int = Field(default=12, ge=2, le=256)
    n_loi: int = Field(default=86, ge=4, le=4096)
    loi_resolution: int = Field(default=6, ge=1, le=64)
    loi_fov_deg: float = Field(default=30.0, gt=0, lt=170)
    camera_distance: float = Field(default=0.5, gt=0)
    noise: float = Field(default=0.01, ge=0, le=1)

    def to_setup(self) -> CaptureSetup:
        return CaptureSetup(**self.model_dump())


class RunSpec(Strict):
    """Run settings; any value given here overrides the matching command-line flag."""

    seed: Optional[int] = Field(default=None, ge=0)
    threads: Optional[int] = Field(default=None, ge=1)
    sao_depth: Optional[int] = Field(default=None, ge=1, le=8)
    vlo_depth: Optional[int] = Field(default=None, ge=1, le=10)
    bounces: Optional[int] = Field(default=None, ge=0)
    goal_um: Optional[float] = Field(default=None, gt=0)
    polarimetric: Optional[bool] = None
    alternations: Optional[int] = Field(default=None, ge=0, le=20)
    view_octant: Optional[int] = Field(default=None, ge=0, le=7)
    resolution: Optional[int] = Field(default=None, ge=1, le=4096)


class SceneSpec(Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    panels: List[PanelSpec] = Field(min_length=1)
    environment: EnvironmentSpec = EnvironmentSpec()
    capture: CaptureSpec = CaptureSpec()
    goal_ppt: float = Field(default=2.0, gt=0)
    run: RunSpec = RunSpec()

    @model_validator(mode="after")
    def _unique_names(self):
        names = [p.name for p in self.panels]
        if len(set(names)) != len(names):
            raise ValueError("panel names must be unique")
        return self


def load_spec(path) -> SceneSpec:
    """Parse and validate a spec file; raises ``ValueError`` with line or field details."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return SceneSpec.model_validate(data)


def panel_layout(count: int) -> list:
    """Footprints ``(x0, x1, y0, y1)`` of ``count`` panels side by side in the unit cube."""
    width = 0.75 / count
    return [(0.125 + k * width, 0.125 + (k + 1) * width, 0.25, 0.75) for k in range(count)]


def build_vlo(spec: SceneSpec, depth: int) -> Vlo:
    """One cell layer per panel, top face at ``z = 0.5``; mediel normals follow the panel slope."""
    thickness = 1.0 / (1 << depth)
    vlo = Vlo(max_depth=depth)
    for k, (ps, (x0, x1, y0, y1)) in enumerate(zip(spec.panels, panel_layout(len(spec.panels)))):
        panel = ps.to_panel()

        def inside(pts, x0=x0, x1=x1, y0=y0, y1=y1):
            return ((pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
                    & (pts[:, 2] >= 0.5 - thickness) & (pts[:, 2] <= 0.5))

        part = Vlo.build_from_implicit(inside, depth, payload=Mediel(k + 1))
        for path, _ in part.occupied_leaves():
            c = cell_center(path)
            px = ((c[0] - x0) / (x1 - x0) - 0.5) * panel.extent
            py = ((c[1] - y0) / (y1 - y0) - 0.5) * panel.extent
            _, zx, zy = panel.height(np.array(px), np.array(py))
            n = np.array([-float(zx), -float(zy), 1.0])
            vlo = vlo.with_cell(path, True, Mediel(k + 1, tuple(n / np.linalg.norm(n))))
    return vlo


def environment_sao(spec: SceneSpec, depth: int, channels: int = 1):
    env = spec.environment.to_environment()

    def fn(dirs):
        out = np.zeros((len(dirs), channels))
        out[:, :1] = env(dirs)
        return out

    return sao_from_function(fn, depth, kind=INCIDENT, channels=channels, supersample=3)


def build_octree(spec: SceneSpec, vlo_depth: int, sao_depth: int, polarimetric: bool) -> PlenopticOctree:
    channels = 3 if polarimetric else 1
    blifs = {k + 1: OpaqueSurfelBlif(ps.to_brdf(), polarimetric=polarimetric) for k, ps in enumerate(spec.panels)}
    return PlenopticOctree(build_vlo(spec, vlo_depth), blifs, sao_depth=sao_depth, channels=channels,
                           environment=environment_sao(spec, sao_depth, channels))


def dent_field(panel: Panel) -> np.ndarray:
    """Height minus the nominal curved shape: the dents alone."""
    x, y = panel.coords()
    z, _, _ = panel.height(x, y)
    base = Panel(panel.grid, panel.extent, panel.curvature, ())
    zb, _, _ = base.height(x, y)
    return z - zb


def count_local_minima(z: np.ndarray, tol: float = 0.0) -> int:
    """Connected plateaus of interior points no higher than their 8 neighbours and below ``-tol``."""
    c = z[1:-1, 1:-1]
    ok = c < -tol
    h, w = z.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx or dy:
                ok &= c <= z[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
    _, count = ndimage.label(ok, structure=np.ones((3, 3)))
    return int(count)
