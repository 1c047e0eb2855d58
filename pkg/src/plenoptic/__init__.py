"""Plenoptic octrees: volumetric scenes with per-node light fields, polarimetric
light transport, and scene learning of surface shape from polarized images."""
from .geometry import Direction, StokesVector, Vec3, dolp
from .physics import Brdf, EmissiveBlif, IdentityBlif, OpaqueSurfelBlif, eval_brdf, hemispherical_reflectance
from .render import render_orthographic
from .sao import Sao, SaelId, antipode, sael_table
from .transport import PlenopticOctree, solve_transport
from .vlo import Mediel, Vlo

__version__ = "0.1.0"

__all__ = [
    "Brdf", "Direction", "EmissiveBlif", "IdentityBlif", "Mediel", "OpaqueSurfelBlif", "PlenopticOctree",
    "Sao", "SaelId", "StokesVector", "Vec3", "Vlo", "antipode", "dolp", "eval_brdf",
    "hemispherical_reflectance", "render_orthographic", "sael_table", "solve_transport",
]
