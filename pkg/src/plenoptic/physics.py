"""Light interaction: Fresnel terms, a polarimetric microfacet BRDF and BLIFs.

Direction conventions: ``wi`` points from the surface toward the light (the
incident light travels along ``-wi``), ``wo`` points toward the viewer. A
Stokes vector travelling along ``k`` is expressed in the canonical frame
whose x axis is :func:`reference_x(k)`; ``S1 = I_x - I_y``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import erf

from .geometry import frame_angle, normalize, reference_x, stokes_rotation
from .sao import EXITANT, Sao, sael_table

BRDF_SCHEMA_VERSION = 1
_SQRT_PI = math.sqrt(math.pi)


# -- Fresnel -------------------------------------------------------------------


def fresnel_amplitudes(cos_i, eta):
    """Amplitude reflection coefficients ``(rs, rp)`` for a dielectric of relative index ``eta``."""
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    sin2_t = (1.0 - cos_i * cos_i) / (eta * eta)
    cos_t = np.sqrt(np.maximum(1.0 - sin2_t, 0.0))
    rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t)
    rp = (eta * cos_i - cos_t) / (eta * cos_i + cos_t)
    return rs, rp


def fresnel_amplitudes_deta(cos_i, eta):
    """Derivatives ``(d rs / d eta, d rp / d eta)``."""
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    sin2_i = 1.0 - cos_i * cos_i
    cos_t = np.sqrt(np.maximum(1.0 - sin2_i / (eta * eta), 0.0))
    # d cos_t / d eta = sin_i^2 / (eta^3 cos_t)
    dct = sin2_i / (eta ** 3 * np.maximum(cos_t, 1e-300))
    dnum_s = -(cos_t + eta * dct)
    den_s = cos_i + eta * cos_t
    num_s = cos_i - eta * cos_t
    drs = (dnum_s * den_s - num_s * (cos_t + eta * dct)) / den_s ** 2
    num_p = eta * cos_i - cos_t
    den_p = eta * cos_i + cos_t
    drp = ((cos_i - dct) * den_p - num_p * (cos_i + dct)) / den_p ** 2
    return drs, drp


def fresnel_rs_rp(theta_i, eta):
    """Power reflectances ``(Rs, Rp)`` at incidence angle ``theta_i`` (radians)."""
    if eta <= 0:
        raise ValueError("index of refraction must be positive")
    theta = np.asarray(theta_i, dtype=float)
    if np.any((theta < 0) | (theta > math.pi / 2)):
        raise ValueError("incidence angle must be in [0, pi/2]")
    rs, rp = fresnel_amplitudes(np.cos(theta), eta)
    if np.ndim(rs) == 0:
        return float(rs * rs), float(rp * rp)
    return rs * rs, rp * rp


# -- microfacet terms ------------------------------------------------------------


def beckmann_d(cos_h, alpha):
    """Beckmann normal distribution (per unit projected solid angle of microfacets)."""
    c = np.clip(np.asarray(cos_h, dtype=float), 1e-12, 1.0)
    c2 = c * c
    tan2 = (1.0 - c2) / c2
    return np.where(np.asarray(cos_h) > 0, np.exp(-tan2 / (alpha * alpha)) / (math.pi * alpha * alpha * c2 * c2), 0.0)


def beckmann_d_dalpha(cos_h, alpha):
    c = np.clip(np.asarray(cos_h, dtype=float), 1e-12, 1.0)
    tan2 = (1.0 - c * c) / (c * c)
    return beckmann_d(cos_h, alpha) * (2.0 * tan2 / alpha ** 3 - 2.0 / alpha)


def _smith_a(cos, alpha):
    c = np.clip(np.asarray(cos, dtype=float), 1e-12, 1.0)
    tan = np.sqrt(np.maximum(1.0 - c * c, 0.0)) / c
    return 1.0 / np.maximum(alpha * tan, 1e-300)


def smith_g1(cos, alpha):
    """Smith masking for the Beckmann distribution (exact erf form)."""
    a = _smith_a(cos, alpha)
    with np.errstate(over="ignore", invalid="ignore"):
        lam = 0.5 * (erf(a) - 1.0) + np.exp(-a * a) / (2.0 * a * _SQRT_PI)
    lam = np.where(a > 25.0, 0.0, lam)
    return 1.0 / (1.0 + lam)


def smith_g1_dalpha(cos, alpha):
    a = _smith_a(cos, alpha)
    g = smith_g1(cos, alpha)
    with np.errstate(over="ignore", invalid="ignore"):
        # dG1/dalpha = -G1^2 dLambda/da da/dalpha, dLambda/da = -e^{-a^2}/(2 a^2 sqrt(pi)), da/dalpha = -a/alpha
        d = -g * g * np.exp(-a * a) / (2.0 * a * alpha * _SQRT_PI)
    return np.where(a > 25.0, 0.0, d)


# -- BRDF ----------------------------------------------------------------------


@dataclass(frozen=True)
class Brdf:
    """Lambertian base plus a Beckmann/Smith/Fresnel specular lobe.

    ``f = diffuse_albedo / pi + specular * D G F / (4 cos_i cos_o)``.
    """

    diffuse_albedo: float = 0.2
    roughness: float = 0.2
    ior: float = 1.5
    specular: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.diffuse_albedo <= 1.0:
            raise ValueError("diffuse albedo must be in [0, 1]")
        if not self.roughness > 0:
            raise ValueError("roughness must be positive")
        if not self.ior > 1.0:
            raise ValueError("index of refraction must exceed 1")
        if not 0.0 <= self.specular <= 1.0:
            raise ValueError("specular scale must be in [0, 1]")

    def params(self) -> np.ndarray:
        return np.array([self.diffuse_albedo, self.roughness, self.ior, self.specular])

    @classmethod
    def from_params(cls, x) -> "Brdf":
        return cls(*(float(v) for v in x))

    def to_json(self) -> str:
        return json.dumps({"schema": BRDF_SCHEMA_VERSION, **asdict(self)}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Brdf":
        data = json.loads(text)
        if data.pop("schema", None) != BRDF_SCHEMA_VERSION:
            raise ValueError(f"BRDF file must declare schema {BRDF_SCHEMA_VERSION}")
        return cls(**data)


def _geometry(n, wi, wo):
    n = normalize(n)
    wi = normalize(wi)
    wo = normalize(wo)
    ci = np.sum(n * wi, axis=-1)
    co = np.sum(n * wo, axis=-1)
    hsum = wi + wo
    hn = np.linalg.norm(hsum, axis=-1, keepdims=True)
    h = hsum / np.where(hn > 0, hn, 1.0)
    ch = np.sum(n * h, axis=-1)
    cd = np.clip(np.sum(wi * h, axis=-1), 0.0, 1.0)
    return n, wi, wo, ci, co, ch, cd


def specular_factor(ci, co, ch, alpha):
    """``D G / (4 cos_i cos_o)``; zero outside the upper hemisphere."""
    valid = (ci > 0) & (co > 0)
    # same floor as the masking term so G1(c)/c keeps its finite grazing limit
    cis = np.where(valid, np.maximum(ci, 1e-12), 1.0)
    cos_ = np.where(valid, np.maximum(co, 1e-12), 1.0)
    val = beckmann_d(ch, alpha) * smith_g1(cis, alpha) * smith_g1(cos_, alpha) / (4.0 * cis * cos_)
    return np.where(valid, val, 0.0)


def specular_factor_dalpha(ci, co, ch, alpha):
    valid = (ci > 0) & (co > 0)
    cis = np.where(valid, np.maximum(ci, 1e-12), 1.0)
    cos_ = np.where(valid, np.maximum(co, 1e-12), 1.0)
    d = beckmann_d(ch, alpha)
    g_i, g_o = smith_g1(cis, alpha), smith_g1(cos_, alpha)
    dd = beckmann_d_dalpha(ch, alpha)
    dgi, dgo = smith_g1_dalpha(cis, alpha), smith_g1_dalpha(cos_, alpha)
    val = (dd * g_i * g_o + d * dgi * g_o + d * g_i * dgo) / (4.0 * cis * cos_)
    return np.where(valid, val, 0.0)


def eval_brdf(b: Brdf, n, wi, wo, polarimetric: bool = False, check: bool = True):
    """BRDF value ``f_r(wo <- wi)`` (scalar) or its 3x3 Mueller kernel.

    The Mueller kernel maps incident Stokes in the canonical frame of
    ``-wi`` to exitant Stokes in the canonical frame of ``wo``.
    """
    n, wi, wo, ci, co, ch, cd = _geometry(n, wi, wo)
    if check and (np.any(ci <= 0) or np.any(co <= 0)):
        raise ValueError("wi and wo must lie in the hemisphere of n")
    rs, rp = fresnel_amplitudes(cd, b.ior)
    spec = b.specular * specular_factor(ci, co, ch, b.roughness)
    diff = b.diffuse_albedo / math.pi * np.where((ci > 0) & (co > 0), 1.0, 0.0)
    if not polarimetric:
        out = diff + spec * 0.5 * (rs * rs + rp * rp)
        return float(out) if np.ndim(out) == 0 else out
    m = spec[..., None, None] * reflection_mueller(wi, wo, rs, rp)
    m[..., 0, 0] += diff
    return m


def fresnel_mueller(rs, rp):
    """Reflection Mueller matrix in the s/p frame (x axis = s direction)."""
    rs = np.asarray(rs, dtype=float)
    rp = np.asarray(rp, dtype=float)
    Rs, Rp = rs * rs, rp * rp
    m = np.zeros(rs.shape + (3, 3))
    m[..., 0, 0] = m[..., 1, 1] = 0.5 * (Rs + Rp)
    m[..., 0, 1] = m[..., 1, 0] = 0.5 * (Rs - Rp)
    m[..., 2, 2] = rs * rp
    return m


def reflection_frames(wi, wo):
    """Rotations into and out of the s/p frame: ``(R_in, R_out)``."""
    k_in = -normalize(wi)
    k_out = normalize(wo)
    x = np.cross(k_in, k_out)
    nrm = np.linalg.norm(x, axis=-1, keepdims=True)
    fallback = reference_x(k_in)
    x = np.where(nrm > 1e-12, x / np.where(nrm > 0, nrm, 1.0), fallback)
    r_in = stokes_rotation(frame_angle(reference_x(k_in), x, k_in))
    r_out = stokes_rotation(frame_angle(x, reference_x(k_out), k_out))
    return r_in, r_out


def reflection_mueller(wi, wo, rs, rp):
    """Fresnel Mueller matrix between the canonical frames of ``-wi`` and ``wo``."""
    r_in, r_out = reflection_frames(wi, wo)
    return r_out @ fresnel_mueller(rs, rp) @ r_in


def hemispherical_reflectance(b: Brdf, n, wi, depth: int = 6) -> float:
    """Directional-hemispherical reflectance by sael quadrature."""
    table = sael_table(depth)
    n = normalize(np.asarray(n, dtype=float))
    wo = table.directions
    co = wo @ n
    sel = co > 0
    f = eval_brdf(b, n, np.broadcast_to(wi, wo[sel].shape), wo[sel], check=False)
    return float(np.sum(f * co[sel] * table.weights[sel]))


# -- BLIFs ------------------------------------------------------------------------


class Blif:
    """Maps a mediel's incident light field to its exitant light field."""

    emissive = False

    def scatter(self, incident: np.ndarray, depth: int, normal=None) -> np.ndarray:
        raise NotImplementedError


class IdentityBlif(Blif):
    """Empty space: light leaves in the direction it was travelling."""

    def scatter(self, incident, depth, normal=None):
        return np.asarray(incident)[sael_table(depth).antipode_index()].copy()


class EmissiveBlif(Blif):
    """Constant or per-sael emitted radiance, no reflection."""

    emissive = True

    def __init__(self, radiance: Union[float, np.ndarray, Sao]):
        if isinstance(radiance, Sao):
            self.radiance = radiance
        else:
            r = np.atleast_1d(np.asarray(radiance, dtype=float))
            if r[0] < 0:
                raise ValueError("emitted radiance must be non-negative")
            self.radiance = r

    def emission(self, depth: int, channels: int) -> np.ndarray:
        m = len(sael_table(depth))
        if isinstance(self.radiance, Sao):
            vals = self.radiance.values_at_depth(depth)
        else:
            vals = np.broadcast_to(self.radiance, (m, len(self.radiance)))
        out = np.zeros((m, channels))
        c = min(channels, vals.shape[1])
        out[:, :c] = vals[:, :c]
        return out

    def scatter(self, incident, depth, normal=None):
        incident = np.asarray(incident)
        return self.emission(depth, incident.shape[1])


class OpaqueSurfelBlif(Blif):
    """Opaque surfel: the BLIF reduces to a BRDF about the surfel normal."""

    def __init__(self, brdf: Brdf, polarimetric: bool = False, chunk: int = 512):
        self.brdf = brdf
        self.polarimetric = polarimetric
        self.chunk = chunk

    def scatter(self, incident, depth, normal=None):
        if normal is None:
            raise ValueError("an opaque surfel needs a normal")
        incident = np.asarray(incident, dtype=float)
        table = sael_table(depth)
        n = normalize(np.asarray(normal, dtype=float))
        dirs = table.directions
        cos = dirs @ n
        up = np.nonzero(cos > 0)[0]
        out = np.zeros_like(incident)
        wi = dirs[up]
        w_in = table.weights[up] * cos[up]
        l_in = incident[up]
        channels = incident.shape[1]
        irradiance = float(np.sum(w_in * l_in[:, 0]))
        out[up, 0] = self.brdf.diffuse_albedo / math.pi * irradiance
        if self.brdf.specular == 0:
            return out
        for s in range(0, len(up), self.chunk):
            idx = up[s:s + self.chunk]
            wo = dirs[idx]
            _, _, _, ci, co, ch, cd = _geometry(n, wi[None, :, :], wo[:, None, :])
            spec = self.brdf.specular * specular_factor(ci, co, ch, self.brdf.roughness) * w_in[None, :]
            rs, rp = fresnel_amplitudes(cd, self.brdf.ior)
            if channels == 1 or not self.polarimetric:
                out[idx, 0] += np.sum(spec * 0.5 * (rs * rs + rp * rp) * l_in[None, :, 0], axis=1)
            else:
                shape = spec.shape
                m = reflection_mueller(np.broadcast_to(wi[None], shape + (3,)),
                                       np.broadcast_to(wo[:, None], shape + (3,)),
                                       np.broadcast_to(rs, shape), np.broadcast_to(rp, shape))
                out[idx] += np.einsum("oi,oirc,ic->or", spec, m, l_in)
        return out


def exitant_radiance(blif: Blif, n, incident: Sao, wo, depth: Optional[int] = None) -> np.ndarray:
    """Exitant radiance toward ``wo`` by sael quadrature of the reflection integral."""
    depth = depth or incident.depth()
    inc = incident.values_at_depth(depth)
    table = sael_table(depth)
    wo = normalize(np.asarray(wo, dtype=float))
    if isinstance(blif, EmissiveBlif):
        return blif.emission(depth, incident.channels)[0] if not isinstance(blif.radiance, Sao) \
            else blif.radiance.lookup(wo, depth).radiance
    if isinstance(blif, IdentityBlif):
        return incident.lookup(-wo, depth).radiance
    n = normalize(np.asarray(n, dtype=float))
    wi = table.directions
    cos = wi @ n
    sel = cos > 0
    if wo @ n <= 0:
        return np.zeros(incident.channels)
    w = table.weights[sel] * cos[sel]
    wo_b = np.broadcast_to(wo, wi[sel].shape)
    if incident.channels == 1 or not getattr(blif, "polarimetric", False):
        f = eval_brdf(blif.brdf, n, wi[sel], wo_b, check=False)
        out = np.zeros(incident.channels)
        out[0] = np.sum(f * w * inc[sel, 0])
        return out
    m = eval_brdf(blif.brdf, n, wi[sel], wo_b, polarimetric=True, check=False)
    return np.einsum("i,irc,ic->r", w, m, inc[sel])


def scatter_to_sao(blif: Blif, incident: Sao, depth: int, normal=None) -> Sao:
    out = Sao(incident.center, EXITANT, incident.channels, max(incident.max_depth, depth))
    out.set_uniform(depth, blif.scatter(incident.values_at_depth(depth), depth, normal))
    return out
