"""Synthetic dent panel and its polarimetric forward model.

All lengths are meters. The panel lies near ``z = 0`` centered on the
origin; cameras look down at it from half a meter away. Incident light is a
far-field, unpolarized environment discretized on an SAO level, so the
incident field is identical at every surfel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import frame_angle, normalize, reference_x
from ..physics import (beckmann_d, beckmann_d_dalpha, fresnel_amplitudes, fresnel_amplitudes_deta,
                       smith_g1, smith_g1_dalpha)
from ..sao import sael_table


@dataclass(frozen=True)
class Dent:
    center: tuple
    radius: float
    depth: float


@dataclass(frozen=True)
class Lobe:
    direction: tuple
    intensity: float
    width_deg: float


@dataclass(frozen=True)
class Environment:
    """Unpolarized sky: sloped base, bright lobes, dim floor below the horizon."""

    base: float = 0.3
    gradient: float = 0.6
    floor: float = 0.05
    lobes: tuple = (
        Lobe((0.55, 0.25, 0.80), 6.0, 12.0),
        Lobe((-0.45, 0.50, 0.74), 3.0, 18.0),
        Lobe((-0.20, -0.65, 0.73), 4.0, 9.0),
        Lobe((0.05, 0.10, 0.99), 1.5, 25.0),
    )

    def __call__(self, dirs: np.ndarray) -> np.ndarray:
        d = normalize(np.asarray(dirs, dtype=float))
        z = d[..., 2]
        out = np.where(z > 0, self.base * (1.0 + self.gradient * d[..., 0] * 0.5 + 0.4 * z), self.floor)
        for lobe in self.lobes:
            mu = normalize(np.asarray(lobe.direction, dtype=float))
            w = math.radians(lobe.width_deg)
            out = out + lobe.intensity * np.exp((d @ mu - 1.0) / (w * w)) * (z > 0)
        return out[..., None]


@dataclass(frozen=True)
class Panel:
    grid: int = 64
    extent: float = 0.05
    curvature: tuple = (0.6, 0.4, 0.1)
    dents: tuple = ()

    @property
    def spacing(self) -> float:
        return self.extent / self.grid

    def coords(self):
        c = (np.arange(self.grid) + 0.5) * self.spacing - self.extent / 2
        return np.meshgrid(c, c, indexing="xy")

    def height(self, x, y):
        """Height and its gradient ``(z, z_x, z_y)``."""
        kxx, kyy, kxy = self.curvature
        z = 0.5 * kxx * x * x + 0.5 * kyy * y * y + kxy * x * y
        zx = kxx * x + kxy * y
        zy = kyy * y + kxy * x
        for d in self.dents:
            dx, dy = x - d.center[0], y - d.center[1]
            g = d.depth * np.exp(-(dx * dx + dy * dy) / (2 * d.radius * d.radius))
            z = z - g
            zx = zx + g * dx / (d.radius * d.radius)
            zy = zy + g * dy / (d.radius * d.radius)
        return z, zx, zy

    def surfels(self):
        """Positions ``(N*N, 3)`` and unit normals ``(N*N, 3)`` in row-major order."""
        x, y = self.coords()
        z, zx, zy = self.height(x, y)
        pos = np.stack([x, y, z], axis=-1).reshape(-1, 3)
        nrm = normalize(np.stack([-zx, -zy, np.ones_like(z)], axis=-1)).reshape(-1, 3)
        return pos, nrm


def ooi_cameras(count: int = 12, distance: float = 0.5, elevations_deg=(40.0, 65.0)) -> np.ndarray:
    """Inward-facing camera positions on rings around the panel center."""
    per_ring = [count // len(elevations_deg) + (1 if i < count % len(elevations_deg) else 0)
                for i in range(len(elevations_deg))]
    out = []
    for ring, (n, el) in enumerate(zip(per_ring, elevations_deg)):
        e = math.radians(el)
        for k in range(n):
            az = 2 * math.pi * (k + 0.5 * ring) / n
            out.append([distance * math.cos(e) * math.cos(az), distance * math.cos(e) * math.sin(az),
                        distance * math.sin(e)])
    return np.array(out)


def loi_directions(count: int = 86, min_z: float = 0.05) -> np.ndarray:
    """Outward-facing capture directions: a Fibonacci spiral over the upper hemisphere."""
    k = np.arange(count) + 0.5
    z = min_z + (1.0 - min_z) * (1.0 - k / count)
    r = np.sqrt(1.0 - z * z)
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def loi_rays(direction, resolution: int, fov_deg: float) -> np.ndarray:
    f = normalize(np.asarray(direction, dtype=float))
    up = np.array([0.0, 0.0, 1.0]) if abs(f[2]) < 0.99 else np.array([0.0, 1.0, 0.0])
    r = normalize(np.cross(f, up))
    d = np.cross(f, r)
    half = math.tan(math.radians(fov_deg) / 2)
    s = ((np.arange(resolution) + 0.5) / resolution * 2 - 1) * half
    gx, gy = np.meshgrid(s, s)
    return normalize(f + gx[..., None] * r + gy[..., None] * d).reshape(-1, 3)


# -- design tensors ---------------------------------------------------------------


@dataclass
class Design:
    """Normal-independent geometry for a block of surfels.

    ``h``, ``cd``, ``c2``, ``s2`` are ``(S, J, T)`` arrays over surfels,
    observations and incident saels: half vectors, the Fresnel angle
    cosine, and the frame rotation ``(cos 2psi, sin 2psi)`` taking the s/p
    frame to the canonical frame of the exitant ray.
    """

    dirs: np.ndarray
    omega: np.ndarray
    wo: np.ndarray
    mask: np.ndarray
    h: np.ndarray
    cd: np.ndarray
    c2: np.ndarray
    s2: np.ndarray


def incident_saels(depth: int, min_z: float = -0.2) -> np.ndarray:
    """Indices of saels that can reach near-horizontal surfels."""
    table = sael_table(depth)
    return np.nonzero(table.directions[:, 2] > min_z)[0]


def build_design(positions: np.ndarray, cameras: np.ndarray, depth: int, sael_idx: np.ndarray,
                 mask: np.ndarray = None) -> Design:
    table = sael_table(depth)
    dirs = table.directions[sael_idx]
    omega = table.weights[sael_idx]
    cameras = np.asarray(cameras, dtype=float)
    if cameras.ndim == 2:
        cameras = cameras[None, :, :]
    wo = normalize(cameras - positions[:, None, :])
    if mask is None:
        mask = np.ones(wo.shape[:2], dtype=bool)
    wi = dirs[None, None, :, :]
    h = normalize(wi + wo[:, :, None, :])
    cd = np.clip(np.sum(wi * h, axis=-1), 0.0, 1.0)
    k_in = -np.broadcast_to(wi, h.shape)
    k_out = np.broadcast_to(wo[:, :, None, :], h.shape)
    x = np.cross(k_in, k_out)
    nx = np.linalg.norm(x, axis=-1, keepdims=True)
    x = np.where(nx > 1e-12, x / np.where(nx > 0, nx, 1.0), reference_x(k_in))
    psi = frame_angle(x, reference_x(k_out), k_out)
    return Design(dirs, omega, wo, mask, h, cd, np.cos(2 * psi), np.sin(2 * psi))


@dataclass
class Prediction:
    stokes: np.ndarray
    grad: dict = field(default_factory=dict)


def predict(design: Design, normals: np.ndarray, params, radiance: np.ndarray, grad: bool = False) -> Prediction:
    """Predicted exitant Stokes toward each observation, ``(S, K, J, 3)``.

    ``normals`` is ``(S, K, 3)`` (``K`` candidate normals per surfel),
    ``params`` is ``(diffuse_albedo, roughness, ior, specular)`` and
    ``radiance`` the incident S0 per selected sael. With ``grad`` the
    derivatives with respect to the four parameters are returned (``K`` = 1
    is typical then).
    """
    rho, alpha, eta, ks = (float(v) for v in params)
    n = normals
    L = design.omega * radiance
    ci = n @ design.dirs.T
    co = np.einsum("skx,sjx->skj", n, design.wo)
    ch = np.einsum("skx,sjtx->skjt", n, design.h)
    cip = np.maximum(ci, 0.0)
    irr = cip @ L
    valid_o = (co > 0) & design.mask[:, None, :]
    co_s = np.where(valid_o, np.maximum(co, 1e-12), 1.0)
    rs, rp = fresnel_amplitudes(design.cd, eta)
    fp = 0.5 * (rs * rs + rp * rp)
    fm = 0.5 * (rs * rs - rp * rp)
    g_i = np.where(ci > 0, smith_g1(np.where(ci > 0, ci, 1.0), alpha), 0.0)
    g_o = np.where(valid_o, smith_g1(co_s, alpha), 0.0)
    scale = g_o / (4.0 * co_s)
    d = beckmann_d(ch, alpha)
    a = d * (g_i * L)[:, :, None, :]
    p0 = np.einsum("skjt,sjt->skj", a, fp)
    p1 = np.einsum("skjt,sjt->skj", a, fm * design.c2)
    p2 = -np.einsum("skjt,sjt->skj", a, fm * design.s2)
    spec = np.stack([p0, p1, p2], axis=-1) * scale[..., None]
    diff = np.zeros_like(spec)
    diff[..., 0] = (irr / math.pi)[:, :, None] * valid_o
    out = Prediction(rho * diff + ks * spec)
    if not grad:
        return out
    out.grad["diffuse_albedo"] = diff
    out.grad["specular"] = spec
    # roughness: D, G1(in) and G1(out) all depend on alpha
    dd = beckmann_d_dalpha(ch, alpha)
    dgi = np.where(ci > 0, smith_g1_dalpha(np.where(ci > 0, ci, 1.0), alpha), 0.0)
    dgo = np.where(valid_o, smith_g1_dalpha(co_s, alpha), 0.0)
    da = dd * (g_i * L)[:, :, None, :] + d * (dgi * L)[:, :, None, :]
    q0 = np.einsum("skjt,sjt->skj", da, fp)
    q1 = np.einsum("skjt,sjt->skj", da, fm * design.c2)
    q2 = -np.einsum("skjt,sjt->skj", da, fm * design.s2)
    dspec = np.stack([q0, q1, q2], axis=-1) * scale[..., None] + spec * (dgo / np.where(g_o > 0, g_o, 1.0))[..., None]
    out.grad["roughness"] = ks * dspec
    drs, drp = fresnel_amplitudes_deta(design.cd, eta)
    dfp = rs * drs + rp * drp
    dfm = rs * drs - rp * drp
    e0 = np.einsum("skjt,sjt->skj", a, dfp)
    e1 = np.einsum("skjt,sjt->skj", a, dfm * design.c2)
    e2 = -np.einsum("skjt,sjt->skj", a, dfm * design.s2)
    out.grad["ior"] = ks * np.stack([e0, e1, e2], axis=-1) * scale[..., None]
    return out


def radiance_design(design: Design, normals: np.ndarray, params) -> np.ndarray:
    """Linear map from incident sael S0 to predicted Stokes: ``(S, J, 3, T)``."""
    rho, alpha, eta, ks = (float(v) for v in params)
    n = normals
    ci = n @ design.dirs.T
    co = np.einsum("sx,sjx->sj", n, design.wo)
    ch = np.einsum("sx,sjtx->sjt", n, design.h)
    valid_o = (co > 0) & design.mask
    co_s = np.where(valid_o, np.maximum(co, 1e-12), 1.0)
    rs, rp = fresnel_amplitudes(design.cd, eta)
    fp = 0.5 * (rs * rs + rp * rp)
    fm = 0.5 * (rs * rs - rp * rp)
    g_i = np.where(ci > 0, smith_g1(np.where(ci > 0, ci, 1.0), alpha), 0.0)
    g_o = np.where(valid_o, smith_g1(co_s, alpha), 0.0)
    a = beckmann_d(ch, alpha) * g_i[:, None, :] * (g_o / (4 * co_s))[:, :, None] * design.omega * ks
    out = np.zeros(a.shape[:2] + (3,) + a.shape[2:])
    out[:, :, 0] = a * fp + (rho / math.pi) * (np.maximum(ci, 0) * design.omega)[:, None, :] * valid_o[:, :, None]
    out[:, :, 1] = a * fm * design.c2
    out[:, :, 2] = -a * fm * design.s2
    return out
