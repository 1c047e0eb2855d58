"""Exact and fixed-point geometric primitives.

Positions live in the unit universe cube ``[0, 1]^3``. Fixed-point values are
plain Python integers scaled by ``2**FRAC_BITS`` and confined to the signed
64-bit range, which keeps every projection update a shift or an add.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

FRAC_BITS = 30
ONE = 1 << FRAC_BITS
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1
MAX_VLO_DEPTH = 20


class FixedPointError(ArithmeticError):
    """Raised when a fixed-point update would overflow or lose bits."""


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite Vec3 {self!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def __iter__(self):
        return iter((self.x, self.y, self.z))


@dataclass(frozen=True)
class Direction:
    """Unit direction. The constructor normalizes its input."""

    dx: float
    dy: float
    dz: float

    def __init__(self, dx: float, dy: float, dz: float):
        n = math.sqrt(dx * dx + dy * dy + dz * dz)
        if not math.isfinite(n) or n == 0.0:
            raise ValueError("direction must be finite and non-zero")
        object.__setattr__(self, "dx", dx / n)
        object.__setattr__(self, "dy", dy / n)
        object.__setattr__(self, "dz", dz / n)

    @classmethod
    def from_array(cls, a) -> "Direction":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz], dtype=float)

    def __neg__(self) -> "Direction":
        return Direction(-self.dx, -self.dy, -self.dz)

    def __iter__(self):
        return iter((self.dx, self.dy, self.dz))


@dataclass(frozen=True)
class StokesVector:
    """Linear Stokes vector ``[S0, S1, S2]``; circular S3 is not modeled."""

    s0: float
    s1: float = 0.0
    s2: float = 0.0

    def __post_init__(self):
        if self.s0 < 0:
            raise ValueError(f"S0 must be non-negative, got {self.s0}")

    def as_array(self) -> np.ndarray:
        return np.array([self.s0, self.s1, self.s2], dtype=float)

    @classmethod
    def from_array(cls, a) -> "StokesVector":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def is_physical(self, tol: float = 1e-12) -> bool:
        return math.hypot(self.s1, self.s2) <= self.s0 * (1 + tol) + tol


def dolp(s) -> float:
    """Degree of linear polarization; the zero vector has DoLP 0."""
    if isinstance(s, StokesVector):
        s0, s1, s2 = s.s0, s.s1, s.s2
    else:
        s0, s1, s2 = (float(v) for v in s[:3])
    if s0 == 0:
        return 0.0
    return math.hypot(s1, s2) / s0


def dolp_array(stokes: np.ndarray) -> np.ndarray:
    """Vectorized DoLP over the last axis of ``(..., 3)`` Stokes arrays."""
    s0 = stokes[..., 0]
    lin = np.hypot(stokes[..., 1], stokes[..., 2])
    out = np.zeros_like(s0)
    np.divide(lin, s0, out=out, where=s0 > 0)
    return out


def stokes_from_analyzer_intensities(i0, i45, i90, i135) -> StokesVector:
    """Stokes vector from ideal linear analyzers at 0/45/90/135 degrees."""
    if min(i0, i45, i90, i135) < 0:
        raise ValueError("analyzer intensities must be non-negative")
    return StokesVector(
        s0=(i0 + i45 + i90 + i135) / 2.0,
        s1=i0 - i90,
        s2=i45 - i135,
    )


def stokes_images_from_analyzer(images: np.ndarray) -> np.ndarray:
    """Array form: ``images`` is ``(4, H, W)`` for 0/45/90/135; returns ``(H, W, 3)``."""
    images = np.asarray(images, dtype=float)
    if np.any(images < 0):
        raise ValueError("analyzer intensities must be non-negative")
    i0, i45, i90, i135 = images
    return np.stack([(i0 + i45 + i90 + i135) / 2.0, i0 - i90, i45 - i135], axis=-1)


def malus_intensity(stokes: np.ndarray, theta: float) -> np.ndarray:
    """Intensity behind an ideal linear polarizer at angle ``theta`` (radians)."""
    stokes = np.asarray(stokes, dtype=float)
    return 0.5 * (stokes[..., 0] + stokes[..., 1] * math.cos(2 * theta)
                  + stokes[..., 2] * math.sin(2 * theta))


# -- fixed point -------------------------------------------------------------


@dataclass(frozen=True)
class FixedCoord:
    """Exact dyadic value ``value / 2**frac_bits``."""

    value: int
    frac_bits: int = FRAC_BITS

    def __post_init__(self):
        _check_range(self.value)

    @classmethod
    def from_real(cls, x, frac_bits: int = FRAC_BITS) -> "FixedCoord":
        scaled = Fraction(x) * (1 << frac_bits)
        if scaled.denominator != 1:
            raise FixedPointError(f"{x} is not representable with {frac_bits} fractional bits")
        return cls(int(scaled), frac_bits)

    def to_fraction(self) -> Fraction:
        return Fraction(self.value, 1 << self.frac_bits)

    def __float__(self) -> float:
        return self.value / (1 << self.frac_bits)


def _check_range(v: int) -> int:
    if v < INT64_MIN or v > INT64_MAX:
        raise FixedPointError("fixed-point value outside the signed 64-bit range")
    return v


def shr_exact(v: int, k: int = 1) -> int:
    """Arithmetic right shift that refuses to discard set bits."""
    if v & ((1 << k) - 1):
        raise FixedPointError(f"shift of {v} by {k} would round")
    return v >> k


def push_halve(span, offset):
    """One PUSH update: ``(span >> 1) + offset``, exact in fixed point.

    Accepts raw integers or :class:`FixedCoord` (result type follows ``span``).
    """
    if isinstance(span, FixedCoord):
        if not isinstance(offset, FixedCoord) or offset.frac_bits != span.frac_bits:
            raise TypeError("span and offset must share a fixed-point format")
        return FixedCoord(_check_range(shr_exact(span.value) + offset.value), span.frac_bits)
    return _check_range(shr_exact(int(span)) + int(offset))


def to_fixed(x) -> int:
    """Exact conversion of a dyadic real (float or Fraction) to raw fixed point."""
    return FixedCoord.from_real(x).value


# -- frames ------------------------------------------------------------------


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def reference_x(k: np.ndarray) -> np.ndarray:
    """Canonical Stokes reference axis for propagation directions ``k``.

    The axis is ``normalize(up x k)`` with ``up = +z``, falling back to ``+y``
    when ``k`` is within about 0.6 degrees of the z axis.
    """
    k = np.asarray(k, dtype=float)
    up = np.zeros_like(k)
    near_pole = np.abs(k[..., 2]) > 0.99995
    up[..., 2] = np.where(near_pole, 0.0, 1.0)
    up[..., 1] = np.where(near_pole, 1.0, 0.0)
    return normalize(np.cross(up, k))


def stokes_rotation(phi) -> np.ndarray:
    """Mueller matrix re-expressing Stokes in a frame rotated by ``phi`` about k."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(2 * phi), np.sin(2 * phi)
    m = np.zeros(phi.shape + (3, 3))
    m[..., 0, 0] = 1.0
    m[..., 1, 1] = c
    m[..., 1, 2] = s
    m[..., 2, 1] = -s
    m[..., 2, 2] = c
    return m


def frame_angle(x_from: np.ndarray, x_to: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Signed angle about ``k`` that carries reference axis ``x_from`` onto ``x_to``."""
    cross = np.cross(x_from, x_to)
    return np.arctan2(np.sum(cross * k, axis=-1), np.sum(x_from * x_to, axis=-1))
