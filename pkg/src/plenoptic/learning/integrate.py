"""Integration of surface normals into a depth map."""
from __future__ import annotations

import numpy as np
from scipy import fft

MIN_NZ = 0.1


def normals_to_gradients(normals: np.ndarray):
    """``p = -nx/nz``, ``q = -ny/nz``; rejects grazing normals (``nz <= 0.1``)."""
    n = np.asarray(normals, dtype=float)
    if n.ndim != 3 or n.shape[-1] != 3:
        raise ValueError("normals must be an (H, W, 3) grid")
    if not np.all(np.isfinite(n)):
        raise ValueError("normals must be finite")
    if np.any(n[..., 2] <= MIN_NZ):
        raise ValueError(f"grazing normal found (nz <= {MIN_NZ})")
    return -n[..., 0] / n[..., 2], -n[..., 1] / n[..., 2]


def integrate_gradients(p: np.ndarray, q: np.ndarray, spacing: float = 1.0, method: str = "dct") -> np.ndarray:
    """Mean-free height whose x/y slopes best match ``(p, q)``.

    ``x`` runs along columns and ``y`` along rows. ``"dct"`` solves the
    least-squares problem over grid edges with trapezoid slope targets; the
    normal equations are the Neumann grid Laplacian, which the type-II DCT
    diagonalizes, so quadratic surfaces come back exactly. ``"fft"`` is the
    periodic frequency-domain projection, exact for periodic band-limited
    fields.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 2:
        raise ValueError("p and q must be 2-D arrays of equal shape")
    if method == "dct":
        z = _integrate_dct(p, q, spacing)
    elif method == "fft":
        z = _integrate_fft(p, q, spacing)
    else:
        raise ValueError("method must be 'dct' or 'fft'")
    return z - z.mean()


def _integrate_dct(p, q, spacing):
    h, w = p.shape
    gx = 0.5 * spacing * (p[:, :-1] + p[:, 1:])
    gy = 0.5 * spacing * (q[:-1, :] + q[1:, :])
    b = np.zeros((h, w))
    b[:, :-1] -= gx
    b[:, 1:] += gx
    b[:-1, :] -= gy
    b[1:, :] += gy
    lam_x = 2.0 - 2.0 * np.cos(np.pi * np.arange(w) / w)
    lam_y = 2.0 - 2.0 * np.cos(np.pi * np.arange(h) / h)
    denom = lam_y[:, None] + lam_x[None, :]
    bh = fft.dctn(b, type=2, norm="ortho")
    denom[0, 0] = 1.0
    zh = bh / denom
    zh[0, 0] = 0.0
    return fft.idctn(zh, type=2, norm="ortho")


def _integrate_fft(p, q, spacing):
    h, w = p.shape
    wx = 2 * np.pi * fft.fftfreq(w, d=spacing)
    wy = 2 * np.pi * fft.fftfreq(h, d=spacing)
    WX, WY = np.meshgrid(wx, wy)
    P = fft.fft2(p)
    Q = fft.fft2(q)
    denom = WX ** 2 + WY ** 2
    denom[0, 0] = 1.0
    Z = (-1j * WX * P - 1j * WY * Q) / denom
    Z[0, 0] = 0.0
    return np.real(fft.ifft2(Z))


def integrate_normals(normals: np.ndarray, spacing: float = 1.0, method: str = "dct") -> np.ndarray:
    p, q = normals_to_gradients(normals)
    return integrate_gradients(p, q, spacing, method)
