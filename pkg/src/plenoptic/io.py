"""Portable float maps and plain-text reports."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, image) -> None:
    """Little-endian PFM: ``Pf`` for ``(H, W)``, ``PF`` for ``(H, W, 3)``; rows stored bottom to top."""
    a = np.asarray(image, dtype="<f4")
    if a.ndim == 2:
        header = "Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError("PFM images must be (H, W) or (H, W, 3)")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    lines = data.split(b"\n", 3)
    if len(lines) < 4 or lines[0] not in (b"Pf", b"PF"):
        raise ValueError(f"{path}: not a PFM file")
    channels = 1 if lines[0] == b"Pf" else 3
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    if len(lines[3]) < 4 * count:
        raise ValueError(f"{path}: truncated PFM data")
    a = np.frombuffer(lines[3][:4 * count], dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return a.reshape(shape)[::-1].copy()


def fmt(x) -> str:
    """Floats with 9 significant digits; other values via ``str``."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def format_report(title: str, rows) -> str:
    """``key = value`` lines under a title, for diffable reports."""
    out = [f"# {title}"]
    for key, value in rows:
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(fmt(v) for v in value)
        else:
            value = fmt(value)
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
