"""Reconstruction quality metrics on (C, H, W) cubes and the per-pixel error map."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AllElementsGuarded,
    ConstantReference,
    IdenticalImages,
    InvalidParam,
    IoFailure,
    ShapeMismatch,
    ZeroVector,
)

MRAE_GUARD = 1e-6
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(x, "data", x), dtype=np.float64)
    b = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cubes differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeMismatch(f"expected (C, H, W) cubes, got {a.shape}")
    return a, b


def rmse(x, x_rec) -> float:
    a, b = _pair(x, x_rec)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_per_band(x, x_rec) -> np.ndarray:
    a, b = _pair(x, x_rec)
    return np.sqrt(np.mean((a - b) ** 2, axis=(1, 2)))


def mrae(x, x_rec) -> float:
    """Mean of ``|x - x_rec| / |x|`` over elements with ``|x| >= 1e-6``."""
    a, b = _pair(x, x_rec)
    keep = np.abs(a) >= MRAE_GUARD
    if not keep.any():
        raise AllElementsGuarded("every reference element is below the MRAE guard")
    return float(np.mean(np.abs(a[keep] - b[keep]) / np.abs(a[keep])))


def _zeta(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (a - lo) / (hi - lo) * 255.0


def psnr(x, x_rec) -> float:
    """PSNR in dB after scaling both cubes to [0, 255] by the reference's min and max."""
    a, b = _pair(x, x_rec)
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        raise ConstantReference("reference cube is constant; cannot scale to [0, 255]")
    mse = float(np.mean((_zeta(a, lo, hi) - _zeta(b, lo, hi)) ** 2))
    if mse == 0.0:
        raise IdenticalImages("cubes are identical; PSNR is infinite")
    return 10.0 * np.log10(255.0 ** 2 / mse)


def ssim_per_band(x, x_rec, c1: float = SSIM_C1, c2: float = SSIM_C2) -> np.ndarray:
    """SSIM of every band from whole-band means, variances and covariance."""
    a, b = _pair(x, x_rec)
    c = a.shape[0]
    a2, b2 = a.reshape(c, -1), b.reshape(c, -1)
    mu_a, mu_b = a2.mean(axis=1), b2.mean(axis=1)
    da, db = a2 - mu_a[:, None], b2 - mu_b[:, None]
    var_a, var_b = (da ** 2).mean(axis=1), (db ** 2).mean(axis=1)
    cov = (da * db).mean(axis=1)
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(x, x_rec) -> float:
    return float(np.mean(ssim_per_band(x, x_rec)))


def _angles_deg(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Angle between matching rows of u and v, in degrees."""
    nu, nv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
    if np.any(nu == 0) or np.any(nv == 0):
        raise ZeroVector("SAM is undefined for a zero vector")
    cos = np.clip(np.sum(u * v, axis=1) / (nu * nv), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def sam_per_band(x, x_rec) -> np.ndarray:
    a, b = _pair(x, x_rec)
    c = a.shape[0]
    return _angles_deg(a.reshape(c, -1), b.reshape(c, -1))


def sam(x, x_rec, mode: str = "band") -> float:
    """Mean spectral angle in degrees.

    ``mode="band"`` compares each band as a spatial vector; ``mode="pixel"``
    compares each pixel's spectrum (the usual convention).
    """
    a, b = _pair(x, x_rec)
    if mode == "band":
        return float(np.mean(sam_per_band(a, b)))
    if mode == "pixel":
        c = a.shape[0]
        return float(np.mean(_angles_deg(a.reshape(c, -1).T, b.reshape(c, -1).T)))
    raise InvalidParam(f"sam mode must be 'band' or 'pixel', got {mode!r}")


@dataclass
class MetricReport:
    rmse: float
    mrae: float
    psnr_db: float
    ssim_mean: float
    sam_deg: float
    sam_mode: str = "band"
    per_band: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse, "mrae": self.mrae, "psnr_db": self.psnr_db,
            "ssim_mean": self.ssim_mean, "sam_deg": self.sam_deg, "sam_mode": self.sam_mode,
            "per_band": {k: [float(v) for v in arr] for k, arr in self.per_band.items()},
        }

    def write_json(self, path) -> None:
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        except OSError as e:
            raise IoFailure(f"cannot write {path}: {e}") from e


def evaluate(x, x_rec, sam_mode: str = "band") -> MetricReport:
    """All five scalars plus per-band RMSE, SSIM and (band-mode) SAM arrays."""
    a, b = _pair(x, x_rec)
    return MetricReport(
        rmse=rmse(a, b),
        mrae=mrae(a, b),
        psnr_db=psnr(a, b),
        ssim_mean=ssim(a, b),
        sam_deg=sam(a, b, sam_mode),
        sam_mode=sam_mode,
        per_band={"rmse": rmse_per_band(a, b), "ssim": ssim_per_band(a, b), "sam_deg": sam_per_band(a, b)},
    )


def error_map(x, x_rec, band: int | str = "all") -> np.ndarray:
    """Per-pixel RMSE over the chosen band(s), min-max scaled to 8-bit (H, W)."""
    a, b = _pair(x, x_rec)
    if band != "all":
        i = int(band)
        if not 0 <= i < a.shape[0]:
            raise InvalidParam(f"band {i} outside 0..{a.shape[0] - 1}")
        a, b = a[i:i + 1], b[i:i + 1]
    err = np.sqrt(np.mean((a - b) ** 2, axis=0))
    lo, hi = err.min(), err.max()
    if hi == lo:
        return np.zeros(err.shape, dtype=np.uint8)
    return np.round((err - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(img: np.ndarray, path) -> None:
    """Binary (P5) 8-bit greyscale PGM."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise IoFailure(f"{path} is not a binary PGM written by write_pgm")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3][:w * h], dtype=np.uint8).reshape(h, w)
