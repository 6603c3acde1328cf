"""Hyperspectral cubes, the HSC1 file format, spectral response operators,
synthetic scenes and range/null-space projection.

Cubes are stored band-major: ``data[band, row, col]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    DimensionMismatch,
    HeaderMismatch,
    InvalidParam,
    IoFailure,
    MissingFile,
    NonFiniteData,
    RankDeficient,
)

MAGIC = "HSC1"
PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class HsiCube:
    """A C-band image cube, shape ``(bands, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise DimensionMismatch(f"cube data must be (bands, height, width), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteData("cube contains NaN or Inf")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def pixels(self) -> np.ndarray:
        """Spectra as rows, shape ``(height*width, bands)``."""
        return self.data.reshape(self.bands, -1).T

    def __eq__(self, other):
        if not isinstance(other, HsiCube):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"{type(self).__name__}(bands={self.bands}, height={self.height}, width={self.width})"


class RgbImage(HsiCube):
    """Three-channel image, channel-major like :class:`HsiCube`."""

    def __post_init__(self):
        super().__post_init__()
        if self.data.shape[0] != 3:
            raise DimensionMismatch(f"RGB image needs 3 channels, got {self.data.shape[0]}")


# ---------------------------------------------------------------- file I/O

def save_cube(cube: HsiCube, path) -> None:
    header = {
        "magic": MAGIC,
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "dtype": "f32",
        "order": "band-major",
    }
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_cube(path) -> HsiCube:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise HeaderMismatch("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"unparseable header: {exc}") from exc
    if header.get("magic") != MAGIC or header.get("dtype") != "f32" or header.get("order") != "band-major":
        raise HeaderMismatch(f"unsupported header {header}")
    try:
        w, h, c = int(header["width"]), int(header["height"]), int(header["bands"])
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderMismatch(f"bad dimensions in header: {exc}") from exc
    payload = raw[nl + 1:]
    if w < 1 or h < 1 or c < 1 or len(payload) != 4 * w * h * c:
        raise HeaderMismatch(f"header declares {w}x{h}x{c} but payload has {len(payload)} bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise NonFiniteData(f"{path} contains NaN or Inf")
    data = data.astype(np.float64)
    return RgbImage(data) if c == 3 else HsiCube(data)


# ---------------------------------------------------------------- SRF

@dataclass(frozen=True, eq=False)
class SrfOperator:
    """Spectral response ``d`` (3 x C) with its pseudo-inverse and projectors."""

    d: np.ndarray
    d_pinv: np.ndarray
    range_proj: np.ndarray
    null_proj: np.ndarray
    noise_sigma: float = 0.0

    @classmethod
    def from_matrix(cls, d, noise_sigma: float = 0.0) -> "SrfOperator":
        d = np.array(d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != 3:
            raise DimensionMismatch(f"SRF must be 3 x C, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise NonFiniteData("SRF contains NaN or Inf")
        if noise_sigma < 0:
            raise InvalidParam("noise_sigma must be >= 0")
        d_pinv = pinv_svd(d)
        c = d.shape[1]
        range_proj = d_pinv @ d
        null_proj = np.eye(c) - range_proj
        for arr in (d, d_pinv, range_proj, null_proj):
            arr.flags.writeable = False
        return cls(d, d_pinv, range_proj, null_proj, float(noise_sigma))

    @property
    def bands(self) -> int:
        return self.d.shape[1]


def pinv_svd(d: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a rank-3, 3 x C matrix via SVD."""
    u, s, vt = np.linalg.svd(d, full_matrices=False)
    keep = s > rtol * s.max() if s.size and s.max() > 0 else np.zeros_like(s, dtype=bool)
    if keep.sum() < 3:
        raise RankDeficient(f"SRF rank {int(keep.sum())} < 3 (singular values {s})")
    return (vt.T / s) @ u.T


DEFAULT_CURVES = ((20.0, 3.0), (14.0, 3.0), (6.0, 3.0))  # R, G, B centres over 31 bands


def build_srf(curve_params=None, bands: int = 31, noise_sigma: float = 0.0) -> SrfOperator:
    """Gaussian response curves, ``curve_params = [(center, width)] * 3`` in band-index units.

    Rows are normalised to sum to one.
    """
    if bands <= 3:
        raise DimensionMismatch("SRF needs more than 3 bands")
    if curve_params is None:
        scale = (bands - 1) / 30.0
        curve_params = [(c * scale, w * scale) for c, w in DEFAULT_CURVES]
    if len(curve_params) != 3:
        raise ValueError("need exactly three (center, width) pairs")
    idx = np.arange(bands, dtype=np.float64)
    rows = []
    for center, width in curve_params:
        if width <= 0:
            raise InvalidParam("curve width must be positive")
        rows.append(np.exp(-0.5 * ((idx - center) / width) ** 2))
    d = np.array(rows)
    sums = d.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise RankDeficient("response row vanishes")
    return SrfOperator.from_matrix(d / sums, noise_sigma=noise_sigma)


def random_srf(rng: np.random.Generator, bands: int = 31) -> SrfOperator:
    centers = np.sort(rng.uniform(0, bands - 1, size=3))
    widths = rng.uniform(1.5, 0.25 * bands, size=3)
    return build_srf(list(zip(centers, widths)), bands)


def load_srf_csv(path) -> SrfOperator:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        d = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise HeaderMismatch(f"bad SRF csv: {exc}") from exc
    return SrfOperator.from_matrix(d)


def save_srf_csv(srf: SrfOperator, path) -> None:
    np.savetxt(path, srf.d, delimiter=",", fmt="%.17g")


# ---------------------------------------------------------------- degradation & RND

def _check_bands(cube: HsiCube, srf: SrfOperator):
    if cube.bands != srf.bands:
        raise DimensionMismatch(f"cube has {cube.bands} bands, SRF expects {srf.bands}")


def degrade(cube: HsiCube, srf: SrfOperator, with_noise: bool = False, seed=None) -> RgbImage:
    """Per-pixel ``D x`` plus optional i.i.d. Gaussian camera noise."""
    _check_bands(cube, srf)
    y = np.einsum("kc,chw->khw", srf.d, cube.data)
    if with_noise and srf.noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, srf.noise_sigma, size=y.shape)
    return RgbImage(y)


def _project(cube: HsiCube, proj: np.ndarray) -> HsiCube:
    return HsiCube(np.einsum("cd,dhw->chw", proj, cube.data))


def range_component(cube: HsiCube, srf: SrfOperator) -> HsiCube:
    _check_bands(cube, srf)
    return _project(cube, srf.range_proj)


def null_component(cube: HsiCube, srf: SrfOperator) -> HsiCube:
    _check_bands(cube, srf)
    return _project(cube, srf.null_proj)


def lift(rgb: HsiCube, srf: SrfOperator) -> HsiCube:
    """Minimum-norm spectra ``D^+ y`` for every pixel (lies in the range space)."""
    if rgb.bands != 3:
        raise DimensionMismatch("lift expects a 3-channel image")
    return HsiCube(np.einsum("ck,khw->chw", srf.d_pinv, rgb.data))


# ---------------------------------------------------------------- synthetic scenes

@dataclass(frozen=True)
class SceneSpec:
    seed: int
    n_endmembers: int = 4
    spatial_smoothness: float = 3.0
    bands: int = 31
    width: int = 32
    height: int = 32
    sharpness: float = 4.0

    def __post_init__(self):
        if self.n_endmembers < 1:
            raise InvalidParam("n_endmembers must be >= 1")
        if self.bands < 1 or self.width < 1 or self.height < 1:
            raise InvalidParam("scene dimensions must be positive")
        if self.spatial_smoothness < 0:
            raise InvalidParam("spatial_smoothness must be >= 0")


def synth_endmembers(rng: np.random.Generator, n: int, bands: int) -> np.ndarray:
    """Smooth spectra in [0, 1]: a floor plus one to three Gaussian bumps each."""
    idx = np.arange(bands, dtype=np.float64)
    out = np.empty((n, bands))
    for k in range(n):
        spec = np.full(bands, rng.uniform(0.02, 0.2))
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(-0.1, 1.1) * (bands - 1)
            width = rng.uniform(0.08, 0.35) * bands
            spec += rng.uniform(0.2, 0.8) * np.exp(-0.5 * ((idx - center) / width) ** 2)
        out[k] = spec / max(1.0, spec.max())
    return out


def synth_abundances(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """Smoothed noise fields turned into per-pixel convex weights, shape (n, H, W)."""
    noise = rng.normal(size=(spec.n_endmembers, spec.height, spec.width))
    if spec.spatial_smoothness > 0:
        noise = np.stack([gaussian_filter(f, spec.spatial_smoothness, mode="wrap") for f in noise])
        noise /= noise.std(axis=(1, 2), keepdims=True) + 1e-12
    logits = spec.sharpness * noise
    logits -= logits.max(axis=0, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=0, keepdims=True)


def scene_components(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(endmembers (n, C), abundances (n, H, W))`` behind :func:`synth_scene`."""
    rng = np.random.default_rng(spec.seed)
    endmembers = synth_endmembers(rng, spec.n_endmembers, spec.bands)
    abundances = synth_abundances(rng, spec)
    return endmembers, abundances


def synth_scene(spec: SceneSpec) -> HsiCube:
    endmembers, abundances = scene_components(spec)
    data = np.einsum("nc,nhw->chw", endmembers, abundances)
    return HsiCube(np.clip(data, 0.0, 1.0))
