"""Spherical coordinates and bilinear ERP <-> cubemap resampling.

Conventions (see ``cube_faces.json`` for the per-face axes):

* ERP pixel (i, j) of an H x W image looks at latitude
  ``pi/2 - (i + 0.5) / H * pi`` and longitude ``(j + 0.5) / W * 2pi - pi``.
* Longitude wraps, latitude clamps. Cube faces clamp at their edges; there is
  no filtering across seams.
* Faces are ordered front(+x), right(+y), back(-x), left(-y), up(+z), down(-z).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from importlib import resources

import numpy as np
import scipy.sparse

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, GeometryError

FACE_NAMES = ("front", "right", "back", "left", "up", "down")


def _load_face_table() -> dict:
    with resources.files(__package__).joinpath("cube_faces.json").open("r") as fh:
        return json.load(fh)


FACE_TABLE = _load_face_table()
FACE_AXES = np.array(
    [[f["forward"], f["right"], f["up"]] for f in FACE_TABLE["faces"]], dtype=np.float64
)  # (6, 3, 3): face, {forward, right, up}, xyz
assert tuple(f["name"] for f in FACE_TABLE["faces"]) == FACE_NAMES


def erp_pixel_to_dir(i, j, height: int, width: int) -> np.ndarray:
    """Unit viewing direction(s) for ERP pixel centres. Broadcasts over i, j."""
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    lat = np.pi / 2 - (i + 0.5) / height * np.pi
    lon = (j + 0.5) / width * 2 * np.pi - np.pi
    return np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def erp_directions(height: int, width: int) -> np.ndarray:
    """(H, W, 3) direction field of a whole ERP image."""
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return erp_pixel_to_dir(ii, jj, height, width)


def face_directions(face_size: int) -> np.ndarray:
    """(6, S, S, 3) un-normalized gnomonic rays through each face pixel centre."""
    t = 2.0 * (np.arange(face_size) + 0.5) / face_size - 1.0
    v, u = np.meshgrid(t, t, indexing="ij")
    fwd, right, up = FACE_AXES[:, 0], FACE_AXES[:, 1], FACE_AXES[:, 2]
    return (
        fwd[:, None, None, :]
        + u[None, :, :, None] * right[:, None, None, :]
        - v[None, :, :, None] * up[:, None, None, :]
    )


def dir_to_latlon(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(d, axis=-1)
    lat = np.arcsin(np.clip(d[..., 2] / norm, -1.0, 1.0))
    lon = np.arctan2(d[..., 1], d[..., 0])
    return lat, lon


def dominant_face(d: np.ndarray) -> np.ndarray:
    """Face index whose forward axis has the largest dot product; ties go to the earlier face."""
    scores = d @ FACE_AXES[:, 0].T
    return np.argmax(scores, axis=-1)


@dataclass(frozen=True, eq=False)
class SamplingMap:
    """Per-output-pixel bilinear footprint for one projection direction.

    ``index`` and ``weight`` are (P, 4); ``index`` addresses the flattened
    (n_in, h, w) input. ``matrix`` is the same thing as a sparse (P, N_in)
    operator.
    """

    direction: str
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    index: np.ndarray
    weight: np.ndarray
    matrix: scipy.sparse.csr_matrix
    wrap_lon: bool
    clamp_lat: bool

    @property
    def n_out(self) -> int:
        return int(np.prod(self.out_shape))

    @property
    def n_in(self) -> int:
        return int(np.prod(self.in_shape))


def _bilinear(rows: np.ndarray, cols: np.ndarray, h: int, w: int, wrap_cols: bool):
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    a = rows - r0
    b = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    r_lo, r_hi = np.clip(r0, 0, h - 1), np.clip(r0 + 1, 0, h - 1)
    if wrap_cols:
        c_lo, c_hi = c0 % w, (c0 + 1) % w
    else:
        c_lo, c_hi = np.clip(c0, 0, w - 1), np.clip(c0 + 1, 0, w - 1)
    rr = np.stack([r_lo, r_lo, r_hi, r_hi], axis=-1)
    cc = np.stack([c_lo, c_hi, c_lo, c_hi], axis=-1)
    wt = np.stack([(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b], axis=-1)
    return rr, cc, wt


def build_sampling_map(direction: str, erp_shape: tuple[int, int], face_size: int) -> SamplingMap:
    """Precompute the bilinear gather for ``"e2c"`` or ``"c2e"``."""
    height, width = erp_shape
    if face_size < 2:
        raise GeometryError(f"face_size must be >= 2, got {face_size}")
    if width != 2 * height:
        raise GeometryError(f"ERP width must equal 2 * height, got {height}x{width}")
    s = face_size
    if direction == "e2c":
        lat, lon = dir_to_latlon(face_directions(s))
        rows = (np.pi / 2 - lat) / np.pi * height - 0.5
        cols = (lon + np.pi) / (2 * np.pi) * width - 0.5
        rr, cc, wt = _bilinear(rows, cols, height, width, wrap_cols=True)
        index = rr * width + cc
        in_shape, out_shape = (1, height, width), (6, s, s)
        wrap, clamp = True, True
    elif direction == "c2e":
        d = erp_directions(height, width)
        face = dominant_face(d)
        axes = FACE_AXES[face]  # H, W, 3, 3
        depth = np.einsum("hwk,hwk->hw", d, axes[:, :, 0])
        u = np.einsum("hwk,hwk->hw", d, axes[:, :, 1]) / depth
        v = -np.einsum("hwk,hwk->hw", d, axes[:, :, 2]) / depth
        cols = (u + 1) / 2 * s - 0.5
        rows = (v + 1) / 2 * s - 0.5
        rr, cc, wt = _bilinear(rows, cols, s, s, wrap_cols=False)
        index = face[..., None] * s * s + rr * s + cc
        in_shape, out_shape = (6, s, s), (1, height, width)
        wrap, clamp = False, True
    else:
        raise GeometryError(f"direction must be 'e2c' or 'c2e', got {direction!r}")

    index = index.reshape(-1, 4)
    wt = wt.reshape(-1, 4)
    n_out = index.shape[0]
    n_in = int(np.prod(in_shape))
    matrix = scipy.sparse.csr_matrix(
        (wt.ravel(), (np.repeat(np.arange(n_out), 4), index.ravel())), shape=(n_out, n_in)
    )
    index.setflags(write=False)
    wt.setflags(write=False)
    return SamplingMap(direction, in_shape, out_shape, index, wt, matrix, wrap, clamp)


_CACHE: dict[tuple, SamplingMap] = {}
_CACHE_LOCK = threading.Lock()


def cached_sampling_map(direction: str, erp_shape: tuple[int, int], face_size: int) -> SamplingMap:
    """Build once per key; later calls return the very same object."""
    key = (direction, int(erp_shape[0]), int(erp_shape[1]), int(face_size))
    with _CACHE_LOCK:
        m = _CACHE.get(key)
        if m is None:
            m = build_sampling_map(direction, (key[1], key[2]), key[3])
            _CACHE[key] = m
    return m


def resample(x, smap: SamplingMap) -> Tensor:
    """``out[p] = sum_k w_k * x[src_k]`` for every channel. Differentiable.

    x: (n_in, C, h, w) matching ``smap.in_shape``; returns (n_out, C, ho, wo).
    """
    x = ad.as_tensor(x)
    n_in, h, w = smap.in_shape
    if x.ndim != 4 or (x.shape[0], x.shape[2], x.shape[3]) != (n_in, h, w):
        raise DimensionError(
            f"{smap.direction} map expects input (n={n_in}, C, {h}, {w}), got {x.shape}"
        )
    c = x.shape[1]
    flat = x.transpose(0, 2, 3, 1).reshape(n_in * h * w, c)
    out = ad.sparse_matmul(smap.matrix, flat)
    n_out, ho, wo = smap.out_shape
    return out.reshape(n_out, ho, wo, c).transpose(0, 3, 1, 2)


def resample_adjoint(y: np.ndarray, smap: SamplingMap) -> np.ndarray:
    """Transpose of :func:`resample` (scatter with the same weights)."""
    n_out, ho, wo = smap.out_shape
    if y.ndim != 4 or (y.shape[0], y.shape[2], y.shape[3]) != (n_out, ho, wo):
        raise DimensionError(f"adjoint expects (n={n_out}, C, {ho}, {wo}), got {y.shape}")
    c = y.shape[1]
    flat = y.transpose(0, 2, 3, 1).reshape(-1, c)
    n_in, h, w = smap.in_shape
    back = np.asarray(smap.matrix.T @ flat)
    return back.reshape(n_in, h, w, c).transpose(0, 3, 1, 2)


def check_cubeset(c) -> None:
    """Raise unless ``c`` is a (6, C, S, S) stack of square faces."""
    shape = c.shape
    if len(shape) != 4 or shape[0] != 6:
        raise DimensionError(f"a cube set has exactly 6 faces, got shape {shape}")
    if shape[2] != shape[3]:
        raise DimensionError(f"cube faces must be square, got {shape[2]}x{shape[3]}")


def erp_to_cube(x, face_size: int | None = None) -> Tensor:
    """(1, C, H, W) ERP grid -> (6, C, S, S) cube set. Default S = H // 2."""
    x = ad.as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"expected (1, C, H, W), got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    return resample(x, cached_sampling_map("e2c", (h, w), face_size or h // 2))


def cube_to_erp(c, erp_shape: tuple[int, int] | None = None) -> Tensor:
    """(6, C, S, S) cube set -> (1, C, H, W) ERP grid. Default H = 2S."""
    c = ad.as_tensor(c)
    check_cubeset(c)
    s = c.shape[2]
    erp_shape = erp_shape or (2 * s, 4 * s)
    return resample(c, cached_sampling_map("c2e", erp_shape, s))
