"""Readers and writers: PFM depth, PNG visuals, JSON-lines logs, checkpoints.

Checkpoint layout (all integers little-endian)::

    b"RPSR" | u32 version | u32 len | config JSON | u64 step | u64 adam_step
    | u32 n_tensors | n_tensors * (u16 len | name | u8 dtype | u8 ndim
    | ndim * u32 dims | payload)

dtype codes: 0 = float32, 1 = float64.
"""

from __future__ import annotations

import io as _io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import ModelConfig, config_from_dict
from .errors import ConfigError, FormatError

# ---------------------------------------------------------------------------
# PFM


def encode_pfm(grid: np.ndarray, little_endian: bool = True) -> bytes:
    """Encode a (1, C, H, W) grid (C in {1, 3}) as PFM bytes, bottom row first."""
    arr = np.asarray(grid)
    if arr.ndim == 2:
        arr = arr[None, None]
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] not in (1, 3):
        raise FormatError(f"PFM holds (1, 1|3, H, W) grids, got shape {arr.shape}")
    _, c, h, w = arr.shape
    header = f"{'Pf' if c == 1 else 'PF'}\n{w} {h}\n{'-1.0' if little_endian else '1.0'}\n"
    pixels = arr[0].transpose(1, 2, 0)[::-1]  # H, W, C with bottom row first
    payload = pixels.astype("<f4" if little_endian else ">f4").tobytes()
    return header.encode("ascii") + payload


def _header_line(buf: bytes, pos: int, what: str) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise FormatError(f"PFM header truncated while reading {what}", pos)
    try:
        return buf[pos:end].decode("ascii"), end + 1
    except UnicodeDecodeError:
        raise FormatError(f"non-ASCII bytes in PFM {what}", pos) from None


def decode_pfm(buf: bytes) -> np.ndarray:
    """Decode PFM bytes to a float32 (1, C, H, W) grid, top row first."""
    ident, pos = _header_line(buf, 0, "identifier")
    if ident.strip() == "Pf":
        c = 1
    elif ident.strip() == "PF":
        c = 3
    else:
        raise FormatError(f"bad PFM identifier {ident!r}", 0)
    dims_at = pos
    dims, pos = _header_line(buf, pos, "dimensions")
    parts = dims.split()
    try:
        w, h = int(parts[0]), int(parts[1])
        if len(parts) != 2 or w <= 0 or h <= 0:
            raise ValueError
    except (ValueError, IndexError):
        raise FormatError(f"bad PFM dimensions {dims!r}", dims_at) from None
    scale_at = pos
    scale_s, pos = _header_line(buf, pos, "scale")
    try:
        scale = float(scale_s)
    except ValueError:
        raise FormatError(f"bad PFM scale {scale_s!r}", scale_at) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"PFM scale must be finite and non-zero, got {scale_s!r}", scale_at)
    expected = w * h * c * 4
    got = len(buf) - pos
    if got != expected:
        raise FormatError(f"PFM payload is {got} bytes, expected {expected}", pos + min(got, expected))
    dtype = "<f4" if scale < 0 else ">f4"
    pixels = np.frombuffer(buf, dtype=dtype, count=w * h * c, offset=pos).reshape(h, w, c)
    return np.ascontiguousarray(pixels[::-1].transpose(2, 0, 1)[None], dtype=np.float32)


def write_pfm(path, grid: np.ndarray, little_endian: bool = True) -> None:
    Path(path).write_bytes(encode_pfm(grid, little_endian))


def read_pfm(source) -> np.ndarray:
    """Read from a path or a bytes object."""
    buf = bytes(source) if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    return decode_pfm(buf)


# ---------------------------------------------------------------------------
# PNG

_VIRIDIS = np.array(
    [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64
)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map a 2-D array to a (3, H, W) viridis-like ramp in [0, 1], min-max normalized."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    t = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    pos = t * (len(_VIRIDIS) - 1)
    i = np.clip(np.floor(pos).astype(int), 0, len(_VIRIDIS) - 2)
    frac = (pos - i)[..., None]
    rgb = (_VIRIDIS[i] * (1 - frac) + _VIRIDIS[i + 1] * frac) / 255.0
    return rgb.transpose(2, 0, 1)


def encode_png(image: np.ndarray) -> bytes:
    """(1, 3, H, W) / (3, H, W) / (H, W) array in [0, 1] -> 8-bit PNG bytes."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[0]
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            arr = arr[0]
        else:
            arr = arr.transpose(1, 2, 0)
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = _io.BytesIO()
    Image.fromarray(u8).save(out, format="PNG")
    return out.getvalue()


def write_png(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(image))


_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _check_png_chunks(buf: bytes) -> None:
    """Walk the chunk list; every chunk must be complete with a valid CRC, ending at IEND."""
    if not buf.startswith(_PNG_SIGNATURE):
        raise FormatError("missing PNG signature", 0)
    pos = len(_PNG_SIGNATURE)
    while True:
        if pos + 8 > len(buf):
            raise FormatError("PNG truncated in chunk header", pos)
        length, kind = struct.unpack(">I4s", buf[pos : pos + 8])
        end = pos + 12 + length
        if end > len(buf):
            raise FormatError(f"PNG chunk {kind!r} truncated", pos)
        (crc,) = struct.unpack(">I", buf[end - 4 : end])
        if zlib.crc32(buf[pos + 4 : end - 4]) != crc:
            raise FormatError(f"PNG chunk {kind!r} has a bad CRC", pos)
        pos = end
        if kind == b"IEND":
            break
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after IEND", pos)


def decode_png(buf: bytes) -> np.ndarray:
    """PNG bytes -> (1, 3, H, W) float64 in [0, 1]."""
    _check_png_chunks(buf)
    try:
        with Image.open(_io.BytesIO(buf)) as im:
            im.load()
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError, EOFError) as exc:
        raise FormatError(f"unreadable PNG: {exc}", len(buf)) from None
    return rgb.transpose(2, 0, 1)[None]


def read_png(source) -> np.ndarray:
    buf = bytes(source) if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    return decode_png(buf)


def read_image(path) -> np.ndarray:
    """PFM or PNG by extension, as a (1, C, H, W) grid."""
    p = Path(path)
    if p.suffix.lower() == ".pfm":
        return read_pfm(p).astype(np.float64)
    return read_png(p)


# ---------------------------------------------------------------------------
# JSON lines


def jsonl_line(record: dict) -> str:
    return json.dumps(record, separators=(", ", ": ")) + "\n"


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(jsonl_line(record))


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"RPSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    step: int = 0
    adam_step: int = 0
    version: int = VERSION

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config.to_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(cfg)), cfg,
             struct.pack("<QQI", ckpt.step, ckpt.adam_step, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(np.dtype(arr.dtype.type))
        if code is None:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated in {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint (bad magic)", 0)
    version, cfg_len = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    cfg_at = r.pos
    try:
        cfg = config_from_dict(json.loads(r.take(cfg_len, "config").decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
        raise FormatError(f"bad embedded config: {exc}", cfg_at) from None
    step, adam_step, n = r.unpack("<QQI", "counters")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = r.unpack("<H", "tensor name length")
        name_at = r.pos
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", name_at) from None
        code, ndim = r.unpack("<BB", f"tensor {name!r} header")
        if code not in _DTYPES:
            raise FormatError(f"tensor {name!r} has unknown dtype code {code}", r.pos - 2)
        shape = r.unpack(f"<{ndim}I", f"tensor {name!r} shape")
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(count * dt.itemsize, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after checkpoint", r.pos)
    return Checkpoint(cfg, tensors, step, adam_step, version)


def save_checkpoint(path, ckpt: Checkpoint) -> bytes:
    data = encode_checkpoint(ckpt)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
