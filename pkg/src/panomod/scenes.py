"""Procedural box-room panoramas with exact analytic depth.

A scene is an axis-aligned room centred on the origin, a camera somewhere
inside, and a few axis-aligned boxes resting on the floor. Every ERP pixel's
ray is intersected in closed form, so the depth map is exact.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import rng_stream
from .errors import GeometryError, PanomodError, ValidationError
from .geometry import erp_directions

CAMERA_MARGIN = 0.3


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    half_size: tuple[float, float, float]
    albedo: tuple[float, float, float]


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    half_extents: tuple[float, float, float]
    camera: tuple[float, float, float]
    boxes: tuple[Box, ...] = ()
    # floor, ceiling, +x, -x, +y, -y walls
    wall_albedo: tuple[tuple[float, float, float], ...] = field(default=((0.6, 0.6, 0.6),) * 6)
    light: tuple[float, float, float] = (0.3, 0.2, 0.93)
    yaw: float = 0.0

    def __post_init__(self):
        he = np.asarray(self.half_extents)
        if he.shape != (3,) or np.any(he < 0.5) or np.any(he > 5.0):
            raise ValidationError(f"room extents must lie in [1, 10] m, got half-extents {self.half_extents}")
        cam = np.asarray(self.camera)
        if np.any(np.abs(cam) >= he):
            raise ValidationError(f"camera {self.camera} is not strictly inside the room")
        for b in self.boxes:
            c, s = np.asarray(b.center), np.asarray(b.half_size)
            if np.any(c - s < -he - 1e-9) or np.any(c + s > he + 1e-9):
                raise ValidationError(f"box {b} sticks out of the room")
            if np.all(np.abs(cam - c) < s):
                raise ValidationError(f"camera {self.camera} is inside box {b}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        boxes = tuple(Box(tuple(b["center"]), tuple(b["half_size"]), tuple(b["albedo"])) for b in d["boxes"])
        return cls(
            seed=int(d["seed"]),
            half_extents=tuple(d["half_extents"]),
            camera=tuple(d["camera"]),
            boxes=boxes,
            wall_albedo=tuple(tuple(a) for a in d["wall_albedo"]),
            light=tuple(d["light"]),
            yaw=float(d.get("yaw", 0.0)),
        )


def make_scene(seed: int, max_boxes: int = 3) -> SceneSpec:
    """Draw a random valid scene; the same seed always gives the same scene."""
    rng = rng_stream(seed, 0x5CE4E)
    he = np.array([rng.uniform(2.0, 5.0), rng.uniform(2.0, 5.0), rng.uniform(1.2, 2.0)])
    cam = np.array([rng.uniform(-1, 1) * (he[0] - 1.0), rng.uniform(-1, 1) * (he[1] - 1.0),
                    rng.uniform(-0.3, 0.3)])
    boxes = []
    for _ in range(int(rng.integers(0, max_boxes + 1))):
        for _attempt in range(20):
            half = np.array([rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.6 * he[2])])
            center = np.array([
                rng.uniform(-he[0] + half[0], he[0] - half[0]),
                rng.uniform(-he[1] + half[1], he[1] - half[1]),
                -he[2] + half[2],
            ])
            if not np.all(np.abs(cam - center) < half + CAMERA_MARGIN):
                albedo = tuple(float(v) for v in rng.uniform(0.2, 0.9, size=3))
                boxes.append(Box(tuple(map(float, center)), tuple(map(float, half)), albedo))
                break
    walls = tuple(tuple(float(v) for v in rng.uniform(0.2, 0.9, size=3)) for _ in range(6))
    light = rng.normal(size=3)
    light[2] = abs(light[2]) + 0.5
    light /= np.linalg.norm(light)
    return SceneSpec(
        seed=int(seed),
        half_extents=tuple(map(float, he)),
        camera=tuple(map(float, cam)),
        boxes=tuple(boxes),
        wall_albedo=walls,
        light=tuple(map(float, light)),
    )


def _rays(spec: SceneSpec, height: int, width: int) -> np.ndarray:
    d = erp_directions(height, width)
    if spec.yaw:
        c, s = np.cos(spec.yaw), np.sin(spec.yaw)
        x, y = d[..., 0], d[..., 1]
        d = np.stack([c * x - s * y, s * x + c * y, d[..., 2]], axis=-1)
    return d


def _room_hit(o: np.ndarray, d: np.ndarray, he: np.ndarray):
    """Exit distance from inside the room, plus the axis of the wall hit."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (np.sign(d) * he - o) / d
    t = np.where(d == 0, np.inf, t)
    axis = np.argmin(t, axis=-1)
    return np.take_along_axis(t, axis[..., None], -1)[..., 0], axis


def _box_hit(o: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab-method entry distance (inf on miss) and entry axis."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    t_enter = tnear.max(axis=-1)
    t_exit = tfar.min(axis=-1)
    hit = (t_exit >= t_enter) & (t_enter > 0)
    return np.where(hit, t_enter, np.inf), np.argmax(tnear, axis=-1)


def render(spec: SceneSpec, height: int = 64, width: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast a scene into (rgb (1,3,H,W) in [0,1], depth (1,1,H,W) in metres)."""
    if width != 2 * height:
        raise GeometryError(f"ERP width must equal 2 * height, got {height}x{width}")
    o = np.asarray(spec.camera, dtype=np.float64)
    he = np.asarray(spec.half_extents, dtype=np.float64)
    d = _rays(spec, height, width)

    t, axis = _room_hit(o, d, he)
    sign = -np.sign(np.take_along_axis(d, axis[..., None], -1)[..., 0])  # inward normal
    # wall index: floor, ceiling, +x, -x, +y, -y
    wall_of = np.array([[3, 2], [5, 4], [0, 1]])  # axis -> (normal +, normal -)
    wall_idx = np.where(sign > 0, wall_of[axis, 0], wall_of[axis, 1])
    albedo = np.asarray(spec.wall_albedo, dtype=np.float64)[wall_idx]

    for box in spec.boxes:
        c, s = np.asarray(box.center), np.asarray(box.half_size)
        tb, ab = _box_hit(o, d, c - s, c + s)
        closer = tb < t
        t = np.where(closer, tb, t)
        axis = np.where(closer, ab, axis)
        box_sign = -np.sign(np.take_along_axis(d, ab[..., None], -1)[..., 0])
        sign = np.where(closer, box_sign, sign)
        albedo = np.where(closer[..., None], np.asarray(box.albedo), albedo)

    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise PanomodError("ray escaped the closed room")

    normal = np.zeros_like(d)
    np.put_along_axis(normal, axis[..., None], sign[..., None], axis=-1)
    hit = o + t[..., None] * d
    light = np.asarray(spec.light, dtype=np.float64)
    lambert = np.clip(normal @ light, 0.0, None)
    shade = 0.35 + 0.65 * lambert

    # stripes along the first in-plane axis of each surface, fixed world period
    tangent_axis = (axis + 1) % 3
    coord = np.take_along_axis(hit, tangent_axis[..., None], -1)[..., 0]
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * coord / 0.5)

    rgb = np.clip(albedo * shade[..., None] * (0.75 + 0.25 * stripes[..., None]), 0.0, 1.0)
    return rgb.transpose(2, 0, 1)[None].copy(), t[None, None].copy()


def augment(rgb: np.ndarray, depth: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random mirror (p=0.5), yaw roll, and luminance scale in [0.8, 1.2] (rgb only)."""
    if rng.random() < 0.5:
        rgb, depth = rgb[..., ::-1], depth[..., ::-1]
    shift = int(rng.integers(0, rgb.shape[-1]))
    rgb, depth = np.roll(rgb, shift, axis=-1), np.roll(depth, shift, axis=-1)
    gain = rng.uniform(0.8, 1.2)
    return np.clip(rgb * gain, 0.0, 1.0), np.ascontiguousarray(depth)


def dataset(seed: int, n: int, split_ratio: float = 0.8) -> tuple[list[SceneSpec], list[SceneSpec]]:
    """Deterministic train/val scene lists with disjoint seeds."""
    if n < 2:
        raise ValidationError(f"dataset needs n >= 2, got {n}")
    rng = rng_stream(seed, 0xDA7A)
    seeds = rng.choice(2**31 - 1, size=n, replace=False)
    n_train = min(max(int(round(n * split_ratio)), 1), n - 1)
    specs = [make_scene(int(s)) for s in seeds]
    return specs[:n_train], specs[n_train:]
