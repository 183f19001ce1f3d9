"""Flat-shaded procedural scenes seen through the fish-eye camera.

Each output pixel is ray-cast: rays through (super-sampled) pixel centres are
intersected with the planar gate models, the nearest hit wins, and pixels
without a hit show a procedural background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..camera import (
    CAMERA_TO_BODY,
    CameraModel,
    Pose,
    default_camera,
    rot_z,
    wrap_angle,
    world_point_to_camera,
)
from ..nn.labels import D_MAX, GateLabel

CHECKER_DARK = np.array([20.0, 20.0, 20.0])
CHECKER_LIGHT = np.array([235.0, 235.0, 235.0])
POLE_COLOR = np.array([70.0, 70.0, 75.0])
FRAME_COLORS = np.array(
    [
        [230, 120, 30],
        [210, 40, 40],
        [40, 90, 200],
        [240, 200, 40],
        [200, 200, 200],
        [150, 60, 160],
    ],
    dtype=np.float64,
)
MIN_LABEL_DISTANCE = 0.5


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GateSpec:
    side: float = 1.0  # inner opening, metres
    frame_width: float = 0.25
    corner_pattern: int = 2  # checker cells across the frame width
    panel_length: float = 0.5  # extent of each corner panel along the frame

    def __post_init__(self):
        if not (self.side > 0 and self.frame_width > 0):
            raise ValueError("gate side and frame width must be positive")
        if self.corner_pattern < 1:
            raise ValueError("corner_pattern must be >= 1")


@dataclass(frozen=True)
class Gate:
    center: tuple[float, float, float]
    yaw: float  # heading of traversal; the front face is seen looking along it
    spec: GateSpec = GateSpec()
    color: tuple[float, float, float] = (230.0, 120.0, 30.0)

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    @property
    def lateral(self) -> np.ndarray:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw), 0.0])


@dataclass(frozen=True)
class SpawnBounds:
    x: tuple[float, float] = (-8.0, 8.0)
    y: tuple[float, float] = (-8.0, 8.0)
    gate_height: tuple[float, float] = (1.2, 2.2)
    camera_height: tuple[float, float] = (0.8, 2.4)
    min_gate_spacing: float = 3.0

    def __post_init__(self):
        for name in ("x", "y", "gate_height", "camera_height"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"bounds.{name} must be a finite interval, got {(lo, hi)}")


@dataclass(frozen=True)
class RenderConfig:
    camera: CameraModel = field(default_factory=default_camera)
    gate: GateSpec = GateSpec()
    bounds: SpawnBounds = SpawnBounds()
    d_max: float = D_MAX
    view_distance: tuple[float, float] = (1.0, 9.0)  # camera-to-target sampling range
    approach_angle: float = 0.9  # max |angle| between gate heading and camera bearing
    aim_jitter: float = 0.6  # max |angle| between camera yaw and target bearing
    light_range: tuple[float, float] = (0.3, 1.0)
    max_gates: int = 3
    supersample: int = 2
    max_retries: int = 50


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) uint8
    labels: list[GateLabel]
    meta: dict


# -- backgrounds ---------------------------------------------------------------


def _rand_color(rng, lo=30, hi=220):
    return rng.uniform(lo, hi, 3)


def _value_noise(rng, h, w, cells):
    coarse = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
    ys = np.linspace(0, cells, h)
    xs = np.linspace(0, cells, w)
    y0 = np.minimum(ys.astype(int), cells - 1)
    x0 = np.minimum(xs.astype(int), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _base_vertical(rng, h, w):
    top, bottom = _rand_color(rng), _rand_color(rng)
    t = np.linspace(0.0, 1.0, h)[:, None, None]
    return np.broadcast_to(top * (1 - t) + bottom * t, (h, w, 3)).copy()


def _base_horizon(rng, h, w):
    img = np.empty((h, w, 3))
    horizon = int(rng.uniform(0.35, 0.65) * h)
    img[:horizon] = _rand_color(rng, 90, 230)
    img[horizon:] = _rand_color(rng, 20, 140)
    return img


def _base_flat(rng, h, w):
    return np.broadcast_to(_rand_color(rng), (h, w, 3)).copy()


def _base_radial(rng, h, w):
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot(yy - cy, xx - cx) / math.hypot(h, w)
    inner, outer = _rand_color(rng), _rand_color(rng)
    return inner * (1 - r[..., None]) + outer * r[..., None]


def _overlay_rectangles(rng, img, count=(3, 9)):
    h, w, _ = img.shape
    for _ in range(rng.integers(*count)):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1 = min(h, y0 + rng.integers(6, h // 2))
        x1 = min(w, x0 + rng.integers(6, w // 2))
        img[y0:y1, x0:x1] = _rand_color(rng)


def _overlay_stripes(rng, img):
    h, w, _ = img.shape
    period = int(rng.integers(8, 30))
    width = max(2, period // int(rng.integers(2, 5)))
    color = _rand_color(rng)
    if rng.random() < 0.5:
        for x in range(int(rng.integers(0, period)), w, period):
            img[:, x : x + width] = color
    else:
        for y in range(int(rng.integers(0, period)), h, period):
            img[y : y + width, :] = color


def _overlay_blobs(rng, img, count=(2, 6)):
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(*count)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(4, h / 3), rng.uniform(4, w / 3)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img[inside] = _rand_color(rng)


def _overlay_poles(rng, img):
    """Vertical bars: distractors with gate-like straight edges."""
    h, w, _ = img.shape
    for _ in range(rng.integers(1, 5)):
        x = int(rng.integers(0, w))
        width = int(rng.integers(2, 8))
        y0 = int(rng.integers(0, h // 2))
        img[y0:, x : x + width] = _rand_color(rng)


def _overlay_noise(rng, img, amplitude=(8.0, 25.0)):
    h, w, _ = img.shape
    noise = _value_noise(rng, h, w, int(rng.integers(3, 9))) * rng.uniform(*amplitude)
    img += noise[..., None]


BASES = (_base_vertical, _base_horizon, _base_flat, _base_radial)
# (base index, overlays) combinations; one per background id
BACKGROUND_RECIPES = [
    (0, ("rect",)), (0, ("stripes",)), (0, ("blobs", "noise")),
    (1, ("rect",)), (1, ("poles",)), (1, ("rect", "noise")), (1, ("blobs", "poles")),
    (2, ("rect",)), (2, ("stripes", "rect")), (2, ("blobs",)), (2, ("noise",)), (2, ("poles", "rect")),
    (3, ("rect",)), (3, ("blobs",)), (3, ("stripes",)), (3, ("noise", "poles")),
    (0, ("rect", "poles", "noise")), (1, ("stripes", "blobs")),
]
N_BACKGROUNDS = len(BACKGROUND_RECIPES)
_OVERLAYS = {
    "rect": _overlay_rectangles,
    "stripes": _overlay_stripes,
    "blobs": _overlay_blobs,
    "poles": _overlay_poles,
    "noise": _overlay_noise,
}


def render_background(rng, background_id: int, h: int, w: int) -> np.ndarray:
    base, overlays = BACKGROUND_RECIPES[background_id % N_BACKGROUNDS]
    img = BASES[base](rng, h, w)
    for name in overlays:
        _OVERLAYS[name](rng, img)
    return np.clip(img, 0.0, 255.0)


# -- geometry ------------------------------------------------------------------


def camera_to_world_rotation(cam_yaw: float) -> np.ndarray:
    return rot_z(cam_yaw) @ CAMERA_TO_BODY


def label_gate(gate: Gate, cam_pose: Pose, cam: CameraModel, d_max: float) -> GateLabel | None:
    """Ground-truth label if the gate's front face is in view, else None."""
    center = np.array(gate.center)
    to_gate = center - cam_pose.xyz
    if float(to_gate @ gate.normal) <= 0.0:
        return None  # back face only
    p = world_point_to_camera(center, cam_pose)
    if p[2] <= 0.0:
        return None
    d = float(np.linalg.norm(p))
    if not (MIN_LABEL_DISTANCE < d <= d_max):
        return None
    theta = wrap_angle(gate.yaw - cam_pose.yaw)
    if not abs(theta) < math.pi / 2:
        return None
    u, v = cam.project(p)
    if not cam.in_image((u, v)):
        return None
    return GateLabel(float(u), float(v), d, theta)


def _shade_gates(rays_world, origin, gates, shades):
    """Per-ray colour and hit mask for the nearest gate surface."""
    shape = rays_world.shape[:-1]
    depth = np.full(shape, np.inf)
    color = np.zeros(shape + (3,))
    for gate, shade in zip(gates, shades):
        spec = gate.spec
        n, lat = gate.normal, gate.lateral
        c = np.array(gate.center)
        denom = rays_world @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c - origin) @ n) / denom
        ok = np.isfinite(t) & (t > 1e-6) & (t < depth)
        if not ok.any():
            continue
        hit = origin + t[..., None] * rays_world
        rel = hit - c
        a = rel @ lat
        b = rel[..., 2]
        si = spec.side / 2.0
        so = si + spec.frame_width
        cheb = np.maximum(np.abs(a), np.abs(b))
        on_frame = (cheb <= so) & (cheb >= si)
        # support pole from the bottom bar to the ground
        pole_half = spec.frame_width * 0.3
        on_pole = (np.abs(a) <= pole_half) & (b < -so) & (b >= -c[2])
        front = denom > 0
        panel = (np.abs(a) >= so - spec.panel_length) & (np.abs(b) >= so - spec.panel_length) & on_frame & front
        cell = spec.frame_width / spec.corner_pattern
        parity = (np.floor((a + so) / cell) + np.floor((b + so) / cell)).astype(np.int64) % 2
        surf = ok & (on_frame | on_pole)
        if not surf.any():
            continue
        frame_col = np.array(gate.color) * shade * np.where(front, 1.0, 0.6)[..., None]
        col = np.where(on_pole[..., None], POLE_COLOR * shade, frame_col)
        checker = np.where(parity[..., None] == 0, CHECKER_DARK, CHECKER_LIGHT)
        col = np.where(panel[..., None], checker, col)
        depth = np.where(surf, t, depth)
        color = np.where(surf[..., None], col, color)
    return color, np.isfinite(depth)


_RAY_CACHE: dict = {}


def _pixel_rays(cam: CameraModel, ss: int) -> np.ndarray:
    key = (cam, ss)
    if key not in _RAY_CACHE:
        _RAY_CACHE[key] = cam.pixel_rays(ss)
    return _RAY_CACHE[key]


def render(gates, cam_pose: Pose, cam: CameraModel, background: np.ndarray, light: float,
           shades=None, supersample: int = 2) -> np.ndarray:
    ss = supersample
    rays = _pixel_rays(cam, ss)
    rays_world = rays @ camera_to_world_rotation(cam_pose.yaw).T
    shades = shades if shades is not None else [1.0] * len(gates)
    color, hit = _shade_gates(rays_world, cam_pose.xyz, gates, shades)
    bg = np.repeat(np.repeat(background, ss, axis=0), ss, axis=1)
    img = np.where(hit[..., None], color, bg)
    h, w = cam.height, cam.width
    img = img.reshape(h, ss, w, ss, 3).mean(axis=(1, 3)) * light
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


# -- scene sampling ------------------------------------------------------------


def _place_gates(rng, cfg: RenderConfig) -> list[Gate]:
    b = cfg.bounds
    count = int(rng.integers(1, cfg.max_gates + 1))
    gates: list[Gate] = []
    for _ in range(200):
        if len(gates) == count:
            break
        pos = (rng.uniform(*b.x), rng.uniform(*b.y), rng.uniform(*b.gate_height))
        if any(math.dist(pos[:2], g.center[:2]) < b.min_gate_spacing for g in gates):
            continue
        color = tuple(float(v) for v in FRAME_COLORS[rng.integers(len(FRAME_COLORS))])
        gates.append(Gate(pos, wrap_angle(rng.uniform(-math.pi, math.pi)), cfg.gate, color))
    return gates


def generate_scene(rng_seed, cfg: RenderConfig | None = None) -> SceneSample:
    """Random 1-3 gate scene with at least one labelled (front-visible) gate."""
    cfg = cfg or RenderConfig()
    rng = np.random.default_rng(rng_seed)
    cam = cfg.camera
    gates = _place_gates(rng, cfg)
    for _ in range(cfg.max_retries):
        target = gates[int(rng.integers(len(gates)))]
        dist = rng.uniform(*cfg.view_distance)
        bearing = target.yaw + rng.uniform(-cfg.approach_angle, cfg.approach_angle)
        cam_xy = np.array(target.center[:2]) - dist * np.array([math.cos(bearing), math.sin(bearing)])
        cam_pose = Pose(
            (cam_xy[0], cam_xy[1], rng.uniform(*cfg.bounds.camera_height)),
            bearing + rng.uniform(-cfg.aim_jitter, cfg.aim_jitter),
        )
        if any(math.dist(cam_pose.position[:2], g.center[:2]) < 0.6 for g in gates):
            continue
        labels = [lab for g in gates if (lab := label_gate(g, cam_pose, cam, cfg.d_max)) is not None]
        if labels:
            break
    else:
        raise GenerationError(f"no valid camera pose after {cfg.max_retries} tries (seed={rng_seed!r})")
    background_id = int(rng.integers(N_BACKGROUNDS))
    background = render_background(rng, background_id, cam.height, cam.width)
    shades = [float(rng.uniform(0.7, 1.0)) for _ in gates]
    light = float(rng.uniform(*cfg.light_range))
    image = render(gates, cam_pose, cam, background, light, shades, cfg.supersample)
    meta = {
        "background": background_id,
        "light": light,
        "camera_pose": {"x": cam_pose.position[0], "y": cam_pose.position[1], "z": cam_pose.position[2], "yaw": cam_pose.yaw},
        "gates": [{"x": g.center[0], "y": g.center[1], "z": g.center[2], "yaw": g.yaw} for g in gates],
    }
    return SceneSample(image, labels, meta)
