"""Procedural multi-room world with paired RGB / point-cloud rendering.

The world is a grid of box-built rooms (floor, walls, colored wall panels,
furniture). RGB images come from a vectorized ray-vs-AABB cast; point-cloud
images project per-room surface sample points through the same pinhole model
and encode each vertex's normalized world position in the pixel channels.
Everything is a pure function of its arguments, so builds and renders are
bit-reproducible.
"""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InvalidArgumentError,
    NotFoundError,
    OutOfBoundsError,
    ParseError,
    PlacementFailureError,
)
from .geometry import PinholeCamera, quat_normalize
from .util import read_json, rng, write_json

WALL_HEIGHT = 3.0
WALL_THICKNESS = 0.08
FLOOR_THICKNESS = 0.02
PANEL_THICKNESS = 0.02
ROOM_GAP = 0.25
NEAR_PLANE = 0.05
WORLD_FORMAT_VERSION = 1

# surface sample spacing in meters, per primitive kind
_SPACING = {
    "floor": 0.16,
    "wall": 0.16,
    "panel": 0.08,
    "furniture": 0.08,
    "occluder": 0.08,
}

# fixed per-face shading (axis, outward normal sign) -> multiplier
_FACE_SHADE = {
    (0, 1): 0.95,
    (0, -1): 0.85,
    (1, 1): 0.90,
    (1, -1): 0.80,
    (2, 1): 1.00,
    (2, -1): 0.70,
}

_TAG_LAYOUT = 101
_TAG_VERTS = 102
_TAG_OCCLUDERS = 103


@dataclass(frozen=True)
class Primitive:
    """Colored axis-aligned box; thin boxes stand in for planes."""

    kind: str
    lo: tuple
    hi: tuple
    color: tuple


@dataclass
class VertexCloud:
    points: np.ndarray  # (N, 3) float64, world frame
    colors: np.ndarray  # (N, 3) float32


@dataclass
class SceneModel:
    id: int
    name: str
    primitives: list
    vertex_cloud: VertexCloud
    bounds: tuple  # (lo3, hi3)


@dataclass
class WorldModel:
    scenes: list
    world_bounds: tuple  # (lo3, hi3)
    seed: int


@dataclass(frozen=True)
class CameraPose:
    """World position plus unit orientation quaternion (w, x, y, z)."""

    position: tuple
    orientation: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) != 3:
            raise InvalidArgumentError("position must have 3 components")
        q = quat_normalize(self.orientation)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", tuple(float(v) for v in q))

    @property
    def position_array(self) -> np.ndarray:
        return np.array(self.position, dtype=np.float64)

    @property
    def quat_array(self) -> np.ndarray:
        return np.array(self.orientation, dtype=np.float64)


@dataclass(frozen=True)
class RenderSettings:
    width: int = 128
    height: int = 128
    vertical_fov: float = 60.0
    brightness: float = 1.0
    background: tuple = (0.05, 0.06, 0.08)

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise InvalidArgumentError("image dimensions must be >= 16")
        if not 10.0 <= self.vertical_fov <= 170.0:
            raise InvalidArgumentError("vertical_fov must be in [10, 170] degrees")
        if self.brightness <= 0:
            raise InvalidArgumentError("brightness must be > 0")


def _hsv(h, s, v) -> tuple:
    return tuple(colorsys.hsv_to_rgb(h % 1.0, s, v))


def _sample_primitive(prim: Primitive, g: np.random.Generator):
    """Jittered grid of surface points on every face of the box."""
    lo = np.asarray(prim.lo, dtype=np.float64)
    hi = np.asarray(prim.hi, dtype=np.float64)
    spacing = _SPACING.get(prim.kind, 0.1)
    pts, cols = [], []
    base = np.asarray(prim.color, dtype=np.float64)
    for axis in range(3):
        ua, va = (axis + 1) % 3, (axis + 2) % 3
        lu, lv = hi[ua] - lo[ua], hi[va] - lo[va]
        if lu <= 0 or lv <= 0:
            continue
        nu = max(1, int(round(lu / spacing)))
        nv = max(1, int(round(lv / spacing)))
        iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
        u = (iu.ravel() + 0.5) / nu
        v = (iv.ravel() + 0.5) / nv
        jit = g.uniform(-0.45, 0.45, size=(2, u.size))
        u = (u + jit[0] / nu) * lu + lo[ua]
        v = (v + jit[1] / nv) * lv + lo[va]
        for side, fixed in ((-1, lo[axis]), (1, hi[axis])):
            p = np.empty((u.size, 3))
            p[:, axis] = fixed
            p[:, ua] = u
            p[:, va] = v
            pts.append(p)
            shade = _FACE_SHADE[(axis, side)]
            cols.append(np.tile(np.clip(base * shade, 0, 1), (u.size, 1)))
    return np.concatenate(pts, axis=0), np.concatenate(cols, axis=0).astype(np.float32)


def _build_cloud(primitives, world_seed: int, scene_id: int) -> VertexCloud:
    """Per-primitive sampling streams keyed by index, so appending occluders
    leaves every pre-existing vertex bit-identical."""
    pts, cols = [], []
    for i, prim in enumerate(primitives):
        p, c = _sample_primitive(prim, rng(world_seed, scene_id, _TAG_VERTS, i))
        pts.append(p)
        cols.append(c)
    return VertexCloud(np.concatenate(pts, axis=0), np.concatenate(cols, axis=0))


def _build_room(scene_id, scene_count, lo2, hi2, g: np.random.Generator):
    x0, y0 = lo2
    x1, y1 = hi2
    w, d = x1 - x0, y1 - y0
    hue = scene_id / max(scene_count, 1)
    golden = 0.381966

    prims = [
        Primitive("floor", (x0, y0, 0.0), (x1, y1, FLOOR_THICKNESS), _hsv(hue, 0.45, 0.35)),
    ]
    wall_color = _hsv(hue + 0.5, 0.40, 0.75)
    t = WALL_THICKNESS
    walls = [
        ((x0, y0, 0.0), (x0 + t, y1, WALL_HEIGHT)),  # west
        ((x1 - t, y0, 0.0), (x1, y1, WALL_HEIGHT)),  # east
        ((x0, y0, 0.0), (x1, y0 + t, WALL_HEIGHT)),  # south
        ((x0, y1 - t, 0.0), (x1, y1, WALL_HEIGHT)),  # north
    ]
    for wlo, whi in walls:
        prims.append(Primitive("wall", wlo, whi, wall_color))

    # colored panels proud of each wall's inner face: the landmark texture that
    # makes viewpoints distinguishable
    k = 0
    for wall_idx, (wlo, whi) in enumerate(walls):
        along = 1 if wall_idx < 2 else 0  # axis running along the wall
        length = (whi[along] - wlo[along]) - 2 * t
        for j in range(3):
            plen = length * g.uniform(0.12, 0.22)
            start = wlo[along] + t + length * j / 3 + g.uniform(0.0, max(0.0, length / 3 - plen))
            z0 = g.uniform(0.3, 1.2)
            z1 = min(z0 + g.uniform(0.8, 1.6), WALL_HEIGHT - 0.2)
            color = _hsv(hue + golden * (k + 1), 0.85, g.uniform(0.75, 0.95))
            p_lo, p_hi = [0.0, 0.0, z0], [0.0, 0.0, z1]
            p_lo[along], p_hi[along] = start, start + plen
            across = 1 - along
            if wall_idx in (0, 2):  # west/south: panel sits on the +side face
                p_lo[across] = whi[across]
                p_hi[across] = whi[across] + PANEL_THICKNESS
            else:
                p_lo[across] = wlo[across] - PANEL_THICKNESS
                p_hi[across] = wlo[across]
            prims.append(Primitive("panel", tuple(p_lo), tuple(p_hi), color))
            k += 1

    # furniture boxes, rejection-placed with clearance
    ix0, iy0 = x0 + t + 0.15, y0 + t + 0.15
    ix1, iy1 = x1 - t - 0.15, y1 - t - 0.15
    max_side = max(0.3, min(1.2, min(w, d) / 4))
    n_furniture = int(6 + g.integers(0, 4))
    placed = []
    for j in range(n_furniture):
        color = _hsv(hue + golden * (k + 1) + 0.23, 0.75, g.uniform(0.45, 0.85))
        k += 1
        for _ in range(40):
            fw = g.uniform(0.3, max_side)
            fd = g.uniform(0.3, max_side)
            fh = g.uniform(0.4, 1.0)  # below camera height, so paths stay in free space
            if ix0 + fw / 2 >= ix1 - fw / 2 or iy0 + fd / 2 >= iy1 - fd / 2:
                break
            cx = g.uniform(ix0 + fw / 2, ix1 - fw / 2)
            cy = g.uniform(iy0 + fd / 2, iy1 - fd / 2)
            box = (cx - fw / 2, cy - fd / 2, FLOOR_THICKNESS, cx + fw / 2, cy + fd / 2, FLOOR_THICKNESS + fh)
            if not any(_boxes_overlap(box, other, 0.12) for other in placed):
                placed.append(box)
                prims.append(
                    Primitive("furniture", (box[0], box[1], box[2]), (box[3], box[4], box[5]), color)
                )
                break
    return prims


def _boxes_overlap(a, b, gap=0.0) -> bool:
    return all(a[i] - gap < b[i + 3] and b[i] - gap < a[i + 3] for i in range(3))


def build_world(seed: int, scene_count: int, extent: float) -> WorldModel:
    """Deterministic multi-room world covering an extent x extent footprint."""
    if scene_count < 2:
        raise InvalidArgumentError("scene_count must be >= 2")
    if extent <= 0:
        raise InvalidArgumentError("extent must be > 0")
    cols = math.ceil(math.sqrt(scene_count))
    rows = math.ceil(scene_count / cols)
    cell_w, cell_d = extent / cols, extent / rows
    gap = min(ROOM_GAP, 0.05 * min(cell_w, cell_d))
    scenes = []
    for sid in range(scene_count):
        r, c = divmod(sid, cols)
        lo2 = (c * cell_w + gap, r * cell_d + gap)
        hi2 = ((c + 1) * cell_w - gap, (r + 1) * cell_d - gap)
        prims = _build_room(sid, scene_count, lo2, hi2, rng(seed, sid, _TAG_LAYOUT))
        cloud = _build_cloud(prims, seed, sid)
        bounds = ((lo2[0], lo2[1], 0.0), (hi2[0], hi2[1], WALL_HEIGHT))
        scenes.append(SceneModel(sid, f"room_{sid:02d}", prims, cloud, bounds))
    world_bounds = ((0.0, 0.0, 0.0), (extent, extent, WALL_HEIGHT))
    return WorldModel(scenes, world_bounds, int(seed))


def get_scene(world: WorldModel, scene_id: int) -> SceneModel:
    for scene in world.scenes:
        if scene.id == scene_id:
            return scene
    raise NotFoundError(f"scene {scene_id} not in world")


def _check_pose(world: WorldModel, pose: CameraPose) -> None:
    lo, hi = world.world_bounds
    p = pose.position
    if not all(lo[i] <= p[i] <= hi[i] for i in range(3)):
        raise OutOfBoundsError(f"pose position {p} outside world bounds {world.world_bounds}")


def _scene_boxes(scene: SceneModel):
    bmin = np.array([p.lo for p in scene.primitives], dtype=np.float64)
    bmax = np.array([p.hi for p in scene.primitives], dtype=np.float64)
    colors = np.array([p.color for p in scene.primitives], dtype=np.float64)
    return bmin, bmax, colors


def render_rgb(world, scene_id, pose, settings: RenderSettings) -> np.ndarray:
    """Ray-cast the scene's boxes; returns float32 (H, W, 3) in [0, 1]."""
    scene = get_scene(world, scene_id)
    _check_pose(world, pose)
    cam = PinholeCamera(settings.width, settings.height, settings.vertical_fov)
    dirs = cam.pixel_rays(pose.position_array, pose.quat_array).reshape(-1, 3)
    origin = pose.position_array
    bmin, bmax, colors = _scene_boxes(scene)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs  # (N, 3); zero components become inf
        t1 = (bmin[None, :, :] - origin) * inv[:, None, :]
        t2 = (bmax[None, :, :] - origin) * inv[:, None, :]
    near = np.nan_to_num(np.minimum(t1, t2), nan=-np.inf)
    far = np.nan_to_num(np.maximum(t1, t2), nan=np.inf)
    tn = near.max(axis=2)
    tf = far.min(axis=2)
    eps = 1e-9
    entering = tn > eps
    t_hit = np.where(entering, tn, tf)
    valid = (tn <= tf) & (t_hit > eps)
    t_hit = np.where(valid, t_hit, np.inf)

    best = np.argmin(t_hit, axis=1)
    n_idx = np.arange(t_hit.shape[0])
    hit = np.isfinite(t_hit[n_idx, best])

    # face of the chosen box: entering rays take the max-near axis, rays that
    # start inside take the min-far axis (seen from the inside)
    ent = entering[n_idx, best]
    axis_in = near[n_idx, best].argmax(axis=1)
    axis_out = far[n_idx, best].argmin(axis=1)
    axis = np.where(ent, axis_in, axis_out)
    d_axis = dirs[n_idx, axis]
    normal_sign = np.where(ent, -np.sign(d_axis), np.sign(d_axis)).astype(int)

    shade_lut = np.zeros((3, 3))
    for (ax, sg), val in _FACE_SHADE.items():
        shade_lut[ax, sg + 1] = val
    shade = shade_lut[axis, normal_sign + 1]

    img = np.tile(np.asarray(settings.background, dtype=np.float64), (t_hit.shape[0], 1))
    img[hit] = colors[best[hit]] * shade[hit, None]
    img *= settings.brightness
    return np.clip(img, 0.0, 1.0).astype(np.float32).reshape(settings.height, settings.width, 3)


def render_pointcloud(world, scene_id, pose, settings: RenderSettings) -> np.ndarray:
    """Splat the scene's vertex cloud; channels encode normalized world XYZ.

    Single-pixel splats, nearest vertex wins, black background. Brightness and
    background settings do not apply: the pixel values are geometry, not light.
    """
    scene = get_scene(world, scene_id)
    _check_pose(world, pose)
    cam = PinholeCamera(settings.width, settings.height, settings.vertical_fov)
    pts = scene.vertex_cloud.points
    uv, z = cam.project(pts, pose.position_array, pose.quat_array)

    keep = z > NEAR_PLANE
    u = np.rint(uv[keep, 0]).astype(np.int64)
    v = np.rint(uv[keep, 1]).astype(np.int64)
    z = z[keep]
    pts = pts[keep]
    inb = (u >= 0) & (u < settings.width) & (v >= 0) & (v < settings.height)
    u, v, z, pts = u[inb], v[inb], z[inb], pts[inb]

    lo = np.asarray(world.world_bounds[0], dtype=np.float64)
    hi = np.asarray(world.world_bounds[1], dtype=np.float64)
    enc = ((pts - lo) / (hi - lo)).astype(np.float32)

    img = np.zeros((settings.height, settings.width, 3), dtype=np.float32)
    order = np.argsort(-z, kind="stable")  # nearest written last
    img[v[order], u[order]] = enc[order]
    return img


def insert_occluders(world, scene_id, count, size_range, seed) -> WorldModel:
    """New world with `count` gray boxes dropped collision-free into the scene.

    Scene palettes keep saturation >= 0.4, so the grayscale occluders are
    colors the models never saw. The input world is not modified.
    """
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    lo_s, hi_s = float(size_range[0]), float(size_range[1])
    if lo_s <= 0 or hi_s < lo_s:
        raise InvalidArgumentError("size_range must be positive (lo <= hi)")
    scene = get_scene(world, scene_id)
    (x0, y0, _), (x1, y1, _) = scene.bounds
    t = WALL_THICKNESS
    ix0, iy0 = x0 + t + 0.05, y0 + t + 0.05
    ix1, iy1 = x1 - t - 0.05, y1 - t - 0.05

    solid = [
        (*p.lo, *p.hi)
        for p in scene.primitives
        if p.kind in ("furniture", "occluder")
    ]
    g = rng(seed, scene_id, _TAG_OCCLUDERS)
    new_prims = []
    for _ in range(count):
        placed = None
        for _ in range(200):
            w = g.uniform(lo_s, hi_s)
            d = g.uniform(lo_s, hi_s)
            h = min(g.uniform(lo_s, hi_s), WALL_HEIGHT - 0.2)
            if ix0 + w >= ix1 or iy0 + d >= iy1:
                continue
            cx = g.uniform(ix0 + w / 2, ix1 - w / 2)
            cy = g.uniform(iy0 + d / 2, iy1 - d / 2)
            box = (cx - w / 2, cy - d / 2, FLOOR_THICKNESS, cx + w / 2, cy + d / 2, FLOOR_THICKNESS + h)
            if not any(_boxes_overlap(box, other, 0.05) for other in solid):
                placed = box
                break
        if placed is None:
            raise PlacementFailureError(
                f"no collision-free spot for occluder in scene {scene_id} after 200 tries"
            )
        solid.append(placed)
        val = g.uniform(0.15, 0.95)
        new_prims.append(
            Primitive("occluder", tuple(placed[:3]), tuple(placed[3:]), (val, val, val))
        )

    prims = list(scene.primitives) + new_prims
    cloud = _build_cloud(prims, world.seed, scene_id)
    new_scene = SceneModel(scene.id, scene.name, prims, cloud, scene.bounds)
    scenes = [new_scene if s.id == scene_id else s for s in world.scenes]
    return WorldModel(scenes, world.world_bounds, world.seed)


def world_to_dict(world: WorldModel) -> dict:
    return {
        "format_version": WORLD_FORMAT_VERSION,
        "seed": world.seed,
        "world_bounds": {"lo": list(world.world_bounds[0]), "hi": list(world.world_bounds[1])},
        "scenes": [
            {
                "id": s.id,
                "name": s.name,
                "bounds": {"lo": list(s.bounds[0]), "hi": list(s.bounds[1])},
                "vertex_count": int(s.vertex_cloud.points.shape[0]),
                "primitives": [
                    {"kind": p.kind, "lo": list(p.lo), "hi": list(p.hi), "color": list(p.color)}
                    for p in s.primitives
                ],
            }
            for s in world.scenes
        ],
    }


def save_world(world: WorldModel, path) -> None:
    write_json(path, world_to_dict(world))


def load_world(path) -> WorldModel:
    doc = read_json(path)
    if doc.get("format_version") != WORLD_FORMAT_VERSION:
        raise ParseError(f"unsupported world format {doc.get('format_version')!r}")
    seed = int(doc["seed"])
    scenes = []
    for s in doc["scenes"]:
        prims = [
            Primitive(p["kind"], tuple(p["lo"]), tuple(p["hi"]), tuple(p["color"]))
            for p in s["primitives"]
        ]
        cloud = _build_cloud(prims, seed, s["id"])
        if cloud.points.shape[0] != s["vertex_count"]:
            raise ParseError(
                f"vertex count mismatch for scene {s['id']}: "
                f"stored {s['vertex_count']}, rebuilt {cloud.points.shape[0]}"
            )
        scenes.append(
            SceneModel(
                int(s["id"]),
                s["name"],
                prims,
                cloud,
                (tuple(s["bounds"]["lo"]), tuple(s["bounds"]["hi"])),
            )
        )
    wb = (tuple(doc["world_bounds"]["lo"]), tuple(doc["world_bounds"]["hi"]))
    return WorldModel(scenes, wb, seed)


def validate_world(world: WorldModel) -> None:
    """Raise InvalidArgumentError if any structural invariant is broken."""
    ids = [s.id for s in world.scenes]
    if len(world.scenes) < 2:
        raise InvalidArgumentError("world must have >= 2 scenes")
    if ids != list(range(len(ids))):
        raise InvalidArgumentError(f"scene ids must be 0..N-1, got {ids}")
    wlo, whi = world.world_bounds
    for s in world.scenes:
        lo, hi = s.bounds
        if not all(wlo[i] <= lo[i] and hi[i] <= whi[i] for i in range(3)):
            raise InvalidArgumentError(f"scene {s.id} bounds outside world bounds")
        if len(s.primitives) < 4:
            raise InvalidArgumentError(f"scene {s.id} has fewer than 4 primitives")
        if s.vertex_cloud.points.shape[0] == 0:
            raise InvalidArgumentError(f"scene {s.id} has an empty vertex cloud")
