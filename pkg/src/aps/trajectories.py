"""Camera trajectory generators.

Five regimes: rectangular (room perimeter), circular, semicircular,
spiral (Archimedean), and random. Path regimes are planar at a per-regime
height and face the direction of travel; `direction` can replay a path
backward (yaw flipped) or both ways. Consecutive waypoints of any path
regime are never more than `step` meters apart.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DoesNotFitError, InvalidArgumentError
from .geometry import yaw_quat
from .scene_world import WALL_HEIGHT, WALL_THICKNESS, CameraPose
from .util import rng

REGIMES = ("rectangular", "circular", "semicircular", "spiral", "random")
DIRECTIONS = ("forward", "backward", "both")

# distinct planar heights per regime keep the z axis informative across a
# scene's pooled trajectories
REGIME_HEIGHTS = {
    "rectangular": 1.2,
    "circular": 1.4,
    "semicircular": 1.6,
    "spiral": 1.8,
    "random": 1.5,
}

_TAG_RANDOM = 201
_SPACING_SLACK = 1.0 + 1e-6


def _inset_rect(scene_bounds, margin):
    (x0, y0, _), (x1, y1, _) = scene_bounds
    pad = WALL_THICKNESS + margin
    rect = (x0 + pad, y0 + pad, x1 - pad, y1 - pad)
    if rect[2] - rect[0] <= 0 or rect[3] - rect[1] <= 0:
        raise DoesNotFitError(
            f"margin {margin} leaves no interior in scene bounds {scene_bounds}"
        )
    return rect


def _finalize(waypoints, height, direction):
    if direction not in DIRECTIONS:
        raise InvalidArgumentError(f"direction must be one of {DIRECTIONS}")
    if direction == "backward":
        waypoints = [(x, y, yaw + math.pi) for x, y, yaw in reversed(waypoints)]
    elif direction == "both":
        back = [(x, y, yaw + math.pi) for x, y, yaw in reversed(waypoints)]
        waypoints = list(waypoints) + back
    return [
        CameraPose((x, y, height), yaw_quat(yaw)) for x, y, yaw in waypoints
    ]


def rectangular_trajectory(scene_bounds, step, margin=0.45, height=None, direction="forward"):
    """Counter-clockwise perimeter walk along the inset rectangle."""
    if step <= 0:
        raise InvalidArgumentError("step must be > 0")
    h = REGIME_HEIGHTS["rectangular"] if height is None else height
    x0, y0, x1, y1 = _inset_rect(scene_bounds, margin)
    w, d = x1 - x0, y1 - y0
    perimeter = 2 * (w + d)
    count = int(math.floor(perimeter / step))
    if count < 4:
        raise DoesNotFitError(f"step {step} too coarse for perimeter {perimeter:.3f}")
    corners = np.array([0.0, w, w + d, 2 * w + d, perimeter])
    waypoints = []
    for k in range(count):
        s = k * step
        side = int(np.searchsorted(corners, s, side="right")) - 1
        side = min(side, 3)
        r = s - corners[side]
        if side == 0:
            waypoints.append((x0 + r, y0, 0.0))
        elif side == 1:
            waypoints.append((x1, y0 + r, math.pi / 2))
        elif side == 2:
            waypoints.append((x1 - r, y1, math.pi))
        else:
            waypoints.append((x0, y1 - r, -math.pi / 2))
    return _finalize(waypoints, h, direction)


def _circle_params(scene_bounds, margin, radius):
    x0, y0, x1, y1 = _inset_rect(scene_bounds, margin)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    rmax = min(x1 - x0, y1 - y0) / 2
    r = 0.8 * rmax if radius is None else float(radius)
    if r <= 0 or r > rmax:
        raise DoesNotFitError(f"radius {r:.3f} not in (0, {rmax:.3f}]")
    return cx, cy, r


def circular_trajectory(scene_bounds, step, margin=0.45, height=None, direction="forward", radius=None):
    if step <= 0:
        raise InvalidArgumentError("step must be > 0")
    h = REGIME_HEIGHTS["circular"] if height is None else height
    cx, cy, r = _circle_params(scene_bounds, margin, radius)
    circumference = 2 * math.pi * r
    n = max(3, int(round(circumference / step)))
    while circumference / n > step * _SPACING_SLACK:
        n += 1
    theta = 2 * math.pi * np.arange(n) / n
    waypoints = [
        (cx + r * math.cos(t), cy + r * math.sin(t), t + math.pi / 2) for t in theta
    ]
    return _finalize(waypoints, h, direction)


def semicircular_trajectory(scene_bounds, step, margin=0.45, height=None, direction="forward", radius=None):
    if step <= 0:
        raise InvalidArgumentError("step must be > 0")
    h = REGIME_HEIGHTS["semicircular"] if height is None else height
    cx, cy, r = _circle_params(scene_bounds, margin, radius)
    arc = math.pi * r
    n = max(2, int(round(arc / step)))
    while arc / n > step * _SPACING_SLACK:
        n += 1
    theta = math.pi * np.arange(n + 1) / n
    waypoints = [
        (cx + r * math.cos(t), cy + r * math.sin(t), t + math.pi / 2) for t in theta
    ]
    return _finalize(waypoints, h, direction)


def spiral_trajectory(scene_bounds, step, margin=0.45, height=None, direction="forward", radius=None, turns=2.5):
    """Archimedean spiral r = b * theta out from the room center.

    The spiral is densely sampled and waypoints are emitted every 0.98 * step
    of arc length, which keeps consecutive spacing within step even though
    the arc is curved.
    """
    if step <= 0:
        raise InvalidArgumentError("step must be > 0")
    if turns <= 0:
        raise InvalidArgumentError("turns must be > 0")
    h = REGIME_HEIGHTS["spiral"] if height is None else height
    cx, cy, r_outer = _circle_params(scene_bounds, margin, radius)
    theta_max = 2 * math.pi * turns
    b = r_outer / theta_max

    theta = np.linspace(0.0, theta_max, 20001)
    rr = b * theta
    xs = cx + rr * np.cos(theta)
    ys = cy + rr * np.sin(theta)
    seg = np.hypot(np.diff(xs), np.diff(ys))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(0.0, s[-1], 0.98 * step)
    idx = np.unique(np.searchsorted(s, targets))

    waypoints = []
    for i in idx:
        t = theta[i]
        # tangent of (b t cos t, b t sin t) with respect to t
        yaw = math.atan2(b * math.sin(t) + b * t * math.cos(t),
                         b * math.cos(t) - b * t * math.sin(t))
        waypoints.append((float(xs[i]), float(ys[i]), yaw))
    if len(waypoints) < 2:
        raise DoesNotFitError(f"step {step} too coarse for spiral of radius {r_outer:.3f}")
    return _finalize(waypoints, h, direction)


def random_poses(scene_bounds, count, seed, margin=0.45, height=None):
    """Uniform positions in the inset rectangle with uniform yaw."""
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    h = REGIME_HEIGHTS["random"] if height is None else height
    x0, y0, x1, y1 = _inset_rect(scene_bounds, margin)
    g = rng(seed, _TAG_RANDOM)
    xs = g.uniform(x0, x1, size=count)
    ys = g.uniform(y0, y1, size=count)
    yaws = g.uniform(-math.pi, math.pi, size=count)
    return [
        CameraPose((float(x), float(y), h), yaw_quat(float(t)))
        for x, y, t in zip(xs, ys, yaws)
    ]


def generate_trajectory(scene_bounds, regime, step=0.35, margin=0.45, height=None,
                        direction="forward", seed=0, **params):
    """Dispatch to a regime generator; see the regime functions for params."""
    if regime not in REGIMES:
        raise InvalidArgumentError(f"regime must be one of {REGIMES}, got {regime!r}")
    h = REGIME_HEIGHTS[regime] if height is None else float(height)
    if not 0.0 < h < WALL_HEIGHT:
        raise InvalidArgumentError(f"height {h} outside (0, {WALL_HEIGHT})")
    if regime == "rectangular":
        return rectangular_trajectory(scene_bounds, step, margin, h, direction)
    if regime == "circular":
        return circular_trajectory(scene_bounds, step, margin, h, direction,
                                   radius=params.get("radius"))
    if regime == "semicircular":
        return semicircular_trajectory(scene_bounds, step, margin, h, direction,
                                       radius=params.get("radius"))
    if regime == "spiral":
        return spiral_trajectory(scene_bounds, step, margin, h, direction,
                                 radius=params.get("radius"),
                                 turns=params.get("turns", 2.5))
    return random_poses(scene_bounds, params.get("count", 60), seed, margin, h)


def trajectory_spacing(poses) -> np.ndarray:
    """Euclidean distances between consecutive pose positions."""
    p = np.array([pose.position for pose in poses], dtype=np.float64)
    if p.shape[0] < 2:
        return np.zeros(0)
    return np.linalg.norm(np.diff(p, axis=0), axis=1)
