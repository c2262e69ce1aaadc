"""Synthetic corridor world: scene generation, RGB-D rendering, expert steering.

The world lives in a plane.  The corridor runs along +x between side walls at
``y = +-width/2``; walls and obstacles are floor-to-ceiling, so one horizontal
raycast per image column determines every pixel in that column.  Bearings are
positive to the left (counter-clockwise), and a positive angular velocity
turns the robot left.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

FOV = math.radians(65.0)
CAMERA_HEIGHT = 0.2
CEILING_HEIGHT = 2.5
N_RAYS = 240
MIN_DEPTH_MM = 300
MAX_DEPTH_MM = 10000
LINEAR_VELOCITY = 0.1
DT = 0.2
MAX_STEPS = 200
COLLISION_DISTANCE = 0.25
FREE_DISTANCE = 1.5
STEER_GAIN = 0.6
MAX_OMEGA = 0.3
OMEGA_GRID = (-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3)
PERTURB = 0.3  # chance per step of starting a held random command

FLOOR_GREY = 0.45
CEILING_GREY = 0.8
PALETTE = np.array([
    [0.85, 0.80, 0.70],  # walls
    [0.60, 0.66, 0.75],
    [0.80, 0.15, 0.15],  # obstacles
    [0.15, 0.65, 0.20],
    [0.15, 0.25, 0.80],
    [0.90, 0.80, 0.10],
    [0.95, 0.50, 0.10],
    [0.55, 0.20, 0.65],
])
N_WALL_COLORS = 2


@dataclass(frozen=True)
class WorldSpec:
    width: float
    length: float
    walls: np.ndarray       # [K, 5]: x0, y0, x1, y1, color index
    obstacles: np.ndarray   # [M, 6]: x, y, radius, color index, vx, vy
    light: float

    def __eq__(self, other):
        return (isinstance(other, WorldSpec) and self.width == other.width and self.length == other.length
                and self.light == other.light and np.array_equal(self.walls, other.walls)
                and np.array_equal(self.obstacles, other.obstacles))

    __hash__ = None


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def corridor_walls(width: float, length: float, rng: np.random.Generator | None = None) -> np.ndarray:
    half = width / 2
    colors = rng.integers(0, N_WALL_COLORS, 4) if rng is not None else np.zeros(4, dtype=int)
    return np.array([
        [0.0, half, length, half, colors[0]],
        [0.0, -half, length, -half, colors[1]],
        [length, -half, length, half, colors[2]],
        [0.0, -half, 0.0, half, colors[3]],
    ], dtype=np.float64)


def generate_world(rng: np.random.Generator, difficulty: int = 1) -> WorldSpec:
    """Random corridor.  difficulty 0: empty; 1: 3-5 obstacles; 2+: 5-8 obstacles."""
    width = float(rng.uniform(1.6, 2.4))
    length = float(rng.uniform(8.0, 12.0))
    light = float(rng.uniform(0.3, 1.0))
    walls = corridor_walls(width, length, rng)
    if difficulty <= 0:
        n = 0
    elif difficulty == 1:
        n = int(rng.integers(3, 6))
    else:
        n = int(rng.integers(5, 9))
    obstacles = np.zeros((n, 6))
    for k in range(n):
        r = rng.uniform(0.1, 0.3)
        x = rng.uniform(1.5, length - 0.5)
        y = rng.uniform(-width / 2 + r, width / 2 - r)
        color = rng.integers(N_WALL_COLORS, len(PALETTE))
        vy = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.15) if rng.random() < 0.3 else 0.0
        obstacles[k] = (x, y, r, color, 0.0, vy)
    return WorldSpec(width, length, walls, obstacles, light)


def advance_world(world: WorldSpec, dt: float) -> WorldSpec:
    """Move dynamic obstacles, bouncing off the side walls."""
    if not len(world.obstacles) or not np.any(world.obstacles[:, 4:6]):
        return world
    obs = world.obstacles.copy()
    obs[:, 0] += obs[:, 4] * dt
    obs[:, 1] += obs[:, 5] * dt
    lim = world.width / 2 - obs[:, 2]
    hi, lo = obs[:, 1] > lim, obs[:, 1] < -lim
    obs[hi, 1] = 2 * lim[hi] - obs[hi, 1]
    obs[lo, 1] = -2 * lim[lo] - obs[lo, 1]
    obs[hi | lo, 5] *= -1
    obs[:, 0] = np.clip(obs[:, 0], obs[:, 2], world.length - obs[:, 2])
    return replace(world, obstacles=obs)


def mirror_world(world: WorldSpec) -> WorldSpec:
    walls = world.walls.copy()
    walls[:, [1, 3]] *= -1
    obs = world.obstacles.copy()
    obs[:, [1, 5]] *= -1
    return replace(world, walls=walls, obstacles=obs)


def mirror_state(state: RobotState) -> RobotState:
    return RobotState(state.x, -state.y, -state.heading)


def focal_length(size: int) -> float:
    return (size / 2) / math.tan(FOV / 2)


def ray_bearings(n: int = N_RAYS) -> np.ndarray:
    """Bearing of each image column relative to the heading; column 0 is leftmost."""
    f = focal_length(n)
    return np.arctan((n / 2 - (np.arange(n) + 0.5)) / f)


def raycast(world: WorldSpec, state: RobotState, n: int = N_RAYS) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal distance and surface color index of the first hit along each column's ray."""
    ang = state.heading + ray_bearings(n)
    dx, dy = np.cos(ang), np.sin(ang)
    best = np.full(n, np.inf)
    color = np.zeros(n, dtype=np.int64)

    for x0, y0, x1, y1, c in world.walls:
        ex, ey = x1 - x0, y1 - y0
        denom = dx * ey - dy * ex
        with np.errstate(divide="ignore", invalid="ignore"):
            wx, wy = x0 - state.x, y0 - state.y
            t = (wx * ey - wy * ex) / denom
            s = (wx * dy - wy * dx) / denom
        hit = (np.abs(denom) > 1e-12) & (t > 0) & (s >= 0) & (s <= 1) & (t < best)
        best = np.where(hit, t, best)
        color = np.where(hit, int(c), color)

    for ox, oy, r, c, _, _ in world.obstacles:
        fx, fy = state.x - ox, state.y - oy
        b = fx * dx + fy * dy
        disc = b * b - (fx * fx + fy * fy - r * r)
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = -b - sq
        t = np.where(t > 0, t, -b + sq)
        hit = (disc >= 0) & (t > 0) & (t < best)
        best = np.where(hit, t, best)
        color = np.where(hit, int(c), color)
    return best, color


def render(world: WorldSpec, state: RobotState, size: int = 240) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(rgb uint8 [3,S,S], depth uint16 [1,S,S] in mm)``."""
    if not inside(world, state):
        raise ValueError(f"robot state {state} is outside the world")
    dist, color = raycast(world, state, size)
    f = focal_length(size)
    t = ((np.arange(size) + 0.5) - size / 2) / f  # tan of the angle below the horizon, per row
    with np.errstate(divide="ignore"):
        plane = np.where(t > 0, CAMERA_HEIGHT / t, (CEILING_HEIGHT - CAMERA_HEIGHT) / -t)
    plane = np.where(t == 0, np.inf, plane)
    wall_px = dist[None, :] <= plane[:, None]
    depth_m = np.where(wall_px, dist[None, :], plane[:, None])
    depth = np.clip(np.round(np.nan_to_num(depth_m, posinf=1e9) * 1000.0), MIN_DEPTH_MM, MAX_DEPTH_MM)

    shade = PALETTE[color] / (1.0 + 0.1 * np.where(np.isfinite(dist), dist, 1e9))[:, None]  # [S, 3]
    plane_grey = np.where(t > 0, FLOOR_GREY, CEILING_GREY)
    img = np.where(wall_px[..., None], shade[None, :, :], plane_grey[:, None, None])
    rgb = np.clip(np.round(img * world.light * 255.0), 0, 255).astype(np.uint8)
    return (np.ascontiguousarray(rgb.transpose(2, 0, 1)),
            depth.astype(np.uint16)[None])


def inside(world: WorldSpec, state: RobotState) -> bool:
    return 0.0 < state.x < world.length and abs(state.y) < world.width / 2


def clearance(world: WorldSpec, state: RobotState) -> float:
    """Distance from the robot center to the nearest wall or obstacle surface."""
    p = np.array([state.x, state.y])
    best = np.inf
    for x0, y0, x1, y1, _ in world.walls:
        a, b = np.array([x0, y0]), np.array([x1, y1])
        ab = b - a
        u = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + u * ab))))
    for ox, oy, r, *_ in world.obstacles:
        best = min(best, math.hypot(state.x - ox, state.y - oy) - r)
    return best


def quantize_omega(w: float) -> float:
    """Clamp to [-0.3, 0.3] and round to the 0.1 grid, ties toward zero."""
    w = max(-MAX_OMEGA, min(MAX_OMEGA, w))
    k = math.ceil(abs(w) / 0.1 - 0.5)
    if k == 0:
        return 0.0
    return math.copysign(k / 10.0, w)


def expert_policy(world: WorldSpec, state: RobotState) -> float:
    """Steer toward the center of the widest free gap in the 240-ray scan.

    A ray is free when its hit lies beyond 1.5 m.  Equal-width gaps are broken
    by the smaller absolute bearing, then by preferring the left one.  A fully
    blocked scan turns left at the maximum rate.
    """
    dist, _ = raycast(world, state, N_RAYS)
    bearings = ray_bearings(N_RAYS)
    free = dist > FREE_DISTANCE
    best = None
    j = 0
    while j < N_RAYS:
        if not free[j]:
            j += 1
            continue
        k = j
        while k + 1 < N_RAYS and free[k + 1]:
            k += 1
        center = (bearings[j] + bearings[k]) / 2
        key = (k - j + 1, -abs(center), center)
        if best is None or key > best[0]:
            best = (key, center)
        j = k + 1
    if best is None:
        return MAX_OMEGA
    return quantize_omega(STEER_GAIN * best[1])


def step(state: RobotState, omega: float, dt: float = DT, v: float = LINEAR_VELOCITY) -> RobotState:
    """Unicycle kinematics at constant linear velocity."""
    return RobotState(state.x + v * math.cos(state.heading) * dt,
                      state.y + v * math.sin(state.heading) * dt,
                      wrap_angle(state.heading + omega * dt))


def initial_state(world: WorldSpec, rng: np.random.Generator) -> RobotState:
    return RobotState(0.4, float(rng.uniform(-0.3, 0.3) * world.width / 2), float(rng.uniform(-0.35, 0.35)))


def run_episode(world: WorldSpec, rng: np.random.Generator, max_steps: int = MAX_STEPS,
                perturb: float = PERTURB, hold: tuple[int, int] = (3, 8)):
    """Yield ``(world, state, expert_omega)`` along one expert-driven episode.

    At each step, with probability ``perturb``, the robot starts executing a
    random grid command for a random number of steps in ``hold`` instead of
    the expert's.  This spreads the visited headings; the recorded label is
    always the expert's.
    """
    state = initial_state(world, rng)
    override, remaining = 0.0, 0
    for _ in range(max_steps):
        if clearance(world, state) < COLLISION_DISTANCE or not inside(world, state):
            return
        label = expert_policy(world, state)
        yield world, state, label
        if remaining == 0 and rng.random() < perturb:
            override = float(rng.choice(OMEGA_GRID))
            remaining = int(rng.integers(hold[0], hold[1] + 1))
        executed = label
        if remaining > 0:
            executed, remaining = override, remaining - 1
        state = step(state, executed)
        world = advance_world(world, DT)
