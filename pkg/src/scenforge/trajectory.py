"""Seeded waypoint trajectories for every agent of a scenario.

All maneuvers share one integration rule (explicit Euler on a unicycle)::

    p[t+1] = p[t] + speed[t] * T_INTER * (cos yaw[t], sin yaw[t])

so ``yaw[t]`` and ``speed[t]`` are the heading and speed held during the
interval that starts at waypoint ``t``.

The lateral merge controller (``cut_in``) follows a three-phase yaw policy:
approach the goal lane, ease back toward the lane heading, then hold the lane
with a small mean-reverting yaw perturbation. Lane changes and overtakes reuse
it. ``follow``, ``u_turn``, ``overtake``, ``lane_change_*`` and ``stop`` are
reconstructions; only the cut-in policy has a reference algorithm.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsl
from .dsl import EGO, ManeuverCall, ScenarioSpec

__all__ = [
    "CollisionRepairError",
    "KernelParams",
    "Trajectory",
    "agent_rng",
    "cut_in",
    "generate_maneuver",
    "generate_scene",
    "min_separation",
    "rand_in",
    "update_yaw",
]

DEG = math.pi / 180.0
HOLD_STEP = 0.3 * DEG
HOLD_CLAMP = 1.0 * DEG
PED_SPEED = (0.5, 2.0)
PED_JITTER = 2.0 * DEG
SPEED_JITTER = 0.2
# An intruder this far behind the agent (along its heading) is not steered away from.
REAR_MARGIN = 5.0
SIDEWALK = 8.5


@dataclass(frozen=True)
class KernelParams:
    num_point: int = 80
    t_inter: float = 0.25
    v_range: tuple[float, float] = (2.0, 15.0)
    y_range: tuple[float, float] = (3.0, 4.0)
    forward_range: tuple[float, float] = (-5.0 * DEG, 5.0 * DEG)
    safe_dis: float = 10.0
    seed: int = 0
    lane_width: float = 3.5
    min_separation: float = 2.0
    max_repairs: int = 8

    def __post_init__(self):
        if self.num_point < 2:
            raise ValueError("num_point must be >= 2")
        if self.t_inter <= 0:
            raise ValueError("t_inter must be positive")
        for name in ("v_range", "y_range", "forward_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty")
        if self.safe_dis <= 0:
            raise ValueError("safe_dis must be positive")

    @property
    def horizon(self) -> float:
        return (self.num_point - 1) * self.t_inter

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        kw = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ValueError(f"unknown kernel parameter '{k}'")
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass(eq=False)
class Trajectory:
    """Waypoints ``points[:, (x, y, yaw, t)]`` and per-waypoint ``speeds``."""

    agent_id: str
    category: str
    points: np.ndarray
    speeds: np.ndarray
    maneuver: str = ""

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def yaw(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def t(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.agent_id == other.agent_id and self.category == other.category
                and self.maneuver == other.maneuver
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.speeds, other.speeds))

    def to_json(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "category": self.category,
            "maneuver": self.maneuver,
            "points": self.points.tolist(),
            "speeds": self.speeds.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Trajectory":
        pts = np.asarray(d["points"], dtype=float)
        spd = np.asarray(d["speeds"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4 or len(spd) != len(pts):
            raise ValueError(f"malformed trajectory '{d.get('agent_id')}'")
        return cls(d["agent_id"], d["category"], pts, spd, d.get("maneuver", ""))


def dump_trajectories(trajs: Sequence[Trajectory]) -> str:
    return json.dumps([t.to_json() for t in trajs], indent=1) + "\n"


def load_trajectories(text: str) -> list[Trajectory]:
    return [Trajectory.from_json(d) for d in json.loads(text)]


class CollisionRepairError(RuntimeError):
    def __init__(self, pair: tuple[str, str], step: int, distance: float):
        self.pair = pair
        self.step = step
        self.distance = distance
        super().__init__(f"agents {pair[0]!r} and {pair[1]!r} are {distance:.3f} m apart "
                         f"at step {step} after exhausting collision repairs")


def rand_in(u: float, rng_range: Sequence[float]) -> float:
    """Map a uniform sample ``u`` in [0, 1] onto ``[a, b]``."""
    a, b = rng_range
    return a + u * (b - a)


def agent_rng(seed: int, agent_id: str, attempt: int = 0, salt: int = 0) -> np.random.Generator:
    """Independent PCG64 stream keyed by (scene seed, agent id, repair attempt)."""
    words = [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF,
             zlib.crc32(agent_id.encode("utf-8")), attempt, salt]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


# ------------------------------------------------------------------ helpers

class _Track:
    def __init__(self, n: int, dt: float, x0: float, y0: float, yaw0: float, v0: float):
        self.dt = dt
        self.x = np.zeros(n)
        self.y = np.zeros(n)
        self.yaw = np.zeros(n)
        self.v = np.zeros(n)
        self.x[0], self.y[0], self.yaw[0], self.v[0] = x0, y0, yaw0, v0

    def advance(self, t: int) -> None:
        step = self.v[t - 1] * self.dt
        self.x[t] = self.x[t - 1] + step * math.cos(self.yaw[t - 1])
        self.y[t] = self.y[t - 1] + step * math.sin(self.yaw[t - 1])

    def finish(self, agent_id: str, category: str, maneuver: str) -> Trajectory:
        n = len(self.x)
        t = np.arange(n) * self.dt
        pts = np.stack([self.x, self.y, self.yaw, t], axis=1)
        return Trajectory(agent_id, category, pts, self.v.copy(), maneuver)


def _hold(rel: float, u: float) -> float:
    """Mean-reverting lane-hold yaw update relative to the reference heading."""
    rng_range = (-HOLD_STEP, 0.0) if rel >= 0 else (0.0, HOLD_STEP)
    return float(np.clip(rel + rand_in(u, rng_range), -HOLD_CLAMP, HOLD_CLAMP))


def _lateral(x: float, y: float, h: float) -> float:
    return -math.sin(h) * x + math.cos(h) * y


def _longitudinal(x: float, y: float, h: float) -> float:
    return math.cos(h) * x + math.sin(h) * y


def update_yaw(yaw: float, safe_dis: float, self_xy: np.ndarray, others: Sequence,
               step: int, default: tuple[float, float]) -> tuple[float, float]:
    """Bias a yaw-perturbation range away from the nearest close intruder.

    Only intruders within ``safe_dis`` at ``step`` that are not more than
    ``REAR_MARGIN`` behind the agent count. When one is found the range is
    moved to the side opposite its bearing: ``[-m, 0]`` for an intruder on
    the left (or dead ahead), ``[0, m]`` for one on the right, where ``m`` is
    the larger of the default range's width and magnitude. Equidistant
    intruders resolve to the lowest index.
    """
    px, py = self_xy[step]
    best = None
    for idx, other in enumerate(others):
        oxy = other.xy if isinstance(other, Trajectory) else np.asarray(other)
        dx = oxy[step, 0] - px
        dy = oxy[step, 1] - py
        d = math.hypot(dx, dy)
        if d >= safe_dis:
            continue
        if math.cos(yaw) * dx + math.sin(yaw) * dy < -REAR_MARGIN:
            continue
        if best is None or d < best[0]:
            best = (d, idx, dx, dy)
    if best is None:
        return default
    _, _, dx, dy = best
    bearing = math.atan2(dy, dx) - yaw
    bearing = math.atan2(math.sin(bearing), math.cos(bearing))
    lo, hi = default
    mag = max(hi - lo, abs(lo), abs(hi))
    if mag == 0.0:
        return default
    return (-mag, 0.0) if bearing >= 0 else (0.0, mag)


class _Merge:
    """Three-phase yaw policy steering toward a lateral goal line.

    ``sign`` is the yaw sign that moves the agent toward the goal. Clamps are
    per-phase: approach ``[0, 20 deg]``, merge ``[10, 20 deg]`` (both times
    ``sign``), hold ``+-1 deg``. The per-step lateral move is capped at the
    remaining distance so the goal line is never overshot.
    """

    def __init__(self, goal: float, sign: int, margin: float):
        self.goal = goal
        self.sign = sign
        self.margin = margin
        self.active = True  # False once the goal line has been reached

    def error(self, lat: float) -> float:
        return self.sign * (self.goal - lat)

    def phase(self, lat: float) -> str:
        e = self.error(lat)
        if self.active and e <= 0:
            self.active = False
        if self.active and e > self.margin / 2:
            return "approach"
        if self.active and e > 0.5:
            return "merge"
        return "hold"

    def ranges(self, phase: str, rel: float) -> tuple[tuple[float, float], float, float]:
        s = self.sign
        if phase == "approach":
            rr = (0.0, 0.1) if s > 0 else (-0.1, 0.0)
            lo, hi = (0.0, 20 * DEG) if s > 0 else (-20 * DEG, 0.0)
        elif phase == "merge":
            rr = (-0.1, 0.0) if s > 0 else (0.0, 0.1)
            lo, hi = (10 * DEG, 20 * DEG) if s > 0 else (-20 * DEG, -10 * DEG)
        else:
            rr = (-HOLD_STEP, 0.0) if rel >= 0 else (0.0, HOLD_STEP)
            lo, hi = -HOLD_CLAMP, HOLD_CLAMP
        return rr, lo, hi

    def guard(self, phase: str, lat: float, rel: float, v: float, dt: float) -> float:
        if phase == "hold":
            return rel
        e = self.error(lat)
        step = v * dt
        if step <= 0 or e <= 0:
            return rel
        if step * math.sin(self.sign * rel) > e:
            rel = self.sign * math.asin(min(1.0, e / step))
        return rel


def _steer(track: _Track, t: int, policy: _Merge, rel: float, h: float, v: float,
           rng: np.random.Generator, others: Sequence, safe_dis: float) -> float:
    """One yaw update of the merge controller; returns the new relative yaw."""
    lat = _lateral(track.x[t], track.y[t], h)
    phase = policy.phase(lat)
    rr, lo, hi = policy.ranges(phase, rel)
    if others:
        xy = np.stack([track.x, track.y], axis=1)
        rr = update_yaw(h + rel, safe_dis, xy, others, t, rr)
    rel = float(np.clip(rel + rand_in(rng.random(), rr), lo, hi))
    return policy.guard(phase, lat, rel, v, track.dt)


# ---------------------------------------------------------------- maneuvers

def cut_in(params: KernelParams, target: Trajectory, rng: np.random.Generator,
           others: Sequence[Trajectory] = (), side: str = "random",
           safe_dis: float | None = None, agent_id: str = "agent",
           category: str = "vehicle") -> Trajectory:
    """Merge into ``target``'s lane ahead of it, always faster than it.

    The start point lies 0-10 m ahead of the target's start and ``Y_RANGE``
    to one side. Speed takes a ``[-2, 2]`` m/s random step each waypoint and
    is clamped to ``[target speed + 0.5, V_RANGE.max + 0.5]``; the clamp also
    applies to the initial draw. ``others`` (the target included) feed the
    collision-aware yaw bias.
    """
    n, dt = params.num_point, params.t_inter
    if len(target) != n:
        raise ValueError("target trajectory length does not match num_point")
    safe = params.safe_dis if safe_dis is None else safe_dis
    h = float(target.yaw[0])
    tx0, ty0 = float(target.xy[0, 0]), float(target.xy[0, 1])
    goal = _lateral(tx0, ty0, h)

    ahead = rand_in(rng.random(), (0.0, 10.0))
    if side == "random":
        mult = 1 if rng.random() > 0.5 else -1
    else:
        mult = 1 if side == "left" else -1
    margin = rand_in(rng.random(), params.y_range)
    lon0 = _longitudinal(tx0, ty0, h) + ahead
    lat0 = goal + mult * margin
    x0 = math.cos(h) * lon0 - math.sin(h) * lat0
    y0 = math.sin(h) * lon0 + math.cos(h) * lat0

    def v_clamp(t):
        lo = float(target.speeds[t]) + 0.5
        return lo, max(lo, params.v_range[1] + 0.5)

    v = float(np.clip(rand_in(rng.random(), params.v_range), *v_clamp(0)))
    rel = rand_in(rng.random(), params.forward_range)
    track = _Track(n, dt, x0, y0, h + rel, v)
    policy = _Merge(goal, -mult, margin)
    others = list(others) or [target]
    for t in range(1, n):
        track.advance(t)
        v = float(np.clip(v + rand_in(rng.random(), (-2.0, 2.0)), *v_clamp(t)))
        rel = _steer(track, t, policy, rel, h, v, rng, others, safe)
        track.yaw[t] = h + rel
        track.v[t] = v
    return track.finish(agent_id, category, "cut_in")


def _ego_pose(context: dict) -> tuple[float, float, float]:
    ego = context.get(EGO)
    if ego is None:
        return 0.0, 0.0, 0.0
    return float(ego.xy[0, 0]), float(ego.xy[0, 1]), float(ego.yaw[0])


def _place(call: ManeuverCall, agent_id: str, context: dict, rng: np.random.Generator,
           lane_width: float) -> tuple[float, float, float]:
    """Start pose: explicit ``start``/``heading`` or a seeded slot near ego."""
    start = dsl.param_value(call, "start")
    heading = dsl.param_value(call, "heading") if "heading" in dsl.lookup(call.function).param_names() else 0.0
    if agent_id == EGO:
        if start == dsl.AUTO:
            return 0.0, 0.0, heading
        return start[0], start[1], heading
    ex, ey, eh = _ego_pose(context)
    if start != dsl.AUTO:
        return start[0], start[1], eh + heading
    lon = rand_in(rng.random(), (15.0, 35.0))
    lat = lane_width * (1 if rng.random() > 0.5 else -1)
    return (ex + math.cos(eh) * lon - math.sin(eh) * lat,
            ey + math.sin(eh) * lon + math.cos(eh) * lat, eh + heading)


def _profile_drive(params: KernelParams, rng: np.random.Generator, pose, v_nominal: np.ndarray,
                   heading_ref: np.ndarray, v_lo: float, v_hi: float,
                   jitter_mask: np.ndarray | None = None) -> _Track:
    """Track a nominal speed and heading profile with per-step perturbation."""
    n, dt = params.num_point, params.t_inter
    x0, y0, _ = pose
    jm = np.ones(n, dtype=bool) if jitter_mask is None else jitter_mask

    def speed(t):
        v = v_nominal[t]
        if jm[t] and v > 0:
            v += rand_in(rng.random(), (-SPEED_JITTER, SPEED_JITTER))
        return float(np.clip(v, v_lo, v_hi))

    track = _Track(n, dt, x0, y0, float(heading_ref[0]), speed(0))
    rel = 0.0
    for t in range(1, n):
        track.advance(t)
        rel = _hold(rel, rng.random())
        track.yaw[t] = heading_ref[t] + rel
        track.v[t] = speed(t)
    return track


def _lane_change(params, rng, pose, speed, offset, sign, start_time, others, safe):
    n, dt = params.num_point, params.t_inter
    x0, y0, h = pose
    v_lo, v_hi = params.v_range
    k0 = int(round(start_time / dt))
    goal = _lateral(x0, y0, h) + sign * offset
    policy = _Merge(goal, sign, offset)

    def vel():
        return float(np.clip(speed + rand_in(rng.random(), (-SPEED_JITTER, SPEED_JITTER)), v_lo, v_hi))

    v = vel()
    track = _Track(n, dt, x0, y0, h, v)
    rel = 0.0
    for t in range(1, n):
        track.advance(t)
        v = vel()
        if t < k0:
            rel = _hold(rel, rng.random())
        else:
            rel = _steer(track, t, policy, rel, h, v, rng, others, safe)
        track.yaw[t] = h + rel
        track.v[t] = v
    return track


def _overtake(params, rng, call, target: Trajectory, others, safe, agent_id):
    n, dt = params.num_point, params.t_inter
    h = float(target.yaw[0])
    tx0, ty0 = float(target.xy[0, 0]), float(target.xy[0, 1])
    start = dsl.param_value(call, "start")
    if start == dsl.AUTO:
        lon = _longitudinal(tx0, ty0, h) - rand_in(rng.random(), (12.0, 20.0))
        lat = _lateral(tx0, ty0, h)
        x0 = math.cos(h) * lon - math.sin(h) * lat
        y0 = math.sin(h) * lon + math.cos(h) * lat
    else:
        x0, y0 = start
    sign = 1 if dsl.param_value(call, "side") == "left" else -1
    offset = dsl.param_value(call, "offset")
    gap = dsl.param_value(call, "gap")
    home = _lateral(x0, y0, h)
    out = _Merge(home + sign * offset, sign, offset)
    back = _Merge(home, -sign, offset)
    v_lo, v_hi = params.v_range

    def vel():
        return float(np.clip(v_hi - rand_in(rng.random(), (0.0, 1.0)), v_lo, v_hi))

    v = vel()
    track = _Track(n, dt, x0, y0, h, v)
    rel = 0.0
    stage, held = "out", 0
    hold_steps = int(round(3.0 / dt))
    for t in range(1, n):
        track.advance(t)
        v = vel()
        if stage == "out":
            rel = _steer(track, t, out, rel, h, v, rng, others, safe)
            if not out.active or out.phase(_lateral(track.x[t], track.y[t], h)) == "hold":
                stage = "pass"
        elif stage == "pass":
            rel = _hold(rel, rng.random())
            held += 1
            lead = (_longitudinal(track.x[t], track.y[t], h)
                    - _longitudinal(target.xy[t, 0], target.xy[t, 1], h))
            if held >= hold_steps and lead >= gap:
                stage = "back"
        else:
            rel = _steer(track, t, back, rel, h, v, rng, others, safe)
        track.yaw[t] = h + rel
        track.v[t] = v
    return track.finish(agent_id, "vehicle", "overtake")


def _follow(params, rng, call, target: Trajectory, agent_id):
    n, dt = params.num_point, params.t_inter
    h = float(target.yaw[0])
    tg = dsl.param_value(call, "time_gap")
    standstill = 4.0
    tx0, ty0 = float(target.xy[0, 0]), float(target.xy[0, 1])
    start = dsl.param_value(call, "start")
    if start == dsl.AUTO:
        lon = _longitudinal(tx0, ty0, h) - (tg * float(target.speeds[0]) + standstill)
        lat = _lateral(tx0, ty0, h)
        x0 = math.cos(h) * lon - math.sin(h) * lat
        y0 = math.sin(h) * lon + math.cos(h) * lat
    else:
        x0, y0 = start
    v_lo, v_hi = params.v_range

    def vel(t, x, y):
        gap = (_longitudinal(target.xy[t, 0], target.xy[t, 1], h) - _longitudinal(x, y, h))
        want = tg * float(target.speeds[t]) + standstill
        v = float(target.speeds[t]) + 0.5 * (gap - want)
        v += rand_in(rng.random(), (-SPEED_JITTER, SPEED_JITTER))
        return float(np.clip(v, v_lo, v_hi))

    track = _Track(n, dt, x0, y0, h, vel(0, x0, y0))
    for t in range(1, n):
        track.advance(t)
        err = _lateral(target.xy[t, 0], target.xy[t, 1], h) - _lateral(track.x[t], track.y[t], h)
        rel = float(np.clip(math.atan2(err, 10.0), -5 * DEG, 5 * DEG))
        track.yaw[t] = h + rel
        track.v[t] = vel(t, track.x[t], track.y[t])
    return track.finish(agent_id, "vehicle", "follow")


def _pedestrian(params, rng, call, context, agent_id):
    n, dt = params.num_point, params.t_inter
    ex, ey, eh = _ego_pose(context)
    speed = dsl.param_value(call, "speed")
    if speed == dsl.AUTO:
        speed = rand_in(rng.random(), PED_SPEED)
    if call.function == "pedestrian_cross":
        s = 1 if dsl.param_value(call, "direction") == "left" else -1
        lon = dsl.param_value(call, "at") + rand_in(rng.random(), (-5.0, 5.0))
        lat = -s * (SIDEWALK + rand_in(rng.random(), (0.0, 1.0)))
        base = eh + s * math.pi / 2
        x0 = ex + math.cos(eh) * lon - math.sin(eh) * lat
        y0 = ey + math.sin(eh) * lon + math.cos(eh) * lat
    else:
        start = dsl.param_value(call, "start")
        base = eh + dsl.param_value(call, "heading")
        if start == dsl.AUTO:
            lon = rand_in(rng.random(), (10.0, 30.0))
            lat = SIDEWALK * (1 if rng.random() > 0.5 else -1)
            x0 = ex + math.cos(eh) * lon - math.sin(eh) * lat
            y0 = ey + math.sin(eh) * lon + math.cos(eh) * lat
        else:
            x0, y0 = start

    def vel(v):
        return float(np.clip(v + rand_in(rng.random(), (-0.1, 0.1)), *PED_SPEED))

    v = vel(speed)
    track = _Track(n, dt, x0, y0, base + rand_in(rng.random(), (-PED_JITTER, PED_JITTER)), v)
    for t in range(1, n):
        track.advance(t)
        track.yaw[t] = base + rand_in(rng.random(), (-PED_JITTER, PED_JITTER))
        v = vel(v)
        track.v[t] = v
    return track.finish(agent_id, "pedestrian", call.function)


def generate_maneuver(call: ManeuverCall, params: KernelParams, context: dict,
                      rng: np.random.Generator, agent_id: str = EGO,
                      category: str = "vehicle") -> Trajectory:
    """Trajectory for one maneuver call.

    ``context`` maps already generated agent ids to trajectories; targets must
    be present there.
    """
    sig = dsl.lookup(call.function)
    if sig.category == "utility":
        raise ValueError(f"'{call.function}' is not a maneuver")
    n, dt = params.num_point, params.t_inter
    others = [tr for aid, tr in context.items() if aid != agent_id]
    target = None
    if "target" in sig.param_names():
        tid = dsl.param_value(call, "target")
        target = context.get(tid)
        if target is None:
            raise ValueError(f"missing target trajectory '{tid}' for {agent_id}")

    fn = call.function
    if category == "pedestrian":
        return _pedestrian(params, rng, call, context, agent_id)
    if fn == "cut_in":
        return cut_in(params, target, rng, others, side=dsl.param_value(call, "side"),
                      safe_dis=dsl.param_value(call, "safe_dis"), agent_id=agent_id)
    if fn == "overtake":
        return _overtake(params, rng, call, target, others, params.safe_dis, agent_id)
    if fn == "follow":
        return _follow(params, rng, call, target, agent_id)

    pose = _place(call, agent_id, context, rng, params.lane_width)
    h = pose[2]
    times = np.arange(n) * dt
    speed = dsl.param_value(call, "speed")
    v_lo, v_hi = params.v_range
    href = np.full(n, h)
    vnom = np.full(n, float(speed))
    jitter = None

    if fn in ("lane_change_left", "lane_change_right"):
        sign = 1 if fn.endswith("left") else -1
        track = _lane_change(params, rng, pose, speed, dsl.param_value(call, "offset"), sign,
                             dsl.param_value(call, "start_time"), others, params.safe_dis)
        return track.finish(agent_id, category, fn)
    if fn == "accelerate":
        t0 = dsl.param_value(call, "start_time")
        top = max(speed, dsl.param_value(call, "target_speed"))
        vnom = np.minimum(top, speed + dsl.param_value(call, "accel") * np.maximum(0.0, times - t0))
    elif fn in ("brake", "stop"):
        t0 = dsl.param_value(call, "start_time")
        floor = 0.0 if fn == "stop" else min(speed, dsl.param_value(call, "target_speed"))
        vnom = np.maximum(floor, speed - dsl.param_value(call, "decel") * np.maximum(0.0, times - t0))
        v_lo = 0.0
        jitter = vnom > 0
    elif fn in ("steer_left", "steer_right"):
        sign = 1 if fn.endswith("left") else -1
        t0 = dsl.param_value(call, "start_time")
        frac = np.clip((times - t0) / dsl.param_value(call, "duration"), 0.0, 1.0)
        href = h + sign * dsl.param_value(call, "angle") * frac
    elif fn == "u_turn":
        sign = 1 if dsl.param_value(call, "side") == "left" else -1
        k0 = int(round(dsl.param_value(call, "start_time") / dt))
        n_turn = max(1, math.ceil(math.pi * dsl.param_value(call, "radius") / (speed * dt)))
        k = np.arange(n)
        href = h + sign * math.pi * np.clip((k - k0) / n_turn, 0.0, 1.0)
        jitter = ~((k >= k0) & (k < k0 + n_turn))
    elif fn != "forward":
        raise ValueError(f"unsupported maneuver '{fn}'")
    track = _profile_drive(params, rng, pose, vnom, href, v_lo, v_hi, jitter)
    return track.finish(agent_id, category, fn)


# --------------------------------------------------------------------- scene

def _pairwise_min(trajs: Sequence[Trajectory]) -> tuple[float, int, int, int]:
    """(distance, i, j, step) of the closest approach over all pairs."""
    best = (math.inf, -1, -1, -1)
    for i in range(len(trajs)):
        for j in range(i + 1, len(trajs)):
            d = np.hypot(*(trajs[i].xy - trajs[j].xy).T)
            k = int(np.argmin(d))
            if d[k] < best[0]:
                best = (float(d[k]), i, j, k)
    return best


def min_separation(trajs: Sequence[Trajectory]) -> float:
    return _pairwise_min(trajs)[0] if len(trajs) > 1 else math.inf


def generate_scene(spec: ScenarioSpec, params: KernelParams | None = None) -> list[Trajectory]:
    """One trajectory per agent (ego first, then declaration order).

    Pure in ``(spec, params)``. When two agents come closer than
    ``params.min_separation`` the non-ego agent generated later is
    re-sampled with a fresh stream, together with everything generated after
    it, at most ``params.max_repairs`` times per agent.

    Raises:
        CollisionRepairError: the separation still fails after the repairs.
    """
    params = params or KernelParams()
    order = dsl.generation_order(spec)
    decl = {EGO: ("vehicle", spec.ego)}
    for a in spec.agents:
        decl[a.agent_id] = (a.category, a.call)
    attempts = {aid: 0 for aid in order}
    done: dict[str, Trajectory] = {}
    redo_from = 0
    while True:
        for aid in order[redo_from:]:
            done.pop(aid, None)
        for aid in order[redo_from:]:
            cat, call = decl[aid]
            rng = agent_rng(spec.seed, aid, attempts[aid], params.seed)
            context = {k: done[k] for k in order if k in done}
            done[aid] = generate_maneuver(call, params, context, rng, aid, cat)
        ordered = [done[aid] for aid in spec.agent_ids()]
        d, i, j, k = _pairwise_min(ordered) if len(ordered) > 1 else (math.inf, 0, 0, 0)
        if d >= params.min_separation:
            return ordered
        a, b = ordered[i].agent_id, ordered[j].agent_id
        candidates = [x for x in (a, b) if x != EGO]
        victim = max(candidates, key=order.index)
        attempts[victim] += 1
        if attempts[victim] > params.max_repairs:
            raise CollisionRepairError((a, b), k, d)
        redo_from = order.index(victim)
