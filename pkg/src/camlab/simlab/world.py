"""Kinematic world model: primitive objects, attachment, drop-to-support.

No dynamics: a released object falls instantly to rest on the highest
supporting surface beneath its center, held objects follow the end-effector
rigidly, and nothing ever bounces. This keeps every failure mode geometric
and every run bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from camlab.geom3d import Pose, quat_slerp, quat_to_mat

__all__ = [
    "DT",
    "TICK_HZ",
    "WORLD",
    "END_EFFECTOR",
    "Shape",
    "box_shape",
    "cylinder_shape",
    "SimObject",
    "SimState",
    "Waypoint",
    "PolicyScript",
    "PolicyRuntime",
    "Simulation",
    "CONTINUE",
    "HALT_AND_REPLAN",
    "DONE",
]

TICK_HZ = 20
DT = 1.0 / TICK_HZ

WORLD = "world"
END_EFFECTOR = "end_effector"

CONTINUE = "continue"
HALT_AND_REPLAN = "halt_and_replan"
DONE = "done"


@dataclass(frozen=True)
class Shape:
    kind: str  # "box" | "cylinder"
    extents: np.ndarray | None = None  # full side lengths for boxes
    radius: float = 0.0
    height: float = 0.0

    def half_extents(self) -> np.ndarray:
        if self.kind == "box":
            return self.extents / 2.0
        return np.array([self.radius, self.radius, self.height / 2.0])


def box_shape(ex: float, ey: float, ez: float) -> Shape:
    return Shape("box", extents=np.array([ex, ey, ez], dtype=np.float64))


def cylinder_shape(radius: float, height: float) -> Shape:
    return Shape("cylinder", radius=radius, height=height)


@dataclass
class SimObject:
    oid: str
    shape: Shape
    pose: Pose
    parts: dict = field(default_factory=dict)  # name -> (lo, hi) local AABB
    attached_to: str = WORLD
    attach_offset: Pose = field(default_factory=Pose.identity)
    # container objects (e.g. a pen holder) accept dropped objects whose
    # center lands within bore_radius of the axis; they rest on the inner floor
    bore_radius: float = 0.0
    bore_floor_z: float = 0.0  # local z of the inner floor

    def world_half_z(self) -> float:
        """Half the world-frame z-extent (handles rotated objects)."""
        r = quat_to_mat(self.pose.q)
        if self.shape.kind == "box":
            return float(np.abs(r[2]) @ (self.shape.extents / 2.0))
        ax = abs(r[2, 2])
        lat = math.sqrt(max(1.0 - ax * ax, 0.0))
        return ax * self.shape.height / 2.0 + lat * self.shape.radius

    def top_z(self) -> float:
        return float(self.pose.t[2]) + self.world_half_z()

    def supports_xy(self, xy: np.ndarray) -> bool:
        """True if a center at xy (world) would rest on this object's top."""
        d = xy - self.pose.t[:2]
        half = self.shape.half_extents()
        if self.shape.kind == "box":
            return bool(abs(d[0]) <= half[0] and abs(d[1]) <= half[1])
        return bool(d[0] ** 2 + d[1] ** 2 <= self.shape.radius**2)

    def in_bore_xy(self, xy: np.ndarray) -> bool:
        if self.bore_radius <= 0:
            return False
        d = xy - self.pose.t[:2]
        return bool(d[0] ** 2 + d[1] ** 2 <= self.bore_radius**2)

    def lateral_half_extent(self) -> float:
        """Worst-case world-frame horizontal half-extent (for bore fit)."""
        r = quat_to_mat(self.pose.q)
        if self.shape.kind == "box":
            h = self.shape.extents / 2.0
            return float(max(np.abs(r[0]) @ h, np.abs(r[1]) @ h))
        ax = abs(r[2, 2])
        lat = math.sqrt(max(1.0 - ax * ax, 0.0))
        return lat * self.shape.height / 2.0 + self.shape.radius


@dataclass
class SimState:
    tick: int = 0
    objects: dict = field(default_factory=dict)  # oid -> SimObject
    ee_pose: Pose = field(default_factory=Pose.identity)
    held: list = field(default_factory=list)  # oids attached to the EE
    events: list = field(default_factory=list)

    def log(self, kind: str, **payload):
        self.events.append({"tick": self.tick, "kind": kind, "payload": payload})


# ---------------------------------------------------------------------------
# waypoint policies


@dataclass
class Waypoint:
    pos: np.ndarray | None = None  # None keeps the current position
    quat: np.ndarray | None = None  # None keeps the current orientation
    speed: float = 0.15  # m/s
    ang_speed: float = math.pi  # rad/s
    dwell: int = 0  # extra ticks to hold at the waypoint
    action: tuple = ()  # executed once when the waypoint is reached

    def __post_init__(self):
        if self.pos is not None:
            self.pos = np.asarray(self.pos, dtype=np.float64)
        if self.quat is not None:
            self.quat = np.asarray(self.quat, dtype=np.float64)
        if self.speed <= 0 or self.ang_speed <= 0:
            raise ValueError("waypoint speeds must be positive")


@dataclass
class PolicyScript:
    script_id: str
    waypoints: list
    open_loop: bool = True


class PolicyRuntime:
    """Executes a waypoint script one tick at a time."""

    def __init__(self, script: PolicyScript):
        self.script = script
        self.index = 0
        self.dwelled = 0
        self.halted = False

    @property
    def motion_done(self) -> bool:
        return self.index >= len(self.script.waypoints)

    def halt(self):
        self.halted = True

    def advance(self, sim: "Simulation"):
        """Move the EE toward the active waypoint; run its action on arrival."""
        if self.halted or self.motion_done:
            return
        state = sim.state
        wp = self.script.waypoints[self.index]
        pose = state.ee_pose
        new_t = pose.t
        new_q = pose.q
        pos_done = True
        if wp.pos is not None:
            delta = wp.pos - pose.t
            dist = float(np.linalg.norm(delta))
            step = wp.speed * DT
            if dist > step:
                new_t = pose.t + delta / dist * step
                pos_done = False
            else:
                new_t = wp.pos.copy()
        ang_done = True
        if wp.quat is not None:
            dot = abs(float(np.dot(pose.q, wp.quat)))
            ang = 2.0 * math.acos(min(1.0, dot))
            step = wp.ang_speed * DT
            if ang > step:
                new_q = quat_slerp(pose.q, wp.quat, step / ang)
                ang_done = False
            else:
                new_q = wp.quat.copy()
        state.ee_pose = Pose(new_q / np.linalg.norm(new_q), new_t)
        sim.refresh_attached()
        if pos_done and ang_done:
            if self.dwelled < wp.dwell:
                self.dwelled += 1
                return
            if wp.action:
                sim.run_action(wp.action)
            self.dwelled = 0
            self.index += 1


# ---------------------------------------------------------------------------
# the simulation


class Simulation:
    """Owns sim state, the active policy, and the disturbance injector."""

    def __init__(self, state: SimState, injector=None):
        self.state = state
        self.injector = injector
        self.policy: PolicyRuntime | None = None

    # -- policy & attachment plumbing

    def set_policy(self, script: PolicyScript):
        self.policy = PolicyRuntime(script)

    @property
    def motion_done(self) -> bool:
        return self.policy is None or self.policy.motion_done

    def refresh_attached(self):
        for oid in self.state.held:
            obj = self.state.objects[oid]
            obj.pose = self.state.ee_pose.compose(obj.attach_offset)

    def attach(self, oid: str):
        obj = self.state.objects[oid]
        obj.attached_to = END_EFFECTOR
        obj.attach_offset = self.state.ee_pose.inverse().compose(obj.pose)
        if oid not in self.state.held:
            self.state.held.append(oid)

    def detach(self, oid: str, settle: bool = True):
        obj = self.state.objects[oid]
        obj.attached_to = WORLD
        if oid in self.state.held:
            self.state.held.remove(oid)
        if settle:
            self.drop_to_support(oid)

    def detach_all(self, settle: bool = True):
        for oid in list(self.state.held):
            self.detach(oid, settle=settle)

    # -- settling

    def drop_to_support(self, oid: str):
        """Rest the object on the highest support beneath its center."""
        obj = self.state.objects[oid]
        xy = obj.pose.t[:2]
        bottom = obj.pose.t[2] - obj.world_half_z()
        best = 0.0  # world floor fallback
        inside_bore = False
        for other in self.state.objects.values():
            if other.oid == oid or other.attached_to == END_EFFECTOR:
                continue
            if other.in_bore_xy(xy) and obj.lateral_half_extent() <= other.bore_radius:
                floor = float(other.pose.t[2]) + other.bore_floor_z
                if floor <= bottom + 1e-6:
                    best = max(best, floor)
                    inside_bore = True
                continue
            if other.supports_xy(xy):
                top = other.top_z()
                if top <= bottom + 1e-6:
                    best = max(best, top)
        rest = best + obj.world_half_z()
        obj.pose = Pose(obj.pose.q, np.array([xy[0], xy[1], rest]))
        self.state.log("settled", oid=oid, z=rest, in_bore=inside_bore)

    # -- actions

    def grasp_point(self, oid: str) -> np.ndarray:
        """Nominal grasp point: center of the object's top surface."""
        obj = self.state.objects[oid]
        p = obj.pose.t.copy()
        p[2] = obj.top_z()
        return p

    def run_action(self, action: tuple):
        kind = action[0]
        state = self.state
        if kind == "grasp":
            oid = action[1]
            target = self.grasp_point(oid)
            if float(np.linalg.norm(state.ee_pose.t - target)) <= 0.03:
                self.attach(oid)
                state.log("grasp", oid=oid, ok=True)
            else:
                state.log("grasp", oid=oid, ok=False)
        elif kind == "push":
            for oid in action[1]:
                obj = state.objects[oid]
                if float(np.linalg.norm(state.ee_pose.t[:2] - obj.pose.t[:2])) <= 0.08:
                    self.attach(oid)
            state.log("push", oids=list(action[1]))
        elif kind == "release":
            released = list(state.held)
            self.detach_all()
            state.log("release", oids=released)
        elif kind == "orient_held":
            # re-seat every held object upright under the EE (models an
            # in-gripper regrasp/reorientation); also the re-level recovery
            for oid in state.held:
                obj = state.objects[oid]
                if obj.shape.kind == "box":
                    hang = float(obj.shape.extents[2]) / 2.0
                else:
                    hang = obj.shape.height / 2.0
                inv = state.ee_pose.inverse()
                obj.attach_offset = Pose(inv.q, inv.apply(state.ee_pose.t - np.array([0, 0, hang])))
            self.refresh_attached()
            state.log("orient_held", oids=list(state.held))
        elif kind == "mark":
            state.log("mark", label=action[1])
        else:
            raise ValueError(f"unknown action {action!r}")

    # -- the tick

    def step(self, control: str = CONTINUE):
        """Advance one tick.

        CONTINUE runs the policy; HALT_AND_REPLAN/DONE freeze policy motion
        but time and pending disturbances continue either way.
        """
        self.state.tick += 1
        if control == CONTINUE and self.policy is not None:
            self.policy.advance(self)
        if self.injector is not None:
            self.injector.apply(self)
        self.refresh_attached()
        return self.state
