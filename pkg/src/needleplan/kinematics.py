"""Simulated 7-DOF serial arm: forward kinematics, Jacobian, DLS inverse kinematics.

Standard DH convention: joint i contributes
RotZ(theta_i + offset_i) TransZ(d_i) TransX(a_i) RotX(alpha_i).
The needle axis is the tool frame z-axis.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import RigidTransform

DLS_DAMPING = 0.05
DLS_STEP_CLAMP_RAD = 0.2
WAYPOINT_STEP_MM = 5.0
DEFAULT_APPROACH_OFFSET_MM = 50.0


class NoConvergence(RuntimeError):
    pass


class UnreachableGoal(ValueError):
    pass


class DegeneratePath(ValueError):
    pass


@dataclass(frozen=True)
class ArmModel:
    """7 revolute joints (standard DH) plus a fixed flange->needle-tip link."""

    a: np.ndarray                  # (7,) mm
    alpha: np.ndarray              # (7,) rad
    d: np.ndarray                  # (7,) mm
    theta_offset: np.ndarray       # (7,) rad
    limits: np.ndarray             # (7, 2) rad, min < max
    tool: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        for name in ("a", "alpha", "d", "theta_offset"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(7))
        lim = np.array(self.limits, dtype=float).reshape(7, 2)
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise ValueError("joint limits need min < max")
        object.__setattr__(self, "limits", lim)

    def reach_bound_mm(self):
        return float(np.abs(self.d).sum() + np.abs(self.a).sum()
                     + np.linalg.norm(self.tool.translation))

    def clip(self, q):
        return np.clip(q, self.limits[:, 0], self.limits[:, 1])

    def home(self):
        return self.clip(np.zeros(7))


def reference_arm() -> ArmModel:
    """Generic lightweight 7-DOF arm with LBR-like proportions (not a clone)."""
    return ArmModel(
        a=np.zeros(7),
        alpha=np.deg2rad([-90.0, 90.0, 90.0, -90.0, -90.0, 90.0, 0.0]),
        d=np.array([340.0, 0.0, 400.0, 0.0, 400.0, 0.0, 120.0]),
        theta_offset=np.zeros(7),
        limits=np.deg2rad(np.array(
            [[-170, 170], [-120, 120], [-170, 170], [-120, 120],
             [-170, 170], [-120, 120], [-170, 170]], dtype=float)),
        tool=RigidTransform(np.eye(3), np.array([0.0, 0.0, 200.0])),
    )


def save_arm(arm: ArmModel, path):
    doc = {
        "joints": [
            {
                "a": float(arm.a[i]),
                "alpha_deg": float(np.rad2deg(arm.alpha[i])),
                "d": float(arm.d[i]),
                "theta_offset_deg": float(np.rad2deg(arm.theta_offset[i])),
                "limits_deg": [float(np.rad2deg(arm.limits[i, 0])),
                               float(np.rad2deg(arm.limits[i, 1]))],
            }
            for i in range(7)
        ],
        "tool_matrix": [float(x) for x in arm.tool.matrix().ravel()],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_arm(path) -> ArmModel:
    with open(path) as f:
        doc = json.load(f)
    joints = doc["joints"]
    if len(joints) != 7:
        raise ValueError("arm file must describe exactly 7 joints")
    return ArmModel(
        a=[j["a"] for j in joints],
        alpha=np.deg2rad([j["alpha_deg"] for j in joints]),
        d=[j["d"] for j in joints],
        theta_offset=np.deg2rad([j.get("theta_offset_deg", 0.0) for j in joints]),
        limits=np.deg2rad([j["limits_deg"] for j in joints]),
        tool=geometry.from_matrix(np.asarray(doc["tool_matrix"], dtype=float).reshape(4, 4)),
    )


def _fk_raw(arm: ArmModel, q):
    """Rotations (9, 3, 3) and origins (9, 3) of base, joints 1..7, tip."""
    rs = np.empty((9, 3, 3))
    ts = np.empty((9, 3))
    rs[0] = np.eye(3)
    ts[0] = 0.0
    r = rs[0]
    t = ts[0]
    for i in range(7):
        th = q[i] + arm.theta_offset[i]
        ct, st = math.cos(th), math.sin(th)
        ca, sa = math.cos(arm.alpha[i]), math.sin(arm.alpha[i])
        step_r = np.array([
            [ct, -st * ca, st * sa],
            [st, ct * ca, -ct * sa],
            [0.0, sa, ca],
        ])
        step_t = np.array([arm.a[i] * ct, arm.a[i] * st, arm.d[i]])
        t = r @ step_t + t
        r = r @ step_r
        rs[i + 1] = r
        ts[i + 1] = t
    rs[8] = r @ arm.tool.rotation
    ts[8] = r @ arm.tool.translation + t
    return rs, ts


def fk_frames(arm: ArmModel, q):
    """Frames [base, after joint 1..7, needle tip]; length 9."""
    q = np.asarray(q, dtype=float).reshape(7)
    rs, ts = _fk_raw(arm, q)
    return [RigidTransform(geometry.orthonormalize(r), t) for r, t in zip(rs, ts)]


def fk(arm: ArmModel, q) -> RigidTransform:
    """Base -> needle-tip transform."""
    q = np.asarray(q, dtype=float).reshape(7)
    rs, ts = _fk_raw(arm, q)
    return RigidTransform(geometry.orthonormalize(rs[8]), ts[8])


def _jacobian_raw(arm: ArmModel, q, rs, ts):
    jac = np.empty((6, 7))
    tip = ts[8]
    for i in range(7):
        z = rs[i][:, 2]
        jac[:3, i] = np.cross(z, tip - ts[i])
        jac[3:, i] = z
    return jac


def jacobian(arm: ArmModel, q):
    """Geometric Jacobian of the tip frame: rows 0-2 linear (mm), 3-5 angular."""
    q = np.asarray(q, dtype=float).reshape(7)
    rs, ts = _fk_raw(arm, q)
    return _jacobian_raw(arm, q, rs, ts)


def _rotation_log_raw(rotation):
    c = min(max((rotation[0, 0] + rotation[1, 1] + rotation[2, 2] - 1.0) / 2.0, -1.0), 1.0)
    th = math.acos(c)
    w = np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])
    if th < 1e-12:
        return w * 0.5
    if math.pi - th < 1e-6:
        return geometry.rotation_log(rotation)
    return w * (th / (2.0 * math.sin(th)))


# angular errors are scaled into mm-equivalents inside the DLS solve so that
# millimetre and radian rows are comparably weighted
IK_ANGULAR_SCALE_MM = 250.0


def ik_dls(arm: ArmModel, goal: RigidTransform, seed, tol_mm=0.5, tol_deg=0.5,
           max_iters=500, damping=DLS_DAMPING, step_clamp=DLS_STEP_CLAMP_RAD,
           stall_window=None):
    """Damped-least-squares IK with per-iteration joint-limit clamping.

    stall_window, when set, abandons a run early once the combined error has
    not improved for that many iterations (used by the restart ladder; plain
    calls keep the full iteration budget).
    """
    if np.linalg.norm(goal.translation) > arm.reach_bound_mm():
        raise UnreachableGoal("goal position beyond the arm's reach bound")
    q = arm.clip(np.asarray(seed, dtype=float).reshape(7))
    lam2 = damping * damping
    tol_rad = np.deg2rad(tol_deg)
    goal_r = goal.rotation
    goal_t = goal.translation
    eye6 = np.eye(6)
    best_score = np.inf
    best_iter = 0
    for it in range(max_iters + 1):
        rs, ts = _fk_raw(arm, q)
        perr = goal_t - ts[8]
        rerr = _rotation_log_raw(goal_r @ rs[8].T)
        pn2 = perr @ perr
        rn2 = rerr @ rerr
        if pn2 < tol_mm * tol_mm and rn2 < tol_rad * tol_rad:
            return q
        if stall_window is not None:
            score = math.sqrt(pn2) + IK_ANGULAR_SCALE_MM * math.sqrt(rn2)
            if score < best_score - 1e-3:
                best_score = score
                best_iter = it
            elif it - best_iter > stall_window:
                break
        jac = _jacobian_raw(arm, q, rs, ts)
        jac[3:, :] *= IK_ANGULAR_SCALE_MM
        err = np.concatenate([perr, rerr * IK_ANGULAR_SCALE_MM])
        dq = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * eye6, err)
        peak = np.abs(dq).max()
        if peak > step_clamp:
            dq *= step_clamp / peak
        q = arm.clip(q + dq)
    raise NoConvergence(f"IK did not converge within {max_iters} iterations")


def seed_ladder(arm: ArmModel, goal: RigidTransform):
    """Deterministic IK restart seeds: home, then coarse shoulder/elbow bends
    with the base yaw pointed at (and away from) the goal."""
    yaw = math.atan2(goal.translation[1], goal.translation[0])
    seeds = [arm.home()]
    for y in (yaw, yaw + math.pi):
        for q2 in (0.7, -0.7, 1.4):
            for q4 in (1.0, -1.0, 1.8):
                s = np.zeros(7)
                s[0] = y
                s[1] = q2
                s[3] = q4
                seeds.append(arm.clip(s))
    return seeds


def ik_dls_restarts(arm: ArmModel, goal: RigidTransform, seed=None, **kwargs):
    """ik_dls, retrying over the deterministic seed ladder when the first
    seed fails; raises the last failure when nothing converges."""
    seeds = ([np.asarray(seed, dtype=float).reshape(7)] if seed is not None else [])
    seeds += seed_ladder(arm, goal)
    last = None
    for s in seeds:
        try:
            return ik_dls(arm, goal, s, stall_window=60, **kwargs)
        except NoConvergence as e:
            last = e
    raise last


def insertion_orientation(direction):
    """Tip orientation whose z-axis is `direction`, by the minimal rotation
    from world-up; deterministic for the antiparallel case."""
    d = geometry.unit(direction)
    c = d[2]  # dot with ez
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        return geometry.rotation_about_axis([1.0, 0.0, 0.0], 180.0).rotation
    axis = np.cross([0.0, 0.0, 1.0], d)
    return geometry.rotation_about_axis(axis, np.rad2deg(np.arccos(c))).rotation


def insertion_waypoints(entry, target, approach_offset_mm=DEFAULT_APPROACH_OFFSET_MM,
                        step_mm=WAYPOINT_STEP_MM):
    """Tip poses along approach -> entry -> target, spaced at most step_mm apart.

    The approach point sits approach_offset_mm behind the entry along the
    insertion line; entry and target are always exact waypoints.
    """
    entry = np.asarray(entry, dtype=float).reshape(3)
    target = np.asarray(target, dtype=float).reshape(3)
    depth = np.linalg.norm(target - entry)
    if depth < 1e-9:
        raise DegeneratePath("entry and target coincide")
    if approach_offset_mm < 0:
        raise ValueError("approach offset must be >= 0")
    direction = (target - entry) / depth
    rot = insertion_orientation(direction)
    points = []
    if approach_offset_mm > 0:
        approach = entry - approach_offset_mm * direction
        n = max(int(np.ceil(approach_offset_mm / step_mm)), 1)
        for i in range(n):
            points.append(approach + (approach_offset_mm * i / n) * direction)
    n = max(int(np.ceil(depth / step_mm)), 1)
    for i in range(n + 1):
        points.append(entry + (depth * i / n) * direction)
    return [RigidTransform(rot, p) for p in points]
