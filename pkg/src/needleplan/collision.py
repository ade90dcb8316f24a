"""Collision scene (skin mesh, gantry plane, table box, arm capsules) and the
per-entry-point reachability verdict."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from . import geometry, kinematics, planner
from .geometry import RigidTransform
from .kinematics import ArmModel
from .mesh import SurfaceMesh, load_ply
from .planner import Classification, HeatMap

NEEDLE_LENGTH_MM = 190.0
NEEDLE_RADIUS_MM = 1.2
LINK_RADIUS_MM = 60.0          # capsule stand-in for CAD links
SAFETY_INFLATION_MM = 10.0     # extra clearance to compensate the capsule model


class ReachabilityReason(Enum):
    IK_FAILURE = "IKFailure"
    LINK_COLLISION = "LinkCollision"
    NEEDLE_SIDE_COLLISION = "NeedleSideCollision"
    JOINT_LIMIT = "JointLimit"


@dataclass(frozen=True)
class ReachabilityResult:
    reachable: bool
    failing_waypoint: int | None = None
    reason: ReachabilityReason | None = None
    configs: tuple = ()

    def reason_name(self):
        return self.reason.value if self.reason else None


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(3))
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")


# ---------------------------------------------------------------- primitives

def point_segment_distance(p, a, b):
    ab = b - a
    denom = float(np.dot(ab, ab))
    t = 0.0 if denom < 1e-300 else float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def segment_segment_distance(p1, q1, p2, q2):
    """Closest distance between segments [p1,q1] and [p2,q2] (Ericson)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(np.dot(d1, d1))
    e = float(np.dot(d2, d2))
    f = float(np.dot(d2, r))
    if a < 1e-300 and e < 1e-300:
        return float(np.linalg.norm(r))
    if a < 1e-300:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = float(np.dot(d1, r))
        if e < 1e-300:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(np.dot(d1, d2))
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-300 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm((p1 + s * d1) - (p2 + t * d2)))


def point_triangle_distance(p, a, b, c):
    """Distance from a point to a triangle (closest-point region walk)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(np.dot(ab, ap))
    d2 = float(np.dot(ac, ap))
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3 = float(np.dot(ab, bp))
    d4 = float(np.dot(ac, bp))
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + v * ab)))
    cp = p - c
    d5 = float(np.dot(ab, cp))
    d6 = float(np.dot(ac, cp))
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + w * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + w * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + ab * v + ac * w)))


def segment_triangle_distance(p, q, a, b, c):
    """Closest distance between a segment and a triangle; 0 if they cross."""
    n = np.cross(b - a, c - a)
    nn = float(np.dot(n, n))
    if nn > 1e-300:
        sp = float(np.dot(n, p - a))
        sq = float(np.dot(n, q - a))
        if sp * sq <= 0 and (sp != 0 or sq != 0):
            t = sp / (sp - sq)
            x = p + t * (q - p)
            # inside test via barycentric signs
            if _point_in_triangle(x, a, b, c, n):
                return 0.0
    best = min(point_triangle_distance(p, a, b, c), point_triangle_distance(q, a, b, c))
    for e0, e1 in ((a, b), (b, c), (c, a)):
        best = min(best, segment_segment_distance(p, q, e0, e1))
    return best


def _point_in_triangle(x, a, b, c, n):
    if np.dot(np.cross(b - a, x - a), n) < 0:
        return False
    if np.dot(np.cross(c - b, x - b), n) < 0:
        return False
    if np.dot(np.cross(a - c, x - c), n) < 0:
        return False
    return True


def segment_plane_distance(p, q, plane_point, plane_normal):
    """Distance from the segment to the infinite plane; 0 when it crosses."""
    n = geometry.unit(plane_normal)
    s0 = float(np.dot(p - plane_point, n))
    s1 = float(np.dot(q - plane_point, n))
    if s0 * s1 <= 0:
        return 0.0
    return min(abs(s0), abs(s1))


def point_box_distance(p, lo, hi):
    d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return float(np.linalg.norm(d))


def segment_box_distance(p, q, lo, hi):
    """Distance segment<->AABB; convex in the segment parameter, so ternary
    search converges to the global minimum."""
    t0, t1 = 0.0, 1.0
    d = q - p
    for _ in range(100):
        m1 = t0 + (t1 - t0) / 3.0
        m2 = t1 - (t1 - t0) / 3.0
        if point_box_distance(p + m1 * d, lo, hi) <= point_box_distance(p + m2 * d, lo, hi):
            t1 = m2
        else:
            t0 = m1
    return point_box_distance(p + 0.5 * (t0 + t1) * d, lo, hi)


def capsule_triangle_intersect(capsule: Capsule, tri):
    a, b, c = (np.asarray(x, dtype=float) for x in tri)
    return segment_triangle_distance(capsule.p0, capsule.p1, a, b, c) < capsule.radius


def capsule_plane_intersect(capsule: Capsule, plane_point, plane_normal):
    """The gantry plane is an infinite thin obstacle: touching or crossing
    it within the capsule radius collides."""
    return segment_plane_distance(capsule.p0, capsule.p1,
                                  np.asarray(plane_point, dtype=float),
                                  plane_normal) < capsule.radius


def capsule_box_intersect(capsule: Capsule, lo, hi):
    return segment_box_distance(capsule.p0, capsule.p1,
                                np.asarray(lo, dtype=float),
                                np.asarray(hi, dtype=float)) < capsule.radius


# ------------------------------------------------------------------- meshes

class MeshAccel:
    """Triangle soup with a centroid KD-tree for capsule distance queries."""

    def __init__(self, mesh: SurfaceMesh):
        self.tri = mesh.vertices[mesh.triangles]          # (M, 3, 3)
        self.centroids = self.tri.mean(axis=1)
        diffs = self.tri - self.centroids[:, None, :]
        self.max_radius = float(np.linalg.norm(diffs, axis=2).max()) if len(self.tri) else 0.0
        self.tree = cKDTree(self.centroids) if len(self.tri) else None

    def capsule_hits(self, capsule: Capsule):
        """True iff the capsule intersects any triangle."""
        if self.tree is None:
            return False
        seg = capsule.p1 - capsule.p0
        length = float(np.linalg.norm(seg))
        step = max(capsule.radius, 5.0)
        n = max(int(np.ceil(length / step)), 1)
        ts = np.linspace(0.0, 1.0, n + 1)
        samples = capsule.p0 + ts[:, None] * seg
        query_r = capsule.radius + self.max_radius + (length / n) / 2.0 + 1e-6
        cand = set()
        for lists in self.tree.query_ball_point(samples, query_r):
            cand.update(lists)
        for i in sorted(cand):
            a, b, c = self.tri[i]
            if segment_triangle_distance(capsule.p0, capsule.p1, a, b, c) < capsule.radius:
                return True
        return False


# -------------------------------------------------------------------- scene

@dataclass
class CollisionScene:
    """Obstacles in CT-world coordinates plus the arm base placement."""

    body: SurfaceMesh | None = None
    gantry: tuple | None = None            # (point, normal); solid behind the normal
    table: tuple | None = None             # (lo, hi) axis-aligned box, mm
    base: RigidTransform = field(default_factory=RigidTransform)  # ct_from_base
    link_radius_mm: float = LINK_RADIUS_MM + SAFETY_INFLATION_MM
    needle_length_mm: float = NEEDLE_LENGTH_MM
    needle_radius_mm: float = NEEDLE_RADIUS_MM
    approach_offset_mm: float = kinematics.DEFAULT_APPROACH_OFFSET_MM
    _accel: MeshAccel | None = None

    def accel(self):
        if self._accel is None and self.body is not None:
            self._accel = MeshAccel(self.body)
        return self._accel


def auto_table(mesh: SurfaceMesh):
    """2000 x 500 x 200 mm box sitting right below the body's bounding box."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    cx, cy = (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0
    top = lo[2]
    return (np.array([cx - 1000.0, cy - 250.0, top - 200.0]),
            np.array([cx + 1000.0, cy + 250.0, top]))


def load_scene(path, session_mesh: SurfaceMesh | None = None):
    """Scene file: body PLY (or "session"), gantry plane, table box, arm file,
    and the base placement transform (inverse of base->CT)."""
    with open(path) as f:
        doc = json.load(f)
    body_ref = doc.get("body_ply", "session")
    if body_ref == "session":
        body = session_mesh
    else:
        body, _ = load_ply(body_ref)
    gantry = None
    if "gantry" in doc:
        gantry = (np.asarray(doc["gantry"]["point"], dtype=float),
                  geometry.unit(doc["gantry"]["normal"]))
    table = None
    if "table" in doc:
        if doc["table"] == "auto":
            if body is None:
                raise ValueError("table: auto needs a body mesh")
            table = auto_table(body)
        else:
            table = (np.asarray(doc["table"]["min"], dtype=float),
                     np.asarray(doc["table"]["max"], dtype=float))
    base = RigidTransform()
    if "base_matrix" in doc:
        base = geometry.from_matrix(np.asarray(doc["base_matrix"], dtype=float).reshape(4, 4))
    arm = kinematics.load_arm(doc["arm"]) if "arm" in doc else kinematics.reference_arm()
    scene = CollisionScene(
        body=body,
        gantry=gantry,
        table=table,
        base=base,
        link_radius_mm=float(doc.get("link_radius_mm", LINK_RADIUS_MM + SAFETY_INFLATION_MM)),
        approach_offset_mm=float(doc.get("approach_offset_mm",
                                         kinematics.DEFAULT_APPROACH_OFFSET_MM)),
    )
    return scene, arm


def arm_capsules(scene: CollisionScene, arm: ArmModel, q):
    """(link capsules, needle capsule) posed in CT-world coordinates."""
    frames = kinematics.fk_frames(arm, q)
    world = [geometry.compose(scene.base, f) for f in frames]
    origins = [f.translation for f in world]
    links = []
    for i in range(1, 8):
        links.append(Capsule(origins[i - 1], origins[i], scene.link_radius_mm))
    tip = world[-1].translation
    needle_axis = world[-1].rotation[:, 2]
    needle_base = tip - scene.needle_length_mm * needle_axis
    links.append(Capsule(origins[7], needle_base, scene.link_radius_mm))
    needle = Capsule(needle_base, tip, scene.needle_radius_mm)
    return links, needle


def _capsule_hits_scene(scene: CollisionScene, capsule: Capsule, skip_body=False):
    if not skip_body and scene.body is not None and scene.accel().capsule_hits(capsule):
        return True
    if scene.gantry is not None and capsule_plane_intersect(capsule, *scene.gantry):
        return True
    if scene.table is not None and capsule_box_intersect(capsule, *scene.table):
        return True
    return False


def config_collision_reason(scene: CollisionScene, arm: ArmModel, q,
                            allow_needle_body_contact=False):
    """None when clear; otherwise which capsule family collided."""
    links, needle = arm_capsules(scene, arm, q)
    for cap in links:
        if _capsule_hits_scene(scene, cap):
            return ReachabilityReason.LINK_COLLISION
    if _capsule_hits_scene(scene, needle, skip_body=allow_needle_body_contact):
        return ReachabilityReason.NEEDLE_SIDE_COLLISION
    return None


def config_in_collision(scene: CollisionScene, arm: ArmModel, q,
                        allow_needle_body_contact=False):
    return config_collision_reason(scene, arm, q, allow_needle_body_contact) is not None


def entry_waypoint_index(approach_offset_mm, step_mm=kinematics.WAYPOINT_STEP_MM):
    if approach_offset_mm <= 0:
        return 0
    return max(int(np.ceil(approach_offset_mm / step_mm)), 1)


def insertion_feasible(scene: CollisionScene, arm: ArmModel, entry, target,
                       seed=None) -> ReachabilityResult:
    """Simulate the approach-entry-target insertion; first failure wins."""
    waypoints = kinematics.insertion_waypoints(entry, target, scene.approach_offset_mm)
    entry_idx = entry_waypoint_index(scene.approach_offset_mm)
    base_from_ct = geometry.inverse(scene.base)
    q = arm.home() if seed is None else np.asarray(seed, dtype=float).reshape(7)
    configs = []
    for k, pose_ct in enumerate(waypoints):
        goal = geometry.compose(base_from_ct, pose_ct)
        try:
            if k == 0:
                # the approach pose may pick any posture; later waypoints must
                # track continuously from the previous solution
                q = kinematics.ik_dls_restarts(arm, goal, q)
            else:
                q = kinematics.ik_dls(arm, goal, q)
        except (kinematics.NoConvergence, kinematics.UnreachableGoal):
            return ReachabilityResult(False, k, ReachabilityReason.IK_FAILURE)
        if np.any(q < arm.limits[:, 0] - 1e-9) or np.any(q > arm.limits[:, 1] + 1e-9):
            return ReachabilityResult(False, k, ReachabilityReason.JOINT_LIMIT)
        reason = config_collision_reason(scene, arm, q, allow_needle_body_contact=k >= entry_idx)
        if reason is not None:
            return ReachabilityResult(False, k, reason)
        configs.append(q.copy())
    return ReachabilityResult(True, None, None, tuple(configs))


# --------------------------------------------------------- grid reachability

def cell_key(position, hm: HeatMap, grid_mm):
    """Grid cell of a world point, axis-aligned with the CT lattice."""
    lat = (np.asarray(position, dtype=float) - hm.lattice_origin) @ hm.lattice_direction
    return tuple(np.floor(lat / grid_mm).astype(int))


def feasible_cells(hm: HeatMap, grid_mm):
    """Map cell -> (representative vertex, member vertices) over Feasible
    vertices; the representative is the vertex closest to the cell center."""
    feas = np.flatnonzero(hm.classification == Classification.FEASIBLE)
    lat = (hm.mesh.vertices - hm.lattice_origin) @ hm.lattice_direction
    cells = {}
    for i in feas:
        key = tuple(np.floor(lat[i] / grid_mm).astype(int))
        cells.setdefault(key, []).append(int(i))
    out = {}
    for key, members in cells.items():
        center = (np.array(key, dtype=float) + 0.5) * grid_mm
        d = np.linalg.norm(lat[members] - center, axis=1)
        rep = members[int(np.argmin(d))]
        out[key] = (rep, members)
    return out


def evaluate_cells(scene: CollisionScene, arm: ArmModel, hm: HeatMap, cells,
                   keys=None, cache=None, workers=1):
    """Exact insertion check on each cell representative; results land in
    (and reuse) `cache`, keyed by cell, evaluated deterministically."""
    cache = {} if cache is None else cache
    keys = sorted(cells.keys()) if keys is None else sorted(keys)
    todo = [k for k in keys if k not in cache]

    def check(key):
        rep, _ = cells[key]
        return key, insertion_feasible(scene, arm, hm.mesh.vertices[rep], hm.target)

    if workers <= 1 or len(todo) <= 1:
        for k in todo:
            cache[k] = check(k)[1]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for k, res in pool.map(check, todo):
                cache[k] = res
    return cache


def apply_cell_verdicts(hm: HeatMap, cells, results, only_vertices=None) -> HeatMap:
    """Copy of the heat map with failed cells' Feasible vertices demoted to
    Unreachable (optionally restricted to a vertex subset)."""
    cls = hm.classification.copy()
    costs = hm.cost.copy()
    subset = None if only_vertices is None else set(int(v) for v in only_vertices)
    for key, res in results.items():
        if res.reachable or key not in cells:
            continue
        _, members = cells[key]
        hit = members if subset is None else [m for m in members if m in subset]
        cls[hit] = Classification.UNREACHABLE
        costs[hit] = np.nan
    return replace(hm, classification=cls, cost=costs)


def reverify_optimum(scene: CollisionScene, arm: ArmModel, hm: HeatMap, exact=None):
    """Re-selection loop: the chosen optimum must pass its own exact check;
    failures demote just that vertex and selection repeats. `exact` caches
    per-vertex results (e.g. from cell representatives)."""
    exact = {} if exact is None else exact
    while True:
        i = planner._argmin_feasible(hm)
        if i is None:
            hm.optimal_index = None
            return hm
        res = exact.get(i)
        if res is None:
            res = insertion_feasible(scene, arm, hm.mesh.vertices[i], hm.target)
            exact[i] = res
        if res.reachable:
            hm.optimal_index = int(i)
            return hm
        hm.classification[i] = Classification.UNREACHABLE
        hm.cost[i] = np.nan


def grid_reachability(scene: CollisionScene, arm: ArmModel, hm: HeatMap,
                      params=None, workers=1) -> HeatMap:
    """One exact insertion check per grid cell, propagated to the cell's
    Feasible vertices; the final optimum is re-verified exactly and demoted
    if its own check fails."""
    params = params or hm.params
    cells = feasible_cells(hm, params.grid_mm)
    results = evaluate_cells(scene, arm, hm, cells, workers=workers)
    out = apply_cell_verdicts(hm, cells, results)
    exact = {cells[k][0]: res for k, res in results.items() if k in cells}
    return reverify_optimum(scene, arm, out, exact)
