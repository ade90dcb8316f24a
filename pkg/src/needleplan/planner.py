"""Entry-point heat maps: feasibility classes, cost, optimum selection, metrics."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

from . import raycast
from .mesh import SurfaceMesh
from .segmentation import Mask
from .volume import Volume

BIOPSY_CENTER_OFFSET_MM = 10.0  # sample notch center sits 10 mm past the guide tip


class OutOfDomain(ValueError):
    pass


class TargetOutsideBody(ValueError):
    pass


class DegenerateNeedle(ValueError):
    pass


class Classification(IntEnum):
    FEASIBLE = 0
    OUT_OF_RANGE = 1
    OCCLUDED = 2
    MARGIN_OCCLUDED = 3
    AIR_BLOCKED = 4
    UNREACHABLE = 5


# per-vertex scalar written to PLY heat maps; feasible vertices carry their cost
EXPORT_SENTINELS = {
    Classification.OUT_OF_RANGE: 2.0,
    Classification.OCCLUDED: 3.0,
    Classification.MARGIN_OCCLUDED: 3.0,
    Classification.AIR_BLOCKED: 4.0,
    Classification.UNREACHABLE: 5.0,
}


@dataclass(frozen=True)
class PlanParams:
    needle_length_mm: float = 160.0
    margin_mm: float = 5.0
    dense_hu_threshold: float = 200.0
    weight_distance: float = 0.5
    weight_angle: float = 0.5
    grid_mm: float = 30.0

    def __post_init__(self):
        vals = (self.needle_length_mm, self.margin_mm, self.dense_hu_threshold,
                self.weight_distance, self.weight_angle, self.grid_mm)
        if any(v <= 0 for v in (self.needle_length_mm, self.weight_distance,
                                self.weight_angle, self.grid_mm)):
            raise ValueError("needle length, weights and grid must be positive")
        if self.margin_mm < 0:
            raise ValueError("margin must be >= 0")
        if abs(self.weight_distance + self.weight_angle - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    def to_dict(self):
        return {
            "needle_length_mm": self.needle_length_mm,
            "margin_mm": self.margin_mm,
            "dense_hu_threshold": self.dense_hu_threshold,
            "weight_distance": self.weight_distance,
            "weight_angle": self.weight_angle,
            "grid_mm": self.grid_mm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class EntryCandidate:
    vertex: int
    position: np.ndarray
    normal: np.ndarray
    distance_mm: float
    angle_deg: float
    max_hu: int
    classification: Classification
    cost: float | None


@dataclass
class HeatMap:
    """Per-vertex planning annotations for one target on one surface mesh."""

    mesh: SurfaceMesh
    target: np.ndarray
    params: PlanParams
    distance_mm: np.ndarray        # (N,)
    angle_deg: np.ndarray          # (N,)
    max_hu: np.ndarray             # (N,) int32
    classification: np.ndarray     # (N,) int8 of Classification
    cost: np.ndarray               # (N,) float64, nan unless FEASIBLE
    optimal_index: int | None = None
    lattice_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lattice_direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def candidate(self, i) -> EntryCandidate:
        cls = Classification(int(self.classification[i]))
        return EntryCandidate(
            vertex=int(i),
            position=self.mesh.vertices[i],
            normal=self.mesh.normals[i],
            distance_mm=float(self.distance_mm[i]),
            angle_deg=float(self.angle_deg[i]),
            max_hu=int(self.max_hu[i]),
            classification=cls,
            cost=float(self.cost[i]) if cls == Classification.FEASIBLE else None,
        )

    def export_scalars(self):
        lut = np.array([0.0, 2.0, 3.0, 3.0, 4.0, 5.0])  # indexed by Classification
        out = lut[self.classification.astype(int)]
        feas = self.classification == Classification.FEASIBLE
        out[feas] = self.cost[feas]
        return out

    def class_counts(self):
        return {c.name: int((self.classification == c).sum()) for c in Classification}


def cost(d_mm, a_deg, params: PlanParams):
    """q = w_d * (d / l) + w_a * (a / 90); scalar or elementwise on arrays."""
    d = np.asarray(d_mm, dtype=float)
    a = np.asarray(a_deg, dtype=float)
    if np.any(d < 0) or np.any(d > params.needle_length_mm):
        raise OutOfDomain("insertion depth outside [0, needle_length]")
    if np.any(a < 0) or np.any(a > 90.0):
        raise OutOfDomain("insertion angle outside [0, 90] degrees")
    q = params.weight_distance * (d / params.needle_length_mm) + \
        params.weight_angle * (a / 90.0)
    return float(q) if q.ndim == 0 else q


def classify(positions, distance_mm, max_hu, blocked, params: PlanParams):
    """Feasibility class per vertex, in the fixed priority order
    OutOfRange > AirBlocked > Occluded > MarginOccluded > Feasible."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    out = np.full(n, Classification.FEASIBLE, dtype=np.int8)
    occluded = np.asarray(max_hu) >= params.dense_hu_threshold
    out[occluded] = Classification.OCCLUDED
    out[np.asarray(blocked, dtype=bool)] = Classification.AIR_BLOCKED
    out[np.asarray(distance_mm) > params.needle_length_mm] = Classification.OUT_OF_RANGE

    occ_idx = np.flatnonzero(out == Classification.OCCLUDED)
    if len(occ_idx) and params.margin_mm > 0:
        tree = cKDTree(positions[occ_idx])
        feas = np.flatnonzero(out == Classification.FEASIBLE)
        if len(feas):
            near = tree.query_ball_point(positions[feas], params.margin_mm)
            hit = np.array([len(x) > 0 for x in near])
            out[feas[hit]] = Classification.MARGIN_OCCLUDED
    return out


def insertion_angles(positions, normals, target):
    """Angle between the needle direction and the skin normal, in [0, 90] deg."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    delta = np.asarray(target, dtype=float) - positions
    d = np.linalg.norm(delta, axis=1)
    d[d < 1e-12] = 1.0
    dirs = delta / d[:, None]
    dots = np.abs(np.einsum("ij,ij->i", dirs, np.asarray(normals, dtype=float)))
    return np.rad2deg(np.arccos(np.clip(dots, 0.0, 1.0)))


def _target_strictly_inside(body: Mask, target):
    c = np.asarray(body.world_to_continuous_index(target))
    idx = np.round(c).astype(int)
    dims = np.array(body.dims)
    if np.any(idx < 1) or np.any(idx >= dims - 1):
        return False
    hood = body.bits[idx[0] - 1 : idx[0] + 2, idx[1] - 1 : idx[1] + 2, idx[2] - 1 : idx[2] + 2]
    return bool(hood.all())


def build_heatmap(v: Volume, body: Mask, mesh: SurfaceMesh, target, params: PlanParams,
                  workers=1) -> HeatMap:
    """Compose ray stats, angle estimation, classification and cost."""
    target = np.asarray(target, dtype=float).reshape(3)
    if not _target_strictly_inside(body, target):
        raise TargetOutsideBody("target must lie strictly inside the body mask")
    max_hu, blocked, dist = raycast.heat_values(v, body, target, mesh.vertices, workers=workers)
    angles = insertion_angles(mesh.vertices, mesh.normals, target)
    cls = classify(mesh.vertices, dist, max_hu, blocked, params)
    costs = np.full(len(dist), np.nan)
    feas = cls == Classification.FEASIBLE
    if feas.any():
        costs[feas] = cost(dist[feas], angles[feas], params)
    hm = HeatMap(mesh, target, params, dist, angles, max_hu, cls, costs,
                 lattice_origin=v.origin, lattice_direction=v.direction)
    hm.optimal_index = _argmin_feasible(hm)
    return hm


def _argmin_feasible(hm: HeatMap):
    feas = np.flatnonzero(hm.classification == Classification.FEASIBLE)
    if len(feas) == 0:
        return None
    # np.argmin returns the first minimum, so ties resolve to the lowest id
    return int(feas[np.argmin(hm.cost[feas])])


def select_optimal(hm: HeatMap):
    """Feasible candidate with minimal cost (ties: lowest vertex id), or None."""
    i = _argmin_feasible(hm)
    hm.optimal_index = i
    return hm.candidate(i) if i is not None else None


def biopsy_center(tip, direction):
    """Center of the sample notch: 10 mm past the tip along the needle axis."""
    direction = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-6:
        raise ValueError("direction must be a unit vector")
    return np.asarray(tip, dtype=float) + BIOPSY_CENTER_OFFSET_MM * direction


@dataclass(frozen=True)
class PlacementReport:
    deviation_3d_mm: float
    deviation_lateral_mm: float
    biopsy_center: np.ndarray

    def to_dict(self):
        return {
            "deviation_3d_mm": self.deviation_3d_mm,
            "deviation_lateral_mm": self.deviation_lateral_mm,
            "biopsy_center": [float(x) for x in self.biopsy_center],
        }


def placement_report(target, entry, tip) -> PlacementReport:
    """3D deviation target<->biopsy center and lateral deviation to the needle axis."""
    target = np.asarray(target, dtype=float).reshape(3)
    entry = np.asarray(entry, dtype=float).reshape(3)
    tip = np.asarray(tip, dtype=float).reshape(3)
    axis = tip - entry
    length = np.linalg.norm(axis)
    if length < 1e-9:
        raise DegenerateNeedle("entry and tip coincide")
    axis = axis / length
    center = biopsy_center(tip, axis)
    dev3d = float(np.linalg.norm(target - center))
    rel = target - entry
    lateral = float(np.linalg.norm(rel - np.dot(rel, axis) * axis))
    return PlacementReport(dev3d, lateral, center)
