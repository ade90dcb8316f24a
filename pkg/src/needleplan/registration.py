"""Calibration and registration: rigid point-set fit, steel-ball phantom
matching, QR24 hand-eye calibration, and the base->CT transform chain."""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from . import geometry
from .geometry import RigidTransform

MIN_ROTATION_DIVERSITY_DEG = 5.0


class DegenerateConfiguration(ValueError):
    pass


class TooFewDetections(ValueError):
    pass


class AmbiguousMatch(ValueError):
    pass


class InsufficientDiversity(ValueError):
    pass


class SingularSystem(ValueError):
    pass


def kabsch(source, dest):
    """Least-squares rigid transform mapping source points onto dest points.

    Returns (RigidTransform, rms residual). Rotation from SVD with the usual
    reflection correction; raises on collinear or coincident configurations.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(dest, dtype=float).reshape(-1, 3)
    if len(src) != len(dst) or len(src) < 3:
        raise DegenerateConfiguration("need at least 3 corresponding point pairs")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfiguration("source points are collinear or coincident")
    h = a.T @ b
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cd - r @ cs
    fit = RigidTransform(r, t)
    res = geometry.transform_point(fit, src) - dst
    rms = float(np.sqrt((res**2).sum(axis=1).mean()))
    return fit, rms


@dataclass(frozen=True)
class PhantomModel:
    """24 steel-ball centers in the phantom (SB) frame with their radius class
    and the CAD-derived marker transform (R frame -> SB frame content)."""

    centers: np.ndarray          # (24, 3) mm
    radius_class: np.ndarray     # (24,) in {2.0, 5.0}
    r_from_sb: RigidTransform

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "radius_class",
                           np.asarray(self.radius_class, dtype=float).reshape(-1))
        if len(self.centers) != 24 or len(self.radius_class) != 24:
            raise ValueError("phantom model must list exactly 24 balls")


def default_phantom_model() -> PhantomModel:
    """Shipped asymmetric layout: a jittered 6x4 grid, 12 balls per radius class."""
    rng = np.random.default_rng(7)
    gx, gy = np.meshgrid(np.arange(6) * 20.0, np.arange(4) * 20.0, indexing="ij")
    centers = np.column_stack([
        gx.ravel() + rng.uniform(-4.0, 4.0, 24),
        gy.ravel() + rng.uniform(-4.0, 4.0, 24),
        rng.uniform(-3.0, 3.0, 24),
    ])
    radius_class = np.array([5.0 if i % 2 == 0 else 2.0 for i in range(24)])
    r_from_sb = geometry.compose(
        geometry.translation([10.0, -15.0, 40.0]),
        geometry.rotation_about_axis([0.0, 0.0, 1.0], 30.0),
    )
    return PhantomModel(centers, radius_class, r_from_sb)


def save_phantom_model(model: PhantomModel, path):
    doc = {
        "balls": [[float(c[0]), float(c[1]), float(c[2]), float(r)]
                  for c, r in zip(model.centers, model.radius_class)],
        "r_from_sb_matrix": [float(x) for x in model.r_from_sb.matrix().ravel()],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_phantom_model(path) -> PhantomModel:
    with open(path) as f:
        doc = json.load(f)
    balls = np.asarray(doc["balls"], dtype=float).reshape(-1, 4)
    r_from_sb = geometry.from_matrix(
        np.asarray(doc["r_from_sb_matrix"], dtype=float).reshape(4, 4))
    return PhantomModel(balls[:, :3], balls[:, 3], r_from_sb)


def _pick_spread_triplet(points):
    """Deterministic, well-spread, non-collinear triplet of row indices."""
    pts = np.asarray(points, dtype=float)
    center = pts.mean(axis=0)
    i0 = int(np.argmax(np.linalg.norm(pts - center, axis=1)))
    i1 = int(np.argmax(np.linalg.norm(pts - pts[i0], axis=1)))
    best, best_score = None, -1.0
    for i2 in range(len(pts)):
        if i2 in (i0, i1):
            continue
        area = np.linalg.norm(np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0]))
        if area > best_score:
            best, best_score = i2, area
    if best is None or best_score < 1e-6:
        raise DegenerateConfiguration("detections are collinear")
    return i0, i1, best


def match_phantom(centroids, radius_classes, model: PhantomModel,
                  distance_tol_mm=1.0, inlier_tol_mm=1.5):
    """Correspondence by radius class + pairwise-distance signature, then a
    rigid fit. Returns (pairs, ct_from_sb, rms) where pairs holds
    (model_index, detection_index) rows and ct_from_sb maps SB-frame points
    into CT world."""
    det = np.asarray(centroids, dtype=float).reshape(-1, 3)
    det_cls = np.asarray(radius_classes, dtype=float).reshape(-1)
    if len(det) < 4 or len(np.unique(det_cls)) < 2:
        raise TooFewDetections("need at least 4 detections covering both radius classes")

    t0, t1, t2 = _pick_spread_triplet(det)
    tri_det = det[[t0, t1, t2]]
    tri_cls = det_cls[[t0, t1, t2]]
    d01 = np.linalg.norm(tri_det[0] - tri_det[1])
    d02 = np.linalg.norm(tri_det[0] - tri_det[2])
    d12 = np.linalg.norm(tri_det[1] - tri_det[2])

    candidates = []
    n_model = len(model.centers)
    for trio in permutations(range(n_model), 3):
        mc = model.radius_class[list(trio)]
        if not np.allclose(mc, tri_cls):
            continue
        m = model.centers[list(trio)]
        if abs(np.linalg.norm(m[0] - m[1]) - d01) > distance_tol_mm:
            continue
        if abs(np.linalg.norm(m[0] - m[2]) - d02) > distance_tol_mm:
            continue
        if abs(np.linalg.norm(m[1] - m[2]) - d12) > distance_tol_mm:
            continue
        try:
            fit, _ = kabsch(m, tri_det)
        except DegenerateConfiguration:
            continue
        pairs = _consensus_pairs(det, det_cls, model, fit, inlier_tol_mm)
        if len(pairs) >= 4:
            refit, rms = kabsch(model.centers[pairs[:, 0]], det[pairs[:, 1]])
            candidates.append((len(pairs), rms, pairs, refit))

    if not candidates:
        raise AmbiguousMatch("no model triplet is consistent with the detections")
    candidates.sort(key=lambda c: (-c[0], c[1]))
    best = candidates[0]
    for other in candidates[1:]:
        if other[0] < best[0]:
            break
        same = (np.allclose(other[3].matrix(), best[3].matrix(), atol=1e-3)
                and np.array_equal(other[2], best[2]))
        if not same and other[1] < best[1] + 1e-9:
            raise AmbiguousMatch("two distinct correspondences explain the detections")
    return best[2], best[3], best[1]


def _consensus_pairs(det, det_cls, model: PhantomModel, fit: RigidTransform, tol):
    """Greedy unique model->detection assignment under a candidate transform."""
    mapped = geometry.transform_point(fit, model.centers)
    dist = np.linalg.norm(mapped[:, None, :] - det[None, :, :], axis=2)
    dist[model.radius_class[:, None] != det_cls[None, :]] = np.inf
    pairs = []
    used_m, used_d = set(), set()
    order = np.argsort(dist.ravel(), kind="stable")
    for flat in order:
        m, d = divmod(int(flat), len(det))
        if dist[m, d] > tol:
            break
        if m in used_m or d in used_d:
            continue
        used_m.add(m)
        used_d.add(d)
        pairs.append((m, d))
    return np.array(sorted(pairs), dtype=int).reshape(-1, 2)


@dataclass(frozen=True)
class CalibrationResult:
    x: RigidTransform                   # end-effector -> marker content
    z: RigidTransform                   # base -> camera content
    residual_translation_mm: float
    residual_rotation_deg: float
    rotation_projection_deviation: float  # Frobenius gap before SO(3) projection


def _rotation_diversity_ok(rotations, min_deg=MIN_ROTATION_DIVERSITY_DEG):
    """At least 3 poses that are pairwise more than min_deg apart."""
    picked = []
    for r in rotations:
        if all(geometry.rotation_angle_deg(r @ p.T) >= min_deg for p in picked):
            picked.append(r)
        if len(picked) >= 3:
            return True
    return False


def hand_eye_qr24(robot_poses, camera_poses) -> CalibrationResult:
    """Joint linear least-squares for X = ee->marker and Z = base->camera from
    paired robot poses (base->ee) and tracked poses (marker->camera).

    The loop robot_i · X = Z · inv(camera_i) is stacked into one 12n x 24
    system over both 3x4 blocks (the QR24 formulation); rotation blocks of the
    minimizer are then projected onto SO(3) and residuals are computed by
    re-predicting the tracked poses.
    """
    n = len(robot_poses)
    if n != len(camera_poses):
        raise ValueError("need one camera pose per robot pose")
    if n < 3 or not _rotation_diversity_ok([p.rotation for p in robot_poses]):
        raise InsufficientDiversity(
            "need at least 3 robot poses with pairwise rotations >= 5 degrees")

    rows = np.zeros((12 * n, 24))
    rhs = np.zeros(12 * n)
    eye = np.eye(3)
    for i, (a, b) in enumerate(zip(robot_poses, camera_poses)):
        c = geometry.inverse(b)  # camera -> marker content
        ra, ta = a.rotation, a.translation
        rc, tc = c.rotation, c.translation
        r0 = 12 * i
        # Ra Rx - Rz Rc = 0, column-major vec
        rows[r0 : r0 + 9, 0:9] = np.kron(eye, ra)
        rows[r0 : r0 + 9, 12:21] = -np.kron(rc.T, eye)
        # Ra tx - (tc^T kron I) vec(Rz) - tz = -ta
        rows[r0 + 9 : r0 + 12, 9:12] = ra
        rows[r0 + 9 : r0 + 12, 12:21] = -np.kron(tc.reshape(1, 3), eye)
        rows[r0 + 9 : r0 + 12, 21:24] = -eye
        rhs[r0 + 9 : r0 + 12] = -ta

    sol, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=None)
    if rank < 24:
        raise SingularSystem(f"calibration system rank {rank} < 24")

    rx_raw = sol[0:9].reshape(3, 3, order="F")
    rz_raw = sol[12:21].reshape(3, 3, order="F")
    rx = geometry.orthonormalize(rx_raw)
    rz = geometry.orthonormalize(rz_raw)
    deviation = max(np.linalg.norm(rx_raw - rx), np.linalg.norm(rz_raw - rz))
    x = RigidTransform(rx, sol[9:12])
    z = RigidTransform(rz, sol[21:24])

    terr = []
    rerr = []
    for a, b in zip(robot_poses, camera_poses):
        pred = geometry.compose(geometry.inverse(x), geometry.compose(geometry.inverse(a), z))
        terr.append(np.linalg.norm(pred.translation - b.translation))
        rerr.append(geometry.rotation_angle_deg(pred.rotation @ b.rotation.T))
    return CalibrationResult(x, z, float(np.mean(terr)), float(np.mean(rerr)),
                             float(deviation))


def compose_ct_registration(b_from_cam: RigidTransform, cam_from_r: RigidTransform,
                            r_from_sb: RigidTransform, sb_from_ct: RigidTransform):
    """Chain base->camera->markers->steel balls->CT into base->CT."""
    return geometry.compose(
        b_from_cam, geometry.compose(cam_from_r, geometry.compose(r_from_sb, sb_from_ct)))


def save_calibration_samples(samples, path):
    """samples: iterable of (robot_pose, camera_pose) RigidTransform pairs."""
    doc = {"samples": [
        {"robot_matrix": [float(x) for x in a.matrix().ravel()],
         "camera_matrix": [float(x) for x in b.matrix().ravel()]}
        for a, b in samples
    ]}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_calibration_samples(path):
    with open(path) as f:
        doc = json.load(f)
    out = []
    for s in doc["samples"]:
        a = geometry.from_matrix(np.asarray(s["robot_matrix"], dtype=float).reshape(4, 4))
        b = geometry.from_matrix(np.asarray(s["camera_matrix"], dtype=float).reshape(4, 4))
        out.append((a, b))
    return out
