"""Rigid-body math shared by all modules: points, directions, rigid transforms."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9
FILE_RIGID_TOL = 1e-6


class NonRigidMatrixError(ValueError):
    """Matrix is not a rigid transform (orthonormal rotation, det +1)."""


def unit(v):
    """Normalize a vector; raises on near-zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero vector")
    return v / n


def orthonormalize(rotation):
    """Nearest orthonormal matrix with det +1 (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rotation_drift(rotation):
    """Max-abs deviation of R^T R from identity plus |det - 1|."""
    rotation = np.asarray(rotation, dtype=float)
    d = np.abs(rotation.T @ rotation - np.eye(3)).max()
    return max(d, abs(np.linalg.det(rotation) - 1.0))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3 orthonormal, det +1) plus translation in mm."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if rotation_drift(r) > FILE_RIGID_TOL:
            raise NonRigidMatrixError("rotation is not orthonormal with det +1")
        if rotation_drift(r) > ORTHONORMAL_TOL:
            r = orthonormalize(r)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def matrix(self):
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def identity():
    return RigidTransform()


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a after b: (a∘b)(p) = a(b(p))."""
    r = a.rotation @ b.rotation
    if rotation_drift(r) > ORTHONORMAL_TOL:
        r = orthonormalize(r)
    t = a.rotation @ b.translation + a.translation
    return RigidTransform(r, t)


def inverse(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -t.rotation.T @ t.translation)


def transform_point(t: RigidTransform, p):
    """Apply R p + trans to one point (3,) or many (N, 3)."""
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T + t.translation


def transform_direction(t: RigidTransform, d):
    """Rotate a direction vector (no translation)."""
    return np.asarray(d, dtype=float) @ t.rotation.T


def from_matrix(m, tol=FILE_RIGID_TOL) -> RigidTransform:
    """Build from a 4x4 homogeneous matrix; rejects non-rigid input."""
    m = np.asarray(m, dtype=float).reshape(4, 4)
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > tol:
        raise NonRigidMatrixError("bottom row must be [0 0 0 1]")
    r = m[:3, :3]
    if rotation_drift(r) > tol:
        raise NonRigidMatrixError("rotation block is not orthonormal with det +1")
    return RigidTransform(orthonormalize(r), m[:3, 3])


def rotation_about_axis(axis, angle_deg) -> RigidTransform:
    """Rotation by angle_deg about a (not necessarily unit) axis through the origin."""
    k = unit(axis)
    th = np.deg2rad(angle_deg)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    r = np.eye(3) + np.sin(th) * kx + (1 - np.cos(th)) * (kx @ kx)
    return RigidTransform(r, np.zeros(3))


def translation(t) -> RigidTransform:
    return RigidTransform(np.eye(3), np.asarray(t, dtype=float))


def rotation_angle_deg(rotation):
    """Rotation angle in degrees of an orthonormal matrix (atan2 form keeps
    precision near 0 and pi, unlike arccos of the trace)."""
    c = (np.trace(rotation) - 1.0) / 2.0
    w = np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])
    s = np.linalg.norm(w) / 2.0
    return np.rad2deg(np.arctan2(s, c))


def rotation_log(rotation):
    """Axis-angle vector (radians) of an orthonormal matrix."""
    c = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(c)
    if th < 1e-12:
        return np.zeros(3)
    w = np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])
    if np.pi - th < 1e-6:
        # near pi the skew part vanishes; recover axis from R + I
        m = (rotation + np.eye(3)) / 2.0
        axis = unit(np.sqrt(np.clip(np.diag(m), 0.0, None)))
        # fix signs from off-diagonals
        if m[0, 1] < 0:
            axis[1] = -axis[1]
        if m[0, 2] < 0:
            axis[2] = -axis[2]
        return axis * th
    return w * (th / (2.0 * np.sin(th)))


def save_transform(t: RigidTransform, path):
    """Write as a JSON document with key "matrix": 16 numbers, row-major 4x4, mm."""
    with open(path, "w") as f:
        json.dump({"matrix": [float(x) for x in t.matrix().ravel()]}, f, indent=1)
        f.write("\n")


def load_transform(path) -> RigidTransform:
    """Read the "matrix" document; rejects non-rigid matrices (tolerance 1e-6)."""
    with open(path) as f:
        doc = json.load(f)
    if "matrix" not in doc:
        raise NonRigidMatrixError("transform file lacks a 'matrix' key")
    m = np.asarray(doc["matrix"], dtype=float)
    if m.size != 16:
        raise NonRigidMatrixError("'matrix' must hold 16 numbers")
    return from_matrix(m.reshape(4, 4), tol=FILE_RIGID_TOL)
