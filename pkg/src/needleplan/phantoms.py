"""Synthetic CT phantoms: sphere/torso bodies, bone shells, steel-ball plates.

All generators are deterministic and return standard Volumes (identity
direction, air background), sized for desk-scale planning tests.
"""
from __future__ import annotations

import numpy as np

from . import geometry
from .geometry import RigidTransform
from .registration import PhantomModel
from .volume import AIR_HU, Volume

BODY_HU = 40
BONE_HU = 1500
BALL_HU = 3000


def _world_coords(size, spacing, origin):
    nx, ny, nz = size
    xs = origin[0] + np.arange(nx) * spacing[0]
    ys = origin[1] + np.arange(ny) * spacing[1]
    zs = origin[2] + np.arange(nz) * spacing[2]
    return np.meshgrid(xs, ys, zs, indexing="ij", sparse=True)


def _as_triplet(v):
    arr = np.asarray(v, dtype=float).reshape(-1)
    return np.array([arr[0]] * 3) if arr.size == 1 else arr[:3]


def sphere_phantom(size=96, spacing=1.5, radius_mm=60.0, body_hu=BODY_HU,
                   origin=(0.0, 0.0, 0.0), cavity_radius_mm=0.0,
                   cavity_offset_mm=(0.0, 0.0, 0.0), channel_radius_mm=0.0,
                   bone_shell=None):
    """Soft-tissue sphere centered in the lattice.

    bone_shell: optional dict with r_inner_mm, r_outer_mm, and an aperture
    cone (axis + half angle in degrees) left open in the shell.
    Returns (volume, center_world).
    """
    size = tuple(int(x) for x in np.broadcast_to(size, 3))
    spacing = _as_triplet(spacing)
    origin = _as_triplet(origin)
    x, y, z = _world_coords(size, spacing, origin)
    center = origin + (np.array(size) - 1) * spacing / 2.0
    dx, dy, dz = x - center[0], y - center[1], z - center[2]
    r2 = dx * dx + dy * dy + dz * dz
    vox = np.full(size, AIR_HU, dtype=np.int16)
    vox[r2 <= radius_mm**2] = body_hu

    if bone_shell is not None:
        ri = bone_shell["r_inner_mm"]
        ro = bone_shell["r_outer_mm"]
        shell = (r2 >= ri**2) & (r2 <= ro**2)
        axis = geometry.unit(bone_shell.get("aperture_axis", (0.0, 0.0, 1.0)))
        half = float(bone_shell.get("aperture_half_angle_deg", 0.0))
        if half > 0:
            rn = np.sqrt(np.maximum(r2, 1e-12))
            cosang = (dx * axis[0] + dy * axis[1] + dz * axis[2]) / rn
            shell &= cosang < np.cos(np.deg2rad(half))
        vox[shell] = bone_shell.get("hu", BONE_HU)

    if cavity_radius_mm > 0:
        co = center + np.asarray(cavity_offset_mm, dtype=float)
        c2 = (x - co[0]) ** 2 + (y - co[1]) ** 2 + (z - co[2]) ** 2
        cavity = c2 <= cavity_radius_mm**2
        vox[cavity] = AIR_HU
        if channel_radius_mm > 0:
            # straight air channel from the cavity out through +z ("nostril")
            rad2 = (x - co[0]) ** 2 + (y - co[1]) ** 2
            chan = (rad2 <= channel_radius_mm**2) & (z >= co[2])
            vox[chan] = AIR_HU
    return Volume(vox, spacing, origin), center


def torso_phantom(size=128, spacing=(3.0, 3.0, 3.0), semi_axes_mm=(150.0, 100.0, 170.0),
                  body_hu=BODY_HU, origin=(0.0, 0.0, 0.0), bone_shell=None,
                  arm_cylinder=None):
    """Ellipsoidal torso, optional concentric bone shell with one aperture
    cone, optional detached arm cylinder (for air-gap obstruction tests).

    Returns (volume, center_world).
    """
    size = tuple(int(x) for x in np.broadcast_to(size, 3))
    spacing = _as_triplet(spacing)
    origin = _as_triplet(origin)
    x, y, z = _world_coords(size, spacing, origin)
    center = origin + (np.array(size) - 1) * spacing / 2.0
    a, b, c = semi_axes_mm
    dx, dy, dz = x - center[0], y - center[1], z - center[2]
    rho = (dx / a) ** 2 + (dy / b) ** 2 + (dz / c) ** 2
    vox = np.full(size, AIR_HU, dtype=np.int16)
    vox[rho <= 1.0] = body_hu

    if bone_shell is not None:
        fi = bone_shell["inner_fraction"]
        fo = bone_shell["outer_fraction"]
        shell = (rho >= fi**2) & (rho <= fo**2)
        axis = geometry.unit(bone_shell.get("aperture_axis", (0.0, 1.0, 0.0)))
        half = float(bone_shell.get("aperture_half_angle_deg", 0.0))
        if half > 0:
            rn = np.sqrt(dx * dx + dy * dy + dz * dz)
            rn[rn < 1e-12] = 1e-12
            cosang = (dx * axis[0] + dy * axis[1] + dz * axis[2]) / rn
            shell &= cosang < np.cos(np.deg2rad(half))
        vox[shell] = bone_shell.get("hu", BONE_HU)

    if arm_cylinder is not None:
        # cylinder parallel to z, offset from the torso center (an "arm")
        cx = center[0] + arm_cylinder["offset_xy_mm"][0]
        cy = center[1] + arm_cylinder["offset_xy_mm"][1]
        r = arm_cylinder["radius_mm"]
        half_len = arm_cylinder.get("half_length_mm", c)
        cyl = ((x - cx) ** 2 + (y - cy) ** 2 <= r**2) & (np.abs(dz) <= half_len)
        vox[cyl] = body_hu
    return Volume(vox, spacing, origin), center


def ball_plate_phantom(model: PhantomModel, ct_from_sb: RigidTransform,
                       size=96, spacing=1.0, origin=(0.0, 0.0, 0.0),
                       ball_hu=BALL_HU):
    """Steel-ball plate posed in CT world; returns (volume, true ball centers)."""
    size = tuple(int(x) for x in np.broadcast_to(size, 3))
    spacing = _as_triplet(spacing)
    origin = _as_triplet(origin)
    x, y, z = _world_coords(size, spacing, origin)
    vox = np.full(size, AIR_HU, dtype=np.int16)
    centers = geometry.transform_point(ct_from_sb, model.centers)
    for center, rcls in zip(centers, model.radius_class):
        d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
        vox[d2 <= rcls**2] = ball_hu
    return Volume(vox, spacing, origin), centers
