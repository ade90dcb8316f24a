"""Binary mask pipeline: thresholding, components, morphology, surface, ball detection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

from .mesh import SurfaceMesh, taubin_smooth, vertex_normals, signed_volume
from .volume import Volume

SKIN_THRESHOLD_HU = -300       # default skin segmentation threshold
DENSE_THRESHOLD_HU = 200       # default bone / needle-resistant threshold
CLOSING_RADIUS_MM = 5.0        # 1 cm closing kernel, expressed as ball radius

_CONN6 = ndimage.generate_binary_structure(3, 1)


class EmptyMask(ValueError):
    pass


class TooFewComponents(ValueError):
    pass


@dataclass(frozen=True)
class Mask:
    """Boolean voxel grid on the same lattice as its source Volume."""

    bits: np.ndarray              # bool, shape (nx, ny, nz)
    spacing: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))
        object.__setattr__(self, "spacing", np.array(self.spacing, dtype=float).reshape(3))
        object.__setattr__(self, "origin", np.array(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "direction", np.array(self.direction, dtype=float).reshape(3, 3))

    @property
    def dims(self):
        return self.bits.shape

    def count(self):
        return int(self.bits.sum())

    def with_bits(self, bits):
        return Mask(bits, self.spacing, self.origin, self.direction)

    def index_to_world(self, idx):
        idx = np.asarray(idx, dtype=float)
        return (idx * self.spacing) @ self.direction.T + self.origin

    def world_to_continuous_index(self, p):
        p = np.asarray(p, dtype=float)
        return ((p - self.origin) @ self.direction) / self.spacing


def threshold(v: Volume, t_hu) -> Mask:
    """Voxels with HU >= t_hu."""
    return Mask(v.voxels >= t_hu, v.spacing, v.origin, v.direction)


def _linear_index_xfastest(flat_c_index, dims):
    # convert C-order flat index (z fastest) to the x-fastest convention
    nx, ny, nz = dims
    i, rem = np.divmod(flat_c_index, ny * nz)
    j, k = np.divmod(rem, nz)
    return i + nx * (j + ny * k)


def largest_component(m: Mask) -> Mask:
    """Largest 6-connected component; size ties go to the component whose
    smallest x-fastest linear voxel index is lowest."""
    if not m.bits.any():
        raise EmptyMask("mask has no set voxels")
    labels, n = ndimage.label(m.bits, structure=_CONN6)
    if n == 1:
        return m.with_bits(m.bits.copy())
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) == 1:
        keep = candidates[0]
    else:
        firsts = []
        flat = labels.ravel()  # C order
        for lab in candidates:
            pos = np.flatnonzero(flat == lab)
            firsts.append(_linear_index_xfastest(pos, m.dims).min())
        keep = candidates[int(np.argmin(firsts))]
    return m.with_bits(labels == keep)


def ball_offsets(radius_mm, spacing):
    """Voxel offsets of the world-metric ball structuring element."""
    half = np.maximum(np.floor(radius_mm / np.asarray(spacing)).astype(int), 0)
    rng = [np.arange(-h, h + 1) for h in half]
    gx, gy, gz = np.meshgrid(*rng, indexing="ij")
    d2 = (gx * spacing[0]) ** 2 + (gy * spacing[1]) ** 2 + (gz * spacing[2]) ** 2
    keep = d2 <= radius_mm**2 + 1e-9
    return np.column_stack([gx[keep], gy[keep], gz[keep]])


def dilate(m: Mask, radius_mm) -> Mask:
    """Dilation with a world-metric ball (anisotropic spacing respected)."""
    if radius_mm < 0:
        raise ValueError("radius must be >= 0")
    if radius_mm == 0 or not m.bits.any():
        return m.with_bits(m.bits.copy())
    # exact Euclidean: a voxel is set iff its distance to the mask is <= r
    d = ndimage.distance_transform_edt(~m.bits, sampling=m.spacing)
    return m.with_bits(d <= radius_mm + 1e-9)


def erode(m: Mask, radius_mm) -> Mask:
    """Erosion with the same ball; voxels beyond the lattice count as unset."""
    if radius_mm < 0:
        raise ValueError("radius must be >= 0")
    if radius_mm == 0:
        return m.with_bits(m.bits.copy())
    pad = tuple(int(np.ceil(radius_mm / s)) + 1 for s in m.spacing)
    padded = np.pad(m.bits, [(p, p) for p in pad])
    d = ndimage.distance_transform_edt(padded, sampling=m.spacing)
    core = d > radius_mm + 1e-9
    sl = tuple(slice(p, p + n) for p, n in zip(pad, m.dims))
    return m.with_bits(core[sl])


def morph_close(m: Mask, radius_mm) -> Mask:
    """Closing (dilation then erosion) with infinite-domain border semantics."""
    if radius_mm < 0:
        raise ValueError("radius must be >= 0")
    if radius_mm == 0 or not m.bits.any():
        return m.with_bits(m.bits.copy())
    pad = tuple(int(np.ceil(radius_mm / s)) + 1 for s in m.spacing)
    padded = np.pad(m.bits, [(p, p) for p in pad])
    big = Mask(padded, m.spacing, m.origin, m.direction)
    closed = erode(dilate(big, radius_mm), radius_mm)
    sl = tuple(slice(p, p + n) for p, n in zip(pad, m.dims))
    return m.with_bits(closed.bits[sl])


def invert(m: Mask) -> Mask:
    return m.with_bits(~m.bits)


def body_mask(v: Volume, t_hu=SKIN_THRESHOLD_HU, closing_radius_mm=CLOSING_RADIUS_MM) -> Mask:
    """Body segmentation: threshold, keep largest blob, close 1 cm, then the
    double inversion that folds internal air cavities (lungs) into the body."""
    tissue = largest_component(threshold(v, t_hu))
    closed = morph_close(tissue, closing_radius_mm)
    air = invert(closed)
    exterior = largest_component(air)
    return invert(exterior)


def extract_surface(m: Mask, smoothing_iterations=10) -> SurfaceMesh:
    """Marching-cubes isosurface at 0.5 of the binary field, closed and
    outward-oriented, with optional Taubin smoothing of vertex positions."""
    if not m.bits.any():
        raise EmptyMask("cannot extract a surface from an empty mask")
    field3 = np.pad(m.bits.astype(np.float32), 1)
    verts, faces, _, _ = measure.marching_cubes(field3, level=0.5)
    verts = verts - 1.0  # undo the pad offset
    verts = taubin_smooth(verts, faces, iterations=smoothing_iterations)
    world = m.index_to_world(verts)
    mesh = SurfaceMesh(world, faces)
    if signed_volume(mesh) < 0:
        mesh = SurfaceMesh(world, np.ascontiguousarray(faces[:, ::-1]))
    return mesh


def detect_spheres(v: Volume, t_hu, expected):
    """Bright blobs above t_hu: intensity-weighted centroids (world mm) and
    equivalent-sphere radii, largest component first."""
    bits = v.voxels >= t_hu
    labels, n = ndimage.label(bits, structure=_CONN6)
    if n < expected:
        raise TooFewComponents(f"found {n} components, expected at least {expected}")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    order = np.argsort(-sizes[1:], kind="stable") + 1
    voxel_volume = float(np.prod(v.spacing))
    out = []
    weights = v.voxels.astype(np.float64)
    for lab in order:
        if sizes[lab] == 0:
            continue
        idx = np.argwhere(labels == lab).astype(np.float64)
        w = weights[labels == lab]
        centroid_idx = (idx * w[:, None]).sum(axis=0) / w.sum()
        centroid = v.index_to_world(centroid_idx)
        radius = (3.0 * sizes[lab] * voxel_volume / (4.0 * np.pi)) ** (1.0 / 3.0)
        out.append((centroid, float(radius)))
    return out
