"""Exact voxel traversal along needle paths: max-HU projection and air-gap test.

Rays walk the lattice with an Amanatides-Woo stepper in "cell space"
(continuous index + 0.5, so cell (i, j, k) spans [i, i+1) per axis). The
fused kernel computes the raw-voxel HU maximum and the body/air transition
count in one pass; work is data-parallel over ray endpoints and bit-identical
for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .segmentation import Mask
from .volume import AIR_HU, Volume

_CHUNK = 2048  # points per kernel task; fixed so results never depend on workers


class DegenerateSegment(ValueError):
    pass


class StartOutsideBody(ValueError):
    pass


@dataclass(frozen=True)
class RaySegment:
    """Straight segment from the target to a candidate surface point (mm)."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(3))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=float).reshape(3))
        if np.linalg.norm(self.end - self.start) < 1e-9:
            raise DegenerateSegment("segment shorter than 1e-9 mm")


@njit(nogil=True, cache=True)
def _clip_to_box(p0, p1, nx, ny, nz):
    """Slab-clip a cell-space segment to [0,nx]x[0,ny]x[0,nz]; returns
    (t0, t1, clipped) with t in [0, 1]; t0 > t1 means no overlap."""
    t0 = 0.0
    t1 = 1.0
    clipped = False
    for a in range(3):
        lo = 0.0
        hi = float(nx) if a == 0 else (float(ny) if a == 1 else float(nz))
        d = p1[a] - p0[a]
        if abs(d) < 1e-300:
            if p0[a] < lo or p0[a] > hi:
                return 1.0, 0.0, True
            continue
        ta = (lo - p0[a]) / d
        tb = (hi - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
            clipped = True
        if tb < t1:
            t1 = tb
            clipped = True
    return t0, t1, clipped


@njit(nogil=True, cache=True)
def _ray_stats(vox, body, p0x, p0y, p0z, p1x, p1y, p1z, air_hu):
    """Walk one segment; returns (max raw HU along the chain, blocked flag)."""
    nx, ny, nz = vox.shape
    p0 = np.array((p0x, p0y, p0z))
    p1 = np.array((p1x, p1y, p1z))
    t0, t1, clipped = _clip_to_box(p0, p1, nx, ny, nz)
    best = -32768
    if clipped:
        best = air_hu
    if t0 > t1:
        return best, False

    d = p1 - p0
    e = p0 + t0 * d
    ix = min(max(int(np.floor(e[0])), 0), nx - 1)
    iy = min(max(int(np.floor(e[1])), 0), ny - 1)
    iz = min(max(int(np.floor(e[2])), 0), nz - 1)

    step = np.empty(3, np.int64)
    tmax = np.empty(3)
    tdel = np.empty(3)
    cell = np.array((ix, iy, iz))
    for a in range(3):
        if d[a] > 0:
            step[a] = 1
            tmax[a] = (cell[a] + 1.0 - p0[a]) / d[a]
            tdel[a] = 1.0 / d[a]
        elif d[a] < 0:
            step[a] = -1
            tmax[a] = (cell[a] - p0[a]) / d[a]
            tdel[a] = -1.0 / d[a]
        else:
            step[a] = 0
            tmax[a] = np.inf
            tdel[a] = np.inf

    prev_body = body[cell[0], cell[1], cell[2]] != 0
    exited = False
    blocked = False
    hu = int(vox[cell[0], cell[1], cell[2]])
    if hu > best:
        best = hu

    max_iter = 2 * (nx + ny + nz) + 6
    for _ in range(max_iter):
        axis = 0
        if tmax[1] < tmax[axis]:
            axis = 1
        if tmax[2] < tmax[axis]:
            axis = 2
        if tmax[axis] > t1:
            break
        cell[axis] += step[axis]
        if cell[axis] < 0 or cell[axis] >= (nx if axis == 0 else (ny if axis == 1 else nz)):
            break
        tmax[axis] += tdel[axis]
        hu = int(vox[cell[0], cell[1], cell[2]])
        if hu > best:
            best = hu
        cur = body[cell[0], cell[1], cell[2]] != 0
        if prev_body and not cur:
            exited = True
        elif cur and not prev_body and exited:
            blocked = True
        prev_body = cur
    return best, blocked


@njit(nogil=True, cache=True)
def _ray_stats_batch(vox, body, start, ends, air_hu, out_hu, out_blocked):
    for i in range(ends.shape[0]):
        hu, blocked = _ray_stats(
            vox, body,
            start[0], start[1], start[2],
            ends[i, 0], ends[i, 1], ends[i, 2],
            air_hu,
        )
        out_hu[i] = hu
        out_blocked[i] = blocked


@njit(nogil=True, cache=True)
def _traverse_fill(p0x, p0y, p0z, p1x, p1y, p1z, nx, ny, nz, out):
    """Fill out with visited cells in order; returns the count."""
    p0 = np.array((p0x, p0y, p0z))
    p1 = np.array((p1x, p1y, p1z))
    t0, t1, _ = _clip_to_box(p0, p1, nx, ny, nz)
    if t0 > t1:
        return 0
    d = p1 - p0
    e = p0 + t0 * d
    cell = np.empty(3, np.int64)
    cell[0] = min(max(int(np.floor(e[0])), 0), nx - 1)
    cell[1] = min(max(int(np.floor(e[1])), 0), ny - 1)
    cell[2] = min(max(int(np.floor(e[2])), 0), nz - 1)
    step = np.empty(3, np.int64)
    tmax = np.empty(3)
    tdel = np.empty(3)
    for a in range(3):
        if d[a] > 0:
            step[a] = 1
            tmax[a] = (cell[a] + 1.0 - p0[a]) / d[a]
            tdel[a] = 1.0 / d[a]
        elif d[a] < 0:
            step[a] = -1
            tmax[a] = (cell[a] - p0[a]) / d[a]
            tdel[a] = -1.0 / d[a]
        else:
            step[a] = 0
            tmax[a] = np.inf
            tdel[a] = np.inf
    n = 0
    out[n, 0] = cell[0]
    out[n, 1] = cell[1]
    out[n, 2] = cell[2]
    n += 1
    max_iter = 2 * (nx + ny + nz) + 6
    for _ in range(max_iter):
        axis = 0
        if tmax[1] < tmax[axis]:
            axis = 1
        if tmax[2] < tmax[axis]:
            axis = 2
        if tmax[axis] > t1:
            break
        cell[axis] += step[axis]
        if cell[axis] < 0 or cell[axis] >= (nx if axis == 0 else (ny if axis == 1 else nz)):
            break
        tmax[axis] += tdel[axis]
        out[n, 0] = cell[0]
        out[n, 1] = cell[1]
        out[n, 2] = cell[2]
        n += 1
    return n


def _to_cell_space(grid, p):
    return np.asarray(grid.world_to_continuous_index(p), dtype=np.float64) + 0.5


def traverse(v: Volume, seg: RaySegment):
    """Ordered (K, 3) array of voxel indices whose cells the segment crosses."""
    nx, ny, nz = v.dims
    p0 = _to_cell_space(v, seg.start)
    p1 = _to_cell_space(v, seg.end)
    out = np.empty((2 * (nx + ny + nz) + 8, 3), dtype=np.int64)
    n = _traverse_fill(p0[0], p0[1], p0[2], p1[0], p1[1], p1[2], nx, ny, nz, out)
    return out[:n].copy()


def max_hu_along(v: Volume, seg: RaySegment):
    """Maximum raw voxel HU along the segment; off-lattice parts count as air."""
    p0 = _to_cell_space(v, seg.start)
    p1 = _to_cell_space(v, seg.end)
    idx = traverse(v, seg)
    best = AIR_HU if _was_clipped(v, p0, p1) or len(idx) == 0 else -32768
    if len(idx):
        best = max(best, int(v.voxels[idx[:, 0], idx[:, 1], idx[:, 2]].max()))
    return best


def _was_clipped(v, p0, p1):
    nx, ny, nz = v.dims
    t0, t1, clipped = _clip_to_box(p0, p1, nx, ny, nz)
    return clipped or t0 > t1


def air_gap_blocked(body: Mask, seg: RaySegment):
    """True iff the ray re-enters tissue after first leaving the body."""
    p0 = _to_cell_space(body, seg.start)
    dims = body.dims
    c0 = np.minimum(np.maximum(np.floor(p0).astype(int), 0), np.array(dims) - 1)
    if not body.bits[c0[0], c0[1], c0[2]]:
        raise StartOutsideBody("segment start voxel is not inside the body mask")
    p1 = _to_cell_space(body, seg.end)
    vox = np.zeros(dims, dtype=np.int16)  # HU half unused here
    _, blocked = _ray_stats(
        vox, body.bits.astype(np.uint8),
        p0[0], p0[1], p0[2], p1[0], p1[1], p1[2], AIR_HU,
    )
    return bool(blocked)


def heat_values(v: Volume, body: Mask, target, points, workers=1):
    """Per-point (max_hu, blocked, distance_mm) for rays target -> point.

    Deterministic for any worker count: points are processed in fixed chunks
    that write disjoint slices of preallocated outputs.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    target = np.asarray(target, dtype=float).reshape(3)
    dims = v.dims
    p0 = _to_cell_space(v, target)
    c0 = np.minimum(np.maximum(np.floor(p0).astype(int), 0), np.array(dims) - 1)
    if not body.bits[c0[0], c0[1], c0[2]]:
        raise StartOutsideBody("target voxel is not inside the body mask")

    ends = np.asarray(v.world_to_continuous_index(points), dtype=np.float64) + 0.5
    vox = np.ascontiguousarray(v.voxels)
    bits = body.bits.astype(np.uint8)
    n = len(points)
    out_hu = np.empty(n, dtype=np.int64)
    out_blocked = np.empty(n, dtype=np.bool_)

    def run(lo, hi):
        _ray_stats_batch(vox, bits, p0, ends[lo:hi], AIR_HU, out_hu[lo:hi], out_blocked[lo:hi])

    bounds = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    if workers <= 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            run(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: run(*b), bounds))
    dist = np.linalg.norm(points - target, axis=1)
    return out_hu.astype(np.int32), out_blocked, dist


def warmup():
    """Force JIT compilation of the ray kernels (call before benchmarking)."""
    vox = np.zeros((2, 2, 2), dtype=np.int16)
    body = np.ones((2, 2, 2), dtype=np.uint8)
    _ray_stats(vox, body, 0.5, 0.5, 0.5, 1.5, 1.5, 1.5, AIR_HU)
    out = np.empty((32, 3), dtype=np.int64)
    _traverse_fill(0.5, 0.5, 0.5, 1.5, 1.5, 1.5, 2, 2, 2, out)
    ends = np.ones((1, 3))
    _ray_stats_batch(vox, body, np.full(3, 0.5), ends, AIR_HU,
                     np.empty(1, np.int64), np.empty(1, np.bool_))
