"""Triangle surface meshes: normals, closure checks, metrics, ASCII PLY I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SurfaceMesh:
    """Triangulated surface in world mm with outward per-vertex normals."""

    vertices: np.ndarray            # (N, 3) float64
    triangles: np.ndarray           # (M, 3) int32
    normals: np.ndarray = None      # (N, 3) float64, unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle index out of range")
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.triangles)
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)


def face_normals(vertices, triangles):
    """Per-face normals scaled by twice the face area."""
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    return np.cross(v1 - v0, v2 - v0)


def vertex_normals(vertices, triangles):
    """Unit vertex normals from area-weighted averaging of face normals."""
    fn = face_normals(vertices, triangles)
    vn = np.zeros_like(vertices)
    for c in range(3):
        np.add.at(vn, triangles[:, c], fn)
    n = np.linalg.norm(vn, axis=1)
    n[n < 1e-20] = 1.0
    return vn / n[:, None]


def surface_area(m: SurfaceMesh):
    return float(np.linalg.norm(face_normals(m.vertices, m.triangles), axis=1).sum() / 2.0)


def signed_volume(m: SurfaceMesh):
    """Divergence-theorem volume; positive for outward-oriented closed meshes."""
    v0 = m.vertices[m.triangles[:, 0]]
    v1 = m.vertices[m.triangles[:, 1]]
    v2 = m.vertices[m.triangles[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def edge_counts(triangles):
    """Map undirected edge -> number of incident triangles."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def is_closed(m: SurfaceMesh):
    """True iff every edge is shared by exactly two triangles."""
    _, counts = edge_counts(m.triangles)
    return bool(np.all(counts == 2))


def euler_characteristic(m: SurfaceMesh):
    uniq, _ = edge_counts(m.triangles)
    return int(len(np.unique(m.triangles)) - len(uniq) + len(m.triangles))


def shell_count(m: SurfaceMesh):
    """Number of connected shells (by shared vertices)."""
    n = len(m.vertices)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, c in m.triangles:
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[rc] = ra
    used = np.unique(m.triangles)
    return len({find(i) for i in used})


def save_ply(m: SurfaceMesh, path_or_file, quality=None):
    """ASCII PLY with positions, normals and an optional per-vertex scalar."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w") if own else path_or_file
    try:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(m.vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property float nx\nproperty float ny\nproperty float nz\n")
        if quality is not None:
            f.write("property float quality\n")
        f.write(f"element face {len(m.triangles)}\n")
        f.write("property list uchar int vertex_indices\nend_header\n")
        for i, (v, n) in enumerate(zip(m.vertices, m.normals)):
            row = f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {n[0]:.6f} {n[1]:.6f} {n[2]:.6f}"
            if quality is not None:
                row += f" {quality[i]:.6f}"
            f.write(row + "\n")
        for t in m.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    finally:
        if own:
            f.close()


def load_ply(path_or_file):
    """Read the ASCII PLY written by save_ply; returns (mesh, quality or None)."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file) if own else path_or_file
    try:
        if f.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n_vert = n_face = 0
        props = []
        current = None
        for line in f:
            line = line.strip()
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "element":
                current = parts[1]
                if current == "vertex":
                    n_vert = int(parts[2])
                elif current == "face":
                    n_face = int(parts[2])
            elif parts[0] == "property" and current == "vertex" and parts[1] != "list":
                props.append(parts[2])
        rows = np.array([[float(x) for x in f.readline().split()] for _ in range(n_vert)])
        tris = np.array([[int(x) for x in f.readline().split()[1:4]] for _ in range(n_face)],
                        dtype=np.int32).reshape(-1, 3)
    finally:
        if own:
            f.close()
    cols = {p: rows[:, i] for i, p in enumerate(props)} if n_vert else {}
    verts = np.column_stack([cols["x"], cols["y"], cols["z"]]) if n_vert else np.zeros((0, 3))
    if "nx" in cols:
        normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
    else:
        normals = None
    quality = cols.get("quality")
    return SurfaceMesh(verts, tris, normals), quality


def taubin_smooth(vertices, triangles, iterations=10, lam=0.5, mu=-0.53):
    """Taubin lambda/mu smoothing; moves vertices only, topology unchanged."""
    if iterations <= 0 or len(triangles) == 0:
        return np.array(vertices, dtype=np.float64)
    n = len(vertices)
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    deg = np.bincount(src, minlength=n).astype(np.float64)
    deg[deg == 0] = 1.0
    v = np.array(vertices, dtype=np.float64)
    for _ in range(iterations):
        for f in (lam, mu):
            acc = np.zeros_like(v)
            np.add.at(acc, src, v[dst])
            v = v + f * (acc / deg[:, None] - v)
    return v
