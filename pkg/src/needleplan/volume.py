"""CT volume container, strict NRRD-subset I/O, index/world mapping, downsampling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AIR_HU = -1000  # padding value for queries leaving the lattice

NRRD_MAGIC = "NRRD0004"
_REQUIRED_FIELDS = {"type", "dimension", "sizes", "space directions", "space origin", "encoding"}
_OPTIONAL_FIELDS = {"endian"}


class MalformedHeader(ValueError):
    pass


class UnsupportedEncoding(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


class TooSmall(ValueError):
    pass


@dataclass(frozen=True)
class Volume:
    """Regular 3D grid of HU values.

    voxels[i, j, k] is the sample at lattice index (i, j, k); i varies fastest
    in the on-disk raw stream. World position of a voxel center is
    origin + direction @ (index * spacing).
    """

    voxels: np.ndarray            # int16, shape (nx, ny, nz)
    spacing: np.ndarray           # (3,) mm per voxel step
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.dtype != np.int16:
            v = v.astype(np.int16)
        if v.ndim != 3 or min(v.shape) < 2:
            raise DimensionMismatch("volume needs 3 axes with at least 2 voxels each")
        sp = np.array(self.spacing, dtype=float).reshape(3)
        if np.any(sp <= 0):
            raise ValueError("spacing must be positive")
        o = np.array(self.origin, dtype=float).reshape(3)
        d = np.array(self.direction, dtype=float).reshape(3, 3)
        if np.abs(d.T @ d - np.eye(3)).max() > 1e-6:
            raise ValueError("direction must be orthonormal")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @property
    def dims(self):
        return self.voxels.shape

    def index_to_world(self, idx):
        """World mm of a (possibly fractional) lattice index; idx (3,) or (N, 3)."""
        idx = np.asarray(idx, dtype=float)
        return (idx * self.spacing) @ self.direction.T + self.origin

    def world_to_continuous_index(self, p):
        """Fractional lattice index of a world point; p (3,) or (N, 3)."""
        p = np.asarray(p, dtype=float)
        return ((p - self.origin) @ self.direction) / self.spacing

    def sample_trilinear(self, p):
        """Trilinear interpolation of the 8 voxels around a world point."""
        c = self.world_to_continuous_index(p)
        single = c.ndim == 1
        c = np.atleast_2d(c)
        nx, ny, nz = self.dims
        if np.any(c < 0) or np.any(c > np.array(self.dims) - 1):
            raise OutOfBounds("sample point outside the voxel lattice")
        i0 = np.minimum(np.floor(c).astype(int), np.array(self.dims) - 2)
        f = c - i0
        v = self.voxels
        out = np.zeros(len(c))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    out += w * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        return float(out[0]) if single else out


def _parse_vector_list(text, what):
    parts = text.replace(") (", ")|(").split("|")
    vecs = []
    for p in parts:
        p = p.strip()
        if not (p.startswith("(") and p.endswith(")")):
            raise MalformedHeader(f"bad vector syntax in {what}: {p!r}")
        try:
            vecs.append([float(x) for x in p[1:-1].split(",")])
        except ValueError as e:
            raise MalformedHeader(f"bad number in {what}: {p!r}") from e
    return np.array(vecs)


def load_volume(path) -> Volume:
    """Read the strict NRRD subset: NRRD0004, short, 3-D, raw little-endian."""
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n")
    if nl < 0 or blob[:nl].strip().decode("ascii", "replace") != NRRD_MAGIC:
        raise MalformedHeader("missing NRRD0004 magic")
    # header = lines up to the first blank line; data follows
    end = blob.find(b"\n\n", nl)
    if end < 0:
        raise MalformedHeader("missing blank line after header")
    header_lines = blob[nl + 1 : end].decode("ascii", "replace").splitlines()
    data = blob[end + 2 :]

    fields = {}
    for line in header_lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise MalformedHeader(f"bad header line: {line!r}")
        key, _, value = line.partition(":")
        key = key.strip().lower()
        if key not in _REQUIRED_FIELDS | _OPTIONAL_FIELDS:
            raise MalformedHeader(f"unsupported header field: {key!r}")
        fields[key] = value.strip()

    missing = _REQUIRED_FIELDS - fields.keys()
    if missing:
        raise MalformedHeader(f"missing header fields: {sorted(missing)}")
    if fields["type"] != "short":
        raise UnsupportedEncoding(f"unsupported type {fields['type']!r}; only short")
    if fields["encoding"] != "raw":
        raise UnsupportedEncoding(f"unsupported encoding {fields['encoding']!r}; only raw")
    if fields.get("endian", "little") != "little":
        raise UnsupportedEncoding("only little-endian raw data is supported")
    if fields["dimension"] != "3":
        raise DimensionMismatch(f"dimension must be 3, got {fields['dimension']}")

    try:
        sizes = [int(x) for x in fields["sizes"].split()]
    except ValueError as e:
        raise MalformedHeader("bad sizes field") from e
    if len(sizes) != 3:
        raise DimensionMismatch("sizes must list 3 extents")

    dirs = _parse_vector_list(fields["space directions"], "space directions")
    if dirs.shape != (3, 3):
        raise MalformedHeader("space directions must hold 3 vectors of 3")
    origin = _parse_vector_list(fields["space origin"], "space origin")
    if origin.shape != (1, 3):
        raise MalformedHeader("space origin must be one vector of 3")

    spacing = np.linalg.norm(dirs, axis=1)
    if np.any(spacing <= 0):
        raise MalformedHeader("space directions must be nonzero")
    direction = (dirs / spacing[:, None]).T  # column i = world direction of axis i

    count = sizes[0] * sizes[1] * sizes[2]
    if len(data) != 2 * count:
        raise DimensionMismatch(
            f"raw payload holds {len(data) // 2} values, header declares {count}"
        )
    vox = np.frombuffer(data, dtype="<i2").reshape(sizes, order="F")
    return Volume(np.ascontiguousarray(vox), spacing, origin[0], direction)


def save_volume(v: Volume, path):
    """Write the same strict NRRD subset produced by load_volume."""
    dirs = (v.direction * v.spacing).T  # row i = world step of axis i
    lines = [
        NRRD_MAGIC,
        "type: short",
        "dimension: 3",
        "sizes: {} {} {}".format(*v.dims),
        "space directions: "
        + " ".join("({},{},{})".format(*row) for row in dirs),
        "space origin: ({},{},{})".format(*v.origin),
        "encoding: raw",
        "endian: little",
        "",
        "",
    ]
    with open(path, "wb") as f:
        f.write("\n".join(lines).encode("ascii"))
        f.write(np.asfortranarray(v.voxels).astype("<i2").tobytes(order="F"))


def downsample_half(v: Volume) -> Volume:
    """Half resolution per axis by linear interpolation; spacing doubles.

    Output voxel (i, j, k) is the trilinear sample at old continuous index
    (2i + 0.5, 2j + 0.5, 2k + 0.5), i.e. the center of each 2x2x2 block.
    """
    if min(v.dims) < 4:
        raise TooSmall("need at least 4 voxels per axis to downsample")
    nd = tuple(n // 2 for n in v.dims)
    x = v.voxels.astype(np.float64)
    # trilinear at block centers = mean of each 2x2x2 block
    x = x[: 2 * nd[0], : 2 * nd[1], : 2 * nd[2]]
    block = (
        x[0::2, 0::2, 0::2] + x[1::2, 0::2, 0::2] + x[0::2, 1::2, 0::2] + x[0::2, 0::2, 1::2]
        + x[1::2, 1::2, 0::2] + x[1::2, 0::2, 1::2] + x[0::2, 1::2, 1::2] + x[1::2, 1::2, 1::2]
    ) / 8.0
    vox = np.clip(np.rint(block), -32768, 32767).astype(np.int16)
    new_origin = v.index_to_world(np.array([0.5, 0.5, 0.5]))
    return Volume(vox, v.spacing * 2.0, new_origin, v.direction)
