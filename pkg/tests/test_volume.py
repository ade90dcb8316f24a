import numpy as np
import pytest

from needleplan import volume as volmod
from needleplan.volume import (DimensionMismatch, MalformedHeader, OutOfBounds,
                               TooSmall, UnsupportedEncoding, Volume, downsample_half,
                               load_volume, save_volume)

from conftest import rng_for
from oracles import trilinear_naive


def _random_volume(rng, n=32):
    vox = rng.integers(-1000, 2000, size=(n, n, n), dtype=np.int16)
    return Volume(vox, rng.uniform(0.5, 2.0, 3), rng.uniform(-50, 50, 3))


def test_load_small_air_volume(tmp_path):
    vox = np.full((2, 2, 2), -1000, dtype=np.int16)
    v = Volume(vox, (1, 1, 1))
    path = tmp_path / "air.nrrd"
    save_volume(v, path)
    back = load_volume(path)
    assert back.dims == (2, 2, 2)
    assert np.all(back.voxels == -1000)
    assert np.allclose(back.spacing, 1.0)


def test_round_trip_random_volume(tmp_path):
    rng = rng_for("vol-roundtrip")
    v = _random_volume(rng)
    path = tmp_path / "v.nrrd"
    save_volume(v, path)
    back = load_volume(path)
    assert np.array_equal(back.voxels, v.voxels)
    assert np.allclose(back.spacing, v.spacing, atol=1e-12)
    assert np.allclose(back.origin, v.origin, atol=1e-12)
    assert np.allclose(back.direction, v.direction, atol=1e-12)


def test_header_payload_mismatch(tmp_path):
    path = tmp_path / "bad.nrrd"
    header = ("NRRD0004\ntype: short\ndimension: 3\nsizes: 3 1 1\n"
              "space directions: (1,0,0) (0,1,0) (0,0,1)\n"
              "space origin: (0,0,0)\nencoding: raw\nendian: little\n\n")
    with open(path, "wb") as f:
        f.write(header.encode())
        f.write(np.zeros(7, dtype="<i2").tobytes())
    with pytest.raises(DimensionMismatch):
        load_volume(path)


@pytest.mark.parametrize("mutation,error", [
    ("NRRD0004", None),
    ("BADMAGIC", MalformedHeader),
    ("encoding: gzip", UnsupportedEncoding),
    ("type: float", UnsupportedEncoding),
    ("dimension: 4", DimensionMismatch),
    ("unknown-field: 1", MalformedHeader),
])
def test_header_validation(tmp_path, mutation, error):
    lines = ["NRRD0004", "type: short", "dimension: 3", "sizes: 2 2 2",
             "space directions: (1,0,0) (0,1,0) (0,0,1)",
             "space origin: (0,0,0)", "encoding: raw", "endian: little"]
    if mutation.startswith("NRRD") or mutation.startswith("BAD"):
        lines[0] = mutation
    elif mutation.startswith("encoding"):
        lines[6] = mutation
    elif mutation.startswith("type"):
        lines[1] = mutation
    elif mutation.startswith("dimension"):
        lines[2] = mutation
    else:
        lines.append(mutation)
    path = tmp_path / "h.nrrd"
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n\n").encode())
        f.write(np.zeros(8, dtype="<i2").tobytes())
    if error is None:
        assert load_volume(path).dims == (2, 2, 2)
    else:
        with pytest.raises(error):
            load_volume(path)


def test_index_world_basics():
    v = Volume(np.zeros((4, 4, 4), dtype=np.int16), (1, 1, 1), origin=(10, 20, 30))
    assert np.allclose(v.index_to_world([0, 0, 0]), [10, 20, 30])
    v2 = Volume(np.zeros((4, 4, 4), dtype=np.int16), (2, 2, 2), origin=(10, 20, 30))
    assert np.allclose(v2.index_to_world([1, 1, 1]), [12, 22, 32])


def test_index_world_round_trips():
    rng = rng_for("idxworld")
    rot = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(rot) < 0:
        rot[:, 0] = -rot[:, 0]
    v = Volume(np.zeros((8, 8, 8), dtype=np.int16), rng.uniform(0.5, 2, 3),
               rng.uniform(-10, 10, 3), rot)
    pts = rng.uniform(-40, 40, (50, 3))
    back = v.index_to_world(v.world_to_continuous_index(pts))
    assert np.abs(back - pts).max() < 1e-9
    idx = rng.uniform(0, 7, (50, 3))
    back_idx = v.world_to_continuous_index(v.index_to_world(idx))
    assert np.abs(back_idx - idx).max() < 1e-9


def test_trilinear_voxel_center_and_midpoint():
    vox = np.zeros((3, 3, 3), dtype=np.int16)
    vox[1, 1, 1] = 500
    v = Volume(vox, (1, 1, 1))
    assert v.sample_trilinear(v.index_to_world([1, 1, 1])) == 500.0
    vox2 = np.zeros((2, 2, 2), dtype=np.int16)
    vox2[1, :, :] = 100
    v2 = Volume(vox2, (1, 1, 1))
    assert abs(v2.sample_trilinear(v2.index_to_world([0.5, 0, 0])) - 50.0) < 1e-12


def test_trilinear_matches_naive_oracle():
    rng = rng_for("trilinear")
    v = _random_volume(rng, n=16)
    for _ in range(50):
        c = rng.uniform(0, 15, 3)
        got = v.sample_trilinear(v.index_to_world(c))
        assert abs(got - trilinear_naive(v.voxels, c)) < 1e-9


def test_trilinear_out_of_bounds():
    v = Volume(np.zeros((4, 4, 4), dtype=np.int16), (1, 1, 1))
    with pytest.raises(OutOfBounds):
        v.sample_trilinear([100.0, 0.0, 0.0])


def test_downsample_constant_volume():
    v = Volume(np.full((16, 16, 16), 123, dtype=np.int16), (1, 1, 1))
    d = downsample_half(v)
    assert d.dims == (8, 8, 8)
    assert np.all(d.voxels == 123)
    assert np.allclose(d.spacing, 2.0)


def test_downsample_preserves_linear_ramp():
    n = 16
    vox = np.broadcast_to(np.arange(n, dtype=np.int16)[:, None, None] * 10,
                          (n, n, n)).copy()
    v = Volume(vox, (1, 1, 1))
    d = downsample_half(v)
    # trilinear sample of the coarse grid must reproduce the ramp at interior voxels
    for i in range(1, 7):
        world = d.index_to_world([i, 4, 4])
        expected = v.sample_trilinear(world)
        assert abs(float(d.voxels[i, 4, 4]) - expected) <= 0.5


def test_downsample_world_alignment(sphere_case):
    vol, _, _, _ = sphere_case
    d = downsample_half(vol)
    # sampling the coarse volume at shared world points stays close to the fine values
    rng = rng_for("ds-world")
    pts = vol.index_to_world(rng.uniform(10, 50, (50, 3)))
    fine = np.array([vol.sample_trilinear(p) for p in pts])
    coarse = np.array([d.sample_trilinear(p) for p in pts])
    # smooth regions agree; voxel-scale structures may differ up to the local jump
    assert np.median(np.abs(fine - coarse)) < 60.0


def test_downsample_too_small():
    v = Volume(np.zeros((3, 3, 3), dtype=np.int16), (1, 1, 1))
    with pytest.raises(TooSmall):
        downsample_half(v)


def test_volume_invariants():
    with pytest.raises(DimensionMismatch):
        Volume(np.zeros((1, 4, 4), dtype=np.int16), (1, 1, 1))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4, 4), dtype=np.int16), (0, 1, 1))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4, 4), dtype=np.int16), (1, 1, 1),
               direction=np.eye(3) * 1.5)
