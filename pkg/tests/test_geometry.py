import numpy as np
import pytest

from needleplan import geometry
from needleplan.geometry import NonRigidMatrixError, RigidTransform

from conftest import rng_for
from oracles import homogeneous_map, random_rigid


def _random_transform(rng):
    m = random_rigid(rng)
    return RigidTransform(m[:3, :3], m[:3, 3])


def test_compose_identity():
    rng = rng_for("compose-id")
    t = _random_transform(rng)
    for result in (geometry.compose(geometry.identity(), t),
                   geometry.compose(t, geometry.identity())):
        assert np.allclose(result.matrix(), t.matrix(), atol=1e-12)


def test_compose_inverse_is_identity():
    rng = rng_for("compose-inv")
    for _ in range(10):
        t = _random_transform(rng)
        eye = geometry.compose(t, geometry.inverse(t)).matrix()
        assert np.abs(eye - np.eye(4)).max() < 1e-9


def test_compose_chain_matches_sequential_point_mapping():
    rng = rng_for("compose-chain")
    chain = [_random_transform(rng) for _ in range(4)]
    composed = chain[0]
    for t in chain[1:]:
        composed = geometry.compose(composed, t)
    pts = rng.uniform(-50, 50, (20, 3))
    expected = pts
    for t in reversed(chain):  # composed applies the last factor first
        expected = homogeneous_map(t.matrix(), expected)
    got = geometry.transform_point(composed, pts)
    assert np.abs(got - expected).max() < 1e-9


def test_inverse_translation_only():
    t = geometry.translation([1.0, 2.0, 3.0])
    inv = geometry.inverse(t)
    assert np.allclose(inv.translation, [-1.0, -2.0, -3.0])
    assert np.allclose(inv.rotation, np.eye(3))
    assert np.allclose(geometry.inverse(geometry.identity()).matrix(), np.eye(4))


def test_inverse_round_trip_on_points():
    rng = rng_for("inv-roundtrip")
    t = _random_transform(rng)
    pts = rng.uniform(-80, 80, (20, 3))
    back = geometry.transform_point(geometry.inverse(t), geometry.transform_point(t, pts))
    assert np.abs(back - pts).max() < 1e-9


def test_transform_point_basics():
    assert np.allclose(geometry.transform_point(geometry.identity(), [5, 0, 0]), [5, 0, 0])
    rot = geometry.rotation_about_axis([0, 0, 1], 90.0)
    assert np.abs(geometry.transform_point(rot, [1, 0, 0]) - [0, 1, 0]).max() < 1e-12


def test_transform_point_matches_homogeneous_oracle():
    rng = rng_for("tp-oracle")
    for _ in range(10):
        t = _random_transform(rng)
        pts = rng.uniform(-100, 100, (20, 3))
        assert np.abs(geometry.transform_point(t, pts)
                      - homogeneous_map(t.matrix(), pts)).max() < 1e-12


def test_orthonormality_preserved_over_long_chains():
    rng = rng_for("long-chain")
    t = geometry.identity()
    for _ in range(1000):
        t = geometry.compose(t, _random_transform(rng))
    assert geometry.rotation_drift(t.rotation) < 1e-9


def test_compose_associativity_via_points():
    rng = rng_for("assoc")
    a, b = _random_transform(rng), _random_transform(rng)
    pts = rng.uniform(-50, 50, (20, 3))
    lhs = geometry.transform_point(geometry.compose(a, b), pts)
    rhs = geometry.transform_point(a, geometry.transform_point(b, pts))
    assert np.abs(lhs - rhs).max() < 1e-9


def test_dir_unit_invariant():
    with pytest.raises(ValueError):
        geometry.unit([0.0, 0.0, 0.0])
    d = geometry.unit([1.0, 2.0, 3.0])
    assert abs(np.linalg.norm(d) - 1.0) < 1e-9


def test_rigid_constructor_rejects_non_rigid():
    with pytest.raises(NonRigidMatrixError):
        RigidTransform(np.eye(3) * 2.0, np.zeros(3))
    shear = np.eye(3)
    shear[0, 1] = 0.1
    with pytest.raises(NonRigidMatrixError):
        RigidTransform(shear, np.zeros(3))
    reflection = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(NonRigidMatrixError):
        RigidTransform(reflection, np.zeros(3))


def test_transform_file_round_trip(tmp_path):
    rng = rng_for("file-roundtrip")
    t = _random_transform(rng)
    path = tmp_path / "t.json"
    geometry.save_transform(t, path)
    back = geometry.load_transform(path)
    assert np.abs(back.matrix() - t.matrix()).max() < 1e-12


def test_transform_file_rejects_non_rigid(tmp_path):
    import json

    m = np.eye(4)
    m[0, 0] = 1.5  # scaled: not rigid
    path = tmp_path / "bad.json"
    with open(path, "w") as f:
        json.dump({"matrix": list(m.ravel())}, f)
    with pytest.raises(NonRigidMatrixError):
        geometry.load_transform(path)


def test_rotation_log_round_trip():
    rng = rng_for("rotlog")
    for _ in range(20):
        axis = rng.normal(size=3)
        angle = rng.uniform(-179, 179)
        r = geometry.rotation_about_axis(axis, angle).rotation
        w = geometry.rotation_log(r)
        assert abs(np.rad2deg(np.linalg.norm(w)) - abs(angle)) < 1e-6
