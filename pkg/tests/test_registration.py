import numpy as np
import pytest

from needleplan import geometry, registration
from needleplan.geometry import RigidTransform
from needleplan.registration import (AmbiguousMatch, CalibrationResult,
                                     DegenerateConfiguration, InsufficientDiversity,
                                     PhantomModel, TooFewDetections,
                                     compose_ct_registration, default_phantom_model,
                                     hand_eye_qr24, kabsch, match_phantom)

from conftest import rng_for
from oracles import homogeneous_map, random_rigid


def _random_transform(rng):
    m = random_rigid(rng)
    return RigidTransform(m[:3, :3], m[:3, 3])


# ------------------------------------------------------------------- kabsch

def test_kabsch_identity_case():
    rng = rng_for("kabsch-id")
    pts = rng.uniform(-50, 50, (24, 3))
    fit, rms = kabsch(pts, pts)
    assert np.abs(fit.matrix() - np.eye(4)).max() < 1e-12
    assert rms < 1e-12


def test_kabsch_noiseless_recovery():
    rng = rng_for("kabsch-exact")
    for _ in range(20):
        truth = _random_transform(rng)
        src = rng.uniform(-60, 60, (24, 3))
        dst = geometry.transform_point(truth, src)
        fit, rms = kabsch(src, dst)
        assert rms < 1e-9
        assert np.abs(fit.rotation - truth.rotation).max() < 1e-9
        assert np.abs(fit.translation - truth.translation).max() < 1e-9


def test_kabsch_noise_statistics():
    rng = rng_for("kabsch-noise")
    ok = 0
    for _ in range(100):
        truth = _random_transform(rng)
        src = rng.uniform(-60, 60, (24, 3))
        dst = geometry.transform_point(truth, src) + rng.normal(0, 0.5, (24, 3))
        fit, _ = kabsch(src, dst)
        terr = np.linalg.norm(fit.translation - truth.translation)
        rerr = geometry.rotation_angle_deg(fit.rotation @ truth.rotation.T)
        ok += terr < 1.0 and rerr < 0.5
    assert ok >= 95


def test_kabsch_invariance_under_common_motion():
    rng = rng_for("kabsch-inv")
    truth = _random_transform(rng)
    src = rng.uniform(-60, 60, (24, 3))
    dst = geometry.transform_point(truth, src)
    move = _random_transform(rng)
    src2 = geometry.transform_point(move, src)
    dst2 = geometry.transform_point(move, dst)
    fit2, rms2 = kabsch(src2, dst2)
    expected = geometry.compose(move, geometry.compose(truth, geometry.inverse(move)))
    assert rms2 < 1e-9
    assert np.abs(fit2.matrix() - expected.matrix()).max() < 1e-8


def test_kabsch_degenerate():
    line = np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)])
    with pytest.raises(DegenerateConfiguration):
        kabsch(line, line)
    with pytest.raises(DegenerateConfiguration):
        kabsch(np.zeros((2, 3)), np.zeros((2, 3)))


# ------------------------------------------------------------ phantom match

def test_default_phantom_is_asymmetric():
    model = default_phantom_model()
    assert len(model.centers) == 24
    assert sorted(np.unique(model.radius_class)) == [2.0, 5.0]
    # no nontrivial self-congruence: matching the model against itself under
    # every same-class triplet candidate yields only the identity
    pairs, fit, rms = match_phantom(model.centers, model.radius_class, model)
    assert len(pairs) == 24
    assert np.array_equal(pairs[:, 0], pairs[:, 1])
    assert np.abs(fit.matrix() - np.eye(4)).max() < 1e-9


def test_match_phantom_recovers_random_pose():
    rng = rng_for("match-pose")
    model = default_phantom_model()
    for _ in range(5):
        truth = _random_transform(rng)
        det = geometry.transform_point(truth, model.centers) + rng.normal(0, 0.05, (24, 3))
        order = rng.permutation(24)
        pairs, fit, rms = match_phantom(det[order], model.radius_class[order], model)
        assert len(pairs) == 24
        terr = np.linalg.norm(fit.translation - truth.translation)
        rerr = geometry.rotation_angle_deg(fit.rotation @ truth.rotation.T)
        assert terr < 0.3 and rerr < 0.2
        # permutation stability: shuffling detections does not change the fit
        order2 = rng.permutation(24)
        _, fit2, _ = match_phantom(det[order2], model.radius_class[order2], model)
        assert np.abs(fit.matrix() - fit2.matrix()).max() < 1e-9


def test_match_phantom_with_missing_balls():
    rng = rng_for("match-missing")
    model = default_phantom_model()
    truth = _random_transform(rng)
    det = geometry.transform_point(truth, model.centers) + rng.normal(0, 0.05, (24, 3))
    keep = np.ones(24, dtype=bool)
    keep[[3, 17]] = False
    pairs, fit, rms = match_phantom(det[keep], model.radius_class[keep], model)
    assert len(pairs) == 22
    assert geometry.rotation_angle_deg(fit.rotation @ truth.rotation.T) < 0.2
    assert np.linalg.norm(fit.translation - truth.translation) < 0.3


def test_match_phantom_too_few():
    model = default_phantom_model()
    with pytest.raises(TooFewDetections):
        match_phantom(model.centers[:3], np.array([5.0, 5.0, 5.0]), model)
    with pytest.raises(TooFewDetections):
        match_phantom(model.centers[:5], np.full(5, 5.0), model)


def test_phantom_file_round_trip(tmp_path):
    model = default_phantom_model()
    path = tmp_path / "phantom.json"
    registration.save_phantom_model(model, path)
    back = registration.load_phantom_model(path)
    assert np.allclose(back.centers, model.centers)
    assert np.array_equal(back.radius_class, model.radius_class)
    assert np.abs(back.r_from_sb.matrix() - model.r_from_sb.matrix()).max() < 1e-12


# ----------------------------------------------------------------- hand-eye

def _synthetic_calibration(rng, n, noise_t=0.0, noise_r_deg=0.0):
    x = _random_transform(rng)   # ee -> marker content
    z = _random_transform(rng)   # base -> camera content
    robots, cameras = [], []
    for _ in range(n):
        a = _random_transform(rng)
        b = geometry.compose(geometry.inverse(x),
                             geometry.compose(geometry.inverse(a), z))
        if noise_t > 0 or noise_r_deg > 0:
            wiggle = geometry.compose(
                geometry.translation(rng.normal(0, noise_t, 3)),
                geometry.rotation_about_axis(rng.normal(size=3),
                                             rng.normal(0, noise_r_deg)),
            )
            b = geometry.compose(b, wiggle)
        robots.append(a)
        cameras.append(b)
    return x, z, robots, cameras


def test_hand_eye_noiseless_recovery():
    rng = rng_for("he-exact")
    x, z, robots, cameras = _synthetic_calibration(rng, 60)
    result = hand_eye_qr24(robots, cameras)
    assert np.abs(result.x.translation - x.translation).max() < 1e-6
    assert np.abs(result.z.translation - z.translation).max() < 1e-6
    assert geometry.rotation_angle_deg(result.x.rotation @ x.rotation.T) < 1e-6
    assert geometry.rotation_angle_deg(result.z.rotation @ z.rotation.T) < 1e-6
    assert result.residual_translation_mm < 1e-6
    assert result.residual_rotation_deg < 1e-6


def test_hand_eye_noise_monte_carlo():
    rng = rng_for("he-noise")
    ok = 0
    for _ in range(100):
        x, z, robots, cameras = _synthetic_calibration(rng, 60, noise_t=0.1,
                                                       noise_r_deg=0.05)
        result = hand_eye_qr24(robots, cameras)
        terr = max(np.linalg.norm(result.x.translation - x.translation),
                   np.linalg.norm(result.z.translation - z.translation))
        rerr = max(geometry.rotation_angle_deg(result.x.rotation @ x.rotation.T),
                   geometry.rotation_angle_deg(result.z.rotation @ z.rotation.T))
        ok += terr < 1.0 and rerr < 0.5
        assert result.residual_translation_mm < 1.0  # same scale as input noise
    assert ok >= 95


def test_hand_eye_residuals_shrink_with_samples():
    rng = rng_for("he-shrink")
    r10, r60 = [], []
    for _ in range(50):
        x, z, robots, cameras = _synthetic_calibration(rng, 60, noise_t=0.2,
                                                       noise_r_deg=0.1)
        r60.append(np.linalg.norm(
            hand_eye_qr24(robots, cameras).x.translation - x.translation))
        r10.append(np.linalg.norm(
            hand_eye_qr24(robots[:10], cameras[:10]).x.translation - x.translation))
    assert np.mean(r60) <= np.mean(r10)


def test_hand_eye_insufficient_diversity():
    rng = rng_for("he-div")
    x, z, robots, cameras = _synthetic_calibration(rng, 2)
    with pytest.raises(InsufficientDiversity):
        hand_eye_qr24(robots, cameras)
    # many samples sharing one rotation are still degenerate
    base = _random_transform(rng)
    spin = [RigidTransform(base.rotation, base.translation + rng.normal(0, 10, 3))
            for _ in range(10)]
    cams = [geometry.compose(geometry.inverse(x),
                             geometry.compose(geometry.inverse(a), z)) for a in spin]
    with pytest.raises(InsufficientDiversity):
        hand_eye_qr24(spin, cams)


def test_compose_ct_registration_chain():
    rng = rng_for("eqchain")
    assert np.allclose(compose_ct_registration(
        geometry.identity(), geometry.identity(), geometry.identity(),
        geometry.identity()).matrix(), np.eye(4))
    chain = [_random_transform(rng) for _ in range(4)]
    combined = compose_ct_registration(*chain)
    pts = rng.uniform(-50, 50, (20, 3))
    stepwise = pts
    for t in reversed(chain):
        stepwise = homogeneous_map(t.matrix(), stepwise)
    assert np.abs(geometry.transform_point(combined, pts) - stepwise).max() < 1e-9
    # perturbing one factor changes the result by exactly the conjugated delta
    delta = geometry.rotation_about_axis([0, 0, 1], 2.0)
    perturbed = compose_ct_registration(chain[0], geometry.compose(chain[1], delta),
                                        chain[2], chain[3])
    expected = geometry.compose(
        geometry.compose(chain[0], geometry.compose(chain[1], delta)),
        geometry.compose(chain[2], chain[3]))
    assert np.abs(perturbed.matrix() - expected.matrix()).max() < 1e-9


def test_calibration_sample_file_round_trip(tmp_path):
    rng = rng_for("samples-file")
    samples = [(_random_transform(rng), _random_transform(rng)) for _ in range(5)]
    path = tmp_path / "samples.json"
    registration.save_calibration_samples(samples, path)
    back = registration.load_calibration_samples(path)
    for (a0, b0), (a1, b1) in zip(samples, back):
        assert np.abs(a0.matrix() - a1.matrix()).max() < 1e-12
        assert np.abs(b0.matrix() - b1.matrix()).max() < 1e-12
