import numpy as np
import pytest

from lvce.errors import RegistrationError
from lvce.phantom import PhantomConfig, Session, generate_subject
from lvce.register import (
    RegistrationConfig,
    RigidParams,
    apply_rigid_to_session,
    mean_displacement,
    register_rigid,
    register_rigid_with_report,
    warp_volume,
)
from lvce.volcore import Volume
from lvce.volcore.geometry import rotation_matrix

CFG = PhantomConfig(dims=(32, 32, 32), n_subjects=10, seed=42, noise_sigma=0.005)


def test_rotation_order_is_x_then_y_then_z():
    a = (0.3, -0.2, 0.5)
    rx = rotation_matrix((a[0], 0, 0))
    ry = rotation_matrix((0, a[1], 0))
    rz = rotation_matrix((0, 0, a[2]))
    np.testing.assert_allclose(rotation_matrix(a), rz @ ry @ rx, atol=1e-15)


def test_inverse_roundtrip():
    p = RigidParams((0.03, -0.02, 0.04), (1.5, -2.0, 0.5))
    q = p.inverse()
    pts = np.random.default_rng(0).uniform(-10, 10, (20, 3))
    back = q.map_points(p.map_points(pts, (1, 2, 3)), (1, 2, 3))
    np.testing.assert_allclose(back, pts, atol=1e-12)


def test_rotations_wrapped():
    p = RigidParams((np.pi, -np.pi, 3 * np.pi / 2), (0, 0, 0))
    assert p.rotation[0] == pytest.approx(np.pi)
    assert p.rotation[1] == pytest.approx(np.pi)
    assert p.rotation[2] == pytest.approx(-np.pi / 2)


def test_gradient_matches_finite_difference(smooth_volume):
    from lvce.register import _Objective, physical_center

    moving = warp_volume(smooth_volume, RigidParams((0.02, 0.01, -0.03), (0.7, -0.4, 0.3)))
    obj = _Objective(moving, smooth_volume, physical_center(smooth_volume), True)
    p0 = np.array([0.01, -0.02, 0.015, 0.3, 0.2, -0.1])
    _, g = obj(RigidParams(tuple(p0[:3]), tuple(p0[3:])), with_grad=True)
    eps = 1e-6
    for j in range(6):
        dp = np.zeros(6)
        dp[j] = eps
        fp, _ = obj(RigidParams(tuple((p0 + dp)[:3]), tuple((p0 + dp)[3:])))
        fm, _ = obj(RigidParams(tuple((p0 - dp)[:3]), tuple((p0 - dp)[3:])))
        assert g[j] == pytest.approx((fp - fm) / (2 * eps), rel=1e-4, abs=1e-9)


def test_identity_when_aligned():
    fixed = generate_subject(CFG, 0).ses01.t1_pc
    p = register_rigid(fixed, fixed)
    assert np.max(np.abs(p.rotation)) < 1e-6
    assert np.max(np.abs(p.translation)) < 1e-6


def test_pure_translation_recovered():
    rec = generate_subject(PhantomConfig(dims=(32, 32, 32), n_subjects=1, noise_sigma=0.0, seed=4), 0)
    fixed = rec.ses01.t1_pc
    # content moved by +2 voxels along x: moving(p) = fixed(p - 2)
    moving = warp_volume(fixed, RigidParams((0, 0, 0), (-2.0, 0, 0)))
    p = register_rigid(moving, fixed)
    np.testing.assert_allclose(p.translation, (2.0, 0.0, 0.0), atol=0.2)


def test_known_transform_recovered():
    rec = generate_subject(CFG, 1)
    fixed = rec.ses01.t1_pc
    truth = RigidParams((0.0, 0.0, 0.03), (3.0, 0.0, 0.0))
    moving = warp_volume(fixed, truth)
    p = register_rigid(moving, fixed)
    assert mean_displacement(p, truth.inverse(), fixed, fixed.mask) < 0.5


def test_phantom_misalignment_recovered_and_monotone():
    rec = generate_subject(CFG, 2)
    rep = register_rigid_with_report(rec.ses02.t1_pc, rec.ses01.t1_pc)
    assert mean_displacement(rep.params, rec.true_misalignment.inverse(), rec.ses01.t1_pc, rec.ses01.mask) < 0.5
    assert rep.final_mse < rep.initial_mse
    for level in rep.levels:
        assert level.end_mse <= level.start_mse


def test_deterministic():
    rec = generate_subject(CFG, 3)
    cfg = RegistrationConfig(max_iters_per_level=40)
    a = register_rigid(rec.ses02.t1_pc, rec.ses01.t1_pc, cfg)
    b = register_rigid(rec.ses02.t1_pc, rec.ses01.t1_pc, cfg)
    assert a == b


def test_equivariance_under_common_translation():
    rec = generate_subject(CFG, 4)
    fixed, moving = rec.ses01.t1_pc, rec.ses02.t1_pc
    shift = np.array([2.0, -1.0, 1.0])
    shifted = RigidParams((0, 0, 0), tuple(-shift))
    fixed_s, moving_s = warp_volume(fixed, shifted), warp_volume(moving, shifted)
    p = register_rigid(moving, fixed)
    q = register_rigid(moving_s, fixed_s)
    # q should equal p conjugated by the shift: x -> T_p(x - s) + s
    from lvce.register import physical_center, physical_points

    c = physical_center(fixed)
    pts = physical_points(fixed)[fixed_s.mask.ravel()]
    expect = p.map_points(pts - shift, c) + shift
    got = q.map_points(pts, c)
    assert np.mean(np.linalg.norm(expect - got, axis=1)) < 0.1


def test_non_overlapping_supports_fail():
    a = Volume(np.ones((8, 8, 8)), mask=np.ones((8, 8, 8), bool))
    b = Volume(np.ones((8, 8, 8)), origin=(100.0, 0.0, 0.0))
    with pytest.raises(RegistrationError):
        register_rigid(b, a)


class TestSessionWarp:
    def test_identity_is_exact(self):
        ses = generate_subject(CFG, 5).ses01
        out = apply_rigid_to_session(ses, RigidParams())
        np.testing.assert_array_equal(out.t1_pc.data, ses.t1_pc.data)
        np.testing.assert_array_equal(out.t1_sd.data, ses.t1_sd.data)
        np.testing.assert_array_equal(out.mask, ses.mask)

    def test_same_transform_on_all_images(self):
        ses = generate_subject(CFG, 5).ses01
        p = RigidParams((0.02, -0.01, 0.03), (1.0, 2.0, -1.5))
        out = apply_rigid_to_session(ses, p)
        np.testing.assert_array_equal(out.t1_pc.data, warp_volume(ses.t1_pc, p).data)
        np.testing.assert_array_equal(out.t1_sd.data, warp_volume(ses.t1_sd, p).data)
        assert out.mask.dtype == bool and out.lesion_mask.dtype == bool

    def test_inverse_composition(self, smooth_volume):
        v = smooth_volume
        ses = Session(v, v.replace(data=v.data * 0.8 + 0.1), v.mask)
        p = RigidParams((0.03, 0.02, -0.04), (2.0, -1.0, 1.5))
        back = apply_rigid_to_session(apply_rigid_to_session(ses, p), p.inverse())
        inner = ses.mask & back.mask
        assert np.mean(np.abs(back.t1_pc.data[inner] - ses.t1_pc.data[inner])) <= 0.01
        assert np.mean(np.abs(back.t1_sd.data[inner] - ses.t1_sd.data[inner])) <= 0.01
