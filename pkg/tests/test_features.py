import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlfusion import features as feat
from hlfusion.errors import EmptyCluster
from hlfusion.geometry import Box2D, Box3D, RigidTransform, camera_pose_looking, frustum_from_box2d
from hlfusion.synth import CAMERA

FULL = Box2D(0, 0, CAMERA.width, CAMERA.height)


def frustum_for(box2d=FULL, cam_yaw=0.0, position=(1.0, 0.0, 1.6)):
    T_cam = camera_pose_looking(position, cam_yaw)
    return frustum_from_box2d(box2d, CAMERA, T_cam.inverse())


def yawed(fr, theta):
    """Same frustum after rotating the whole scene about +z by theta."""
    R = RigidTransform.from_yaw(theta)
    return frustum_from_box2d(fr.box, fr.camera, R.compose(fr.pose), fr.near, fr.far)


def test_centered_box_gives_identity_frame():
    cx, cy = CAMERA.cx, CAMERA.cy
    fr = frustum_for(Box2D(cx - 50, cy - 40, cx + 50, cy + 40))
    canon = feat.canonical_frame(fr)
    assert canon.azimuth == pytest.approx(0.0, abs=1e-12)
    assert canon.transform.is_identity(1e-12)


@pytest.mark.parametrize("u", [100.0, 500.0, 1300.0])
@pytest.mark.parametrize("cam_yaw", [0.0, 0.4, -2.5])
def test_central_ray_maps_to_plus_x(u, cam_yaw):
    fr = frustum_for(Box2D(u - 20, 300, u + 20, 500), cam_yaw)
    canon = feat.canonical_frame(fr)
    ray = fr.pose.rotate(CAMERA.unproject(u, 400, 1.0))
    d = canon.transform.rotate(ray)
    assert math.atan2(d[1], d[0]) == pytest.approx(0.0, abs=1e-9)
    assert canon.azimuth == pytest.approx(math.atan2(ray[1], ray[0]), abs=1e-12)


def test_single_point_cluster():
    fr = frustum_for()
    f = feat.extract_features(np.array([[10.0, 1.0, 0.8]]), fr, fr.box, CAMERA)
    assert f.shape == (feat.N_FEATURES,)
    assert np.all(np.isfinite(f))
    np.testing.assert_array_equal(f[4:10], 0.0)
    np.testing.assert_array_equal(f[10:13], 0.0)
    assert f[22] == pytest.approx(1 / feat.MIN_VOLUME)


def test_empty_cluster_raises():
    fr = frustum_for()
    with pytest.raises(EmptyCluster):
        feat.extract_features(np.zeros((0, 3)), fr, fr.box, CAMERA)


def test_uniform_cube_eigenvalues():
    cx, cy = CAMERA.cx, CAMERA.cy
    fr = frustum_for(Box2D(cx - 50, cy - 40, cx + 50, cy + 40))
    pts = np.random.default_rng(0).random((1000, 3)) + [10, 0, 0.5]
    f = feat.extract_features(pts, fr, fr.box, CAMERA)
    direct = np.sort(np.linalg.eigvalsh(np.cov(pts.T, bias=True)))[::-1]
    np.testing.assert_allclose(f[10:13], direct, atol=1e-12)
    np.testing.assert_allclose(f[10:13], 1 / 12, atol=0.01)


def test_duplicated_points_change_only_count_and_density(rng):
    fr = frustum_for()
    pts = rng.normal(0, [2, 0.8, 0.5], (300, 3)) + [15, 2, 1]
    a = feat.extract_features(pts, fr, fr.box, CAMERA)
    b = feat.extract_features(np.vstack([pts, pts]), fr, fr.box, CAMERA)
    same = [i for i in range(feat.N_FEATURES) if i not in (0, 22)]
    np.testing.assert_allclose(a[same], b[same], atol=1e-9)
    assert b[0] > a[0] and b[22] == pytest.approx(2 * a[22])


def test_box2d_switch_zeroes_image_features(rng):
    fr = frustum_for(Box2D(400, 300, 700, 500))
    pts = rng.normal(0, 1, (50, 3)) + [12, 0, 1]
    f = feat.extract_features(pts, fr, fr.box, CAMERA, use_box2d=False)
    np.testing.assert_array_equal(f[feat.BOX2D_SLICE], 0.0)
    g = feat.extract_features(pts, fr, fr.box, CAMERA)
    assert g[16] == pytest.approx(300 / 1600) and g[19] == pytest.approx(400 / 900)


@settings(max_examples=40, deadline=None)
@given(st.floats(-math.pi, math.pi), st.integers(0, 2**32 - 1))
def test_rigid_yaw_invariance(theta, seed):
    rng = np.random.default_rng(seed)
    fr = frustum_for(Box2D(*rng.uniform(100, 400, 2), *rng.uniform(800, 900, 2)))
    pts = rng.normal(0, [1.5, 0.7, 0.4], (int(rng.integers(5, 200)), 3)) + [12, 1, 1]
    R = RigidTransform.from_yaw(theta)
    fr2 = yawed(fr, theta)
    pts2 = R.apply(pts)

    c1, c2 = feat.canonical_frame(fr), feat.canonical_frame(fr2)
    np.testing.assert_allclose(c1.transform.apply(pts), c2.transform.apply(pts2), atol=1e-9)

    a = feat.extract_features(pts, fr, fr.box, CAMERA)
    b = feat.extract_features(pts2, fr2, fr2.box, CAMERA)
    keep = [i for i in range(feat.N_FEATURES) if i not in (13, 15)]
    np.testing.assert_allclose(a[keep], b[keep], atol=1e-6)
    # principal yaw is sign-free: compare modulo pi
    d13 = math.remainder(a[13] - b[13], math.pi)
    assert abs(d13) < 1e-6
    assert feat.wrap_angle(b[15] - a[15] - theta) == pytest.approx(0.0, abs=1e-9)

    gt = Box3D(tuple(pts.mean(0) + [1.0, 0.3, 0.1]), (1.8, 4.5, 1.6), rng.uniform(-3, 3))
    gt2 = Box3D(tuple(R.apply(np.array(gt.center))), gt.size, feat.wrap_angle(gt.yaw + theta))
    t1 = feat.encode_target(gt, pts.mean(0), c1)
    t2 = feat.encode_target(gt2, pts2.mean(0), c2)
    t1[6], t2[6] = math.cos(t1[6]), math.cos(t2[6])
    np.testing.assert_allclose(t1, t2, atol=1e-6)


def test_translation_changes_range_not_shape(rng):
    fr = frustum_for()
    pts = rng.normal(0, [1.5, 0.7, 0.4], (100, 3)) + [12, 1, 1]
    shift = np.array([5.0, -3.0, 0.0])
    a = feat.extract_features(pts, fr, fr.box, CAMERA)
    b = feat.extract_features(pts + shift, fr, fr.box, CAMERA)
    np.testing.assert_allclose(a[4:13], b[4:13], atol=1e-9)
    assert b[14] == pytest.approx(math.hypot(*(pts.mean(0) + shift)[:2]))


def test_encode_identity_cases():
    fr = frustum_for()
    canon = feat.canonical_frame(fr)
    assert canon.azimuth == pytest.approx(0.0, abs=1e-12)
    gt = Box3D((10, 1, 0.8), (1.9, 4.4, 1.5), 0.3)
    t = feat.encode_target(gt, np.array(gt.center), canon)
    np.testing.assert_allclose(t[:3], 0.0, atol=1e-12)
    assert t[6] == pytest.approx(0.3)

    fr2 = frustum_for(cam_yaw=0.3)
    t2 = feat.encode_target(gt, np.zeros(3), feat.canonical_frame(fr2))
    assert t2[6] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encode_decode_round_trip(seed):
    rng = np.random.default_rng(seed)
    fr = frustum_for(cam_yaw=rng.uniform(-math.pi, math.pi))
    canon = feat.canonical_frame(fr)
    gt = Box3D(tuple(rng.uniform(-40, 40, 3)), tuple(rng.uniform(0.11, 6, 3)), rng.uniform(-math.pi, math.pi))
    centroid = rng.uniform(-40, 40, 3)
    back = feat.decode_target(feat.encode_target(gt, centroid, canon), centroid, canon)
    np.testing.assert_allclose(back.center, gt.center, atol=1e-9)
    np.testing.assert_allclose(back.size, gt.size, atol=1e-12)
    assert feat.wrap_angle(back.yaw - gt.yaw) == pytest.approx(0.0, abs=1e-9)


def test_decode_zero_target_and_clamp():
    fr = frustum_for()
    canon = feat.canonical_frame(fr)
    box = feat.decode_target(np.zeros(7), np.array([10.0, 0, 1]), canon)
    assert box.center == pytest.approx((10, 0, 1))
    assert box.size == (0.1, 0.1, 0.1)
    assert box.yaw == pytest.approx(0.0, abs=1e-12)
    box = feat.decode_target([0, 0, 0, -0.3, 4, 1.5, 0], np.zeros(3), canon)
    assert box.w == 0.1
