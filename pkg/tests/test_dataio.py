import json
import math

import numpy as np
import pytest

from hlfusion.dataio import MANIFEST, load_dataset, read_cloud, save_dataset, split_dataset
from hlfusion.errors import InvalidFraction, InvariantViolation, ParseError
from hlfusion.geometry import frustum_from_box2d, project_points
from hlfusion.synth import CAMERA, GenParams, generate_dataset, generate_scene, simulate_frame


@pytest.fixture(scope="module")
def seven():
    return generate_dataset(GenParams(frames=12, seed=7))


def test_empty_manifest(tmp_path):
    (tmp_path / MANIFEST).write_text('{"version": 1, "frames": []}')
    assert load_dataset(tmp_path) == []


def test_save_empty_dataset(tmp_path):
    save_dataset([], tmp_path)
    assert json.loads((tmp_path / MANIFEST).read_text()) == {"version": 1, "frames": []}
    assert load_dataset(tmp_path) == []


def test_missing_manifest(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(tmp_path)


def test_missing_cloud_names_path(tmp_path, seven):
    save_dataset(seven[:2], tmp_path)
    victim = tmp_path / seven[1].cloud_path
    victim.unlink()
    with pytest.raises(ParseError) as info:
        load_dataset(tmp_path)
    assert str(victim) in str(info.value)


def test_malformed_json_reports_line(tmp_path):
    (tmp_path / MANIFEST).write_text('{\n "version": 1,\n "frames": [\n  oops\n ]\n}\n')
    with pytest.raises(ParseError) as info:
        load_dataset(tmp_path)
    assert info.value.line == 4


def test_bad_yaw_names_frame(tmp_path, seven):
    save_dataset(seven[:1], tmp_path)
    doc = json.loads((tmp_path / MANIFEST).read_text())
    doc["frames"][0]["annotations"][0]["box3d"]["yaw"] = 4.0
    (tmp_path / MANIFEST).write_text(json.dumps(doc))
    with pytest.raises(InvariantViolation) as info:
        load_dataset(tmp_path)
    assert info.value.frame_id == seven[0].id


def test_round_trip_is_identity(tmp_path, seven):
    save_dataset(seven, tmp_path)
    back = load_dataset(tmp_path)
    assert back == seven


def test_cloud_binary_size(tmp_path, seven):
    save_dataset(seven[:3], tmp_path)
    for fr in seven[:3]:
        path = tmp_path / fr.cloud_path
        assert path.stat().st_size == 16 * len(fr.cloud)
        np.testing.assert_array_equal(read_cloud(path), fr.cloud.points)


def test_eight_bit_intensity_rescaled(tmp_path, seven):
    fr = seven[0]
    fr.cloud.points[:, 3] *= 255.0
    try:
        save_dataset([fr], tmp_path)
        back = load_dataset(tmp_path)[0]
        assert back.cloud.points[:, 3].max() <= 1.0
    finally:
        fr.cloud.points[:, 3] /= 255.0


@pytest.mark.parametrize("n,f,sizes", [(10, 0.8, (8, 2)), (1420, 0.8, (1136, 284))])
def test_split_sizes(n, f, sizes):
    train, test = split_dataset(list(range(n)), f, seed=5)
    assert (len(train), len(test)) == sizes
    assert sorted(train + test) == list(range(n))


def test_split_deterministic():
    a = split_dataset(list(range(50)), 0.8, seed=9)
    b = split_dataset(list(range(50)), 0.8, seed=9)
    assert a == b


@pytest.mark.parametrize("f", [0.0, 1.0, -0.2, 1.5])
def test_split_rejects_fraction(f):
    with pytest.raises(InvalidFraction):
        split_dataset([1, 2, 3], f, seed=0)


# -- generator -----------------------------------------------------------------

NOISELESS = GenParams(frames=1, seed=11, noise_sigma=0.0, vehicles_per_frame=(1, 1))


@pytest.mark.parametrize("index", range(5))
def test_noiseless_returns_on_surface(index):
    _, scan, boxes = simulate_frame(NOISELESS, index)
    for k, box in enumerate(boxes):
        pts = scan.exact[scan.hit_id == k]
        loc = np.abs(box.to_local(pts)) - np.array([box.l, box.w, box.h]) / 2
        dist = np.max(loc, axis=1)
        assert np.all(np.abs(dist) <= 1e-9)


@pytest.mark.parametrize("index", range(5))
def test_label_soundness_and_frustum_duality(index):
    p = GenParams(frames=1, seed=13, noise_sigma=0.0)
    frame, scan, boxes = simulate_frame(p, index)
    for ann in frame.annotations:
        k = boxes.index(ann.box3d)
        pts = scan.exact[scan.hit_id == k]
        assert len(pts) >= p.min_returns
        assert np.all(ann.box3d.contains(pts, margin=1e-6))
        u, v, _ = project_points(frame.T_cam_from_sensor.apply(pts), CAMERA)
        b = ann.box2d
        assert np.all((u >= b.x_min - 1e-6) & (u <= b.x_max + 1e-6) & (v >= b.y_min - 1e-6) & (v <= b.y_max + 1e-6))
        fr = frustum_from_box2d(b, CAMERA, frame.sensor_from_cam, p.near, 80.0)
        assert np.all(fr.contains(pts))


def test_generator_deterministic():
    a = generate_scene(GenParams(seed=7), 3)
    b = generate_scene(GenParams(seed=7), 3)
    assert a == b
    assert generate_scene(GenParams(seed=8), 3) != a


def test_generator_annotations_valid(seven):
    for fr in seven:
        assert fr.annotations
        for a in fr.annotations:
            assert a.box2d.area >= 100
            assert 0 <= a.box2d.x_min and a.box2d.x_max <= CAMERA.width
            assert -math.pi < a.box3d.yaw <= math.pi
            assert a.box3d.center[2] == pytest.approx(a.box3d.h / 2)


def test_generator_rejects_empty_ranges():
    with pytest.raises(ValueError):
        GenParams(width_range=(2.0, 1.0))
