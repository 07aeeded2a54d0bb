import json
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from lite_nvist.camera import CameraPose, check_rotation, generate_rays, look_at, pixel_grid
from lite_nvist.common import MANIFEST_NAME, DatasetIOError, ValidationError
from lite_nvist.scenes import (AMBIENT, LIGHT_DIR, SCENE_BOUND, DataConfig, Primitive, ToyScene, generate_dataset,
                               generate_scene, load_dataset, load_mvimgnet_stub, load_shapenet_stub, pose_from_json,
                               pose_to_json, raytrace_oracle, read_ppm, split_for, surface_distance, trace, write_ppm)

UNIT_SPHERE = ToyScene(primitives=(Primitive("sphere", (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.5, 0.5, 0.5)),))


def shade(normal):
    return AMBIENT + (1.0 - AMBIENT) * max(0.0, float(np.dot(normal, LIGHT_DIR)))


# =============================================================================
# Scenes and the analytic oracle
# =============================================================================

def test_generated_scenes_are_deterministic_and_bounded():
    for seed in range(20):
        scene = generate_scene(seed)
        assert scene == generate_scene(seed)
        assert 1 <= len(scene.primitives) <= 6
        lo, hi = scene.bounds()
        assert np.all(lo >= -SCENE_BOUND - 1e-12) and np.all(hi <= SCENE_BOUND + 1e-12)
        for p in scene.primitives:
            assert p.kind in ("sphere", "box")
            assert all(0.15 <= a <= 0.95 for a in p.albedo)


def test_sphere_center_depth_is_exact():
    pose = CameraPose(rotation=np.eye(3), center=np.array([0.0, 0.0, -2.0]), focal=1.0,
                      principal_point=(16.5, 16.5), image_size=(33, 33))
    rgb, depth = raytrace_oracle(UNIT_SPHERE, pose)
    assert rgb.shape == (33, 33, 3)
    assert depth[16, 16] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rgb[16, 16], 0.5 * shade(np.array([0.0, 0.0, -1.0])))


def test_misses_show_background_at_infinite_depth():
    scene = replace(UNIT_SPHERE, background=(0.1, 0.2, 0.3))
    rgb, depth = trace(scene, np.array([[0.0, 3.0, -2.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert np.isinf(depth[0])
    np.testing.assert_allclose(rgb[0], [0.1, 0.2, 0.3])


def test_box_front_face_hit():
    scene = ToyScene(primitives=(Primitive("box", (0.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.2, 0.4, 0.6)),))
    rgb, depth = trace(scene, np.array([[0.1, 0.1, -2.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert depth[0] == pytest.approx(1.5)
    np.testing.assert_allclose(rgb[0], np.array([0.2, 0.4, 0.6]) * shade(np.array([0.0, 0.0, -1.0])))


def test_nearest_primitive_wins():
    near = Primitive("sphere", (0.0, 0.0, -0.5), (0.2,) * 3, (0.9, 0.1, 0.1))
    far = Primitive("box", (0.0, 0.0, 0.5), (0.2,) * 3, (0.1, 0.9, 0.1))
    _, depth = trace(ToyScene(primitives=(far, near)), np.array([[0.0, 0.0, -2.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert depth[0] == pytest.approx(1.3)


def test_floor_is_checkered():
    scene = ToyScene(ground=True)
    origins = np.array([[0.05, 0.0, 0.05], [0.25, 0.0, 0.05]])
    rgb, depth = trace(scene, origins, np.tile([0.0, -1.0, 0.0], (2, 1)))
    np.testing.assert_allclose(depth, [0.8, 0.8])
    up = shade(np.array([0.0, 1.0, 0.0]))
    np.testing.assert_allclose(rgb[:, 0], [0.8 * up, 0.35 * up])


def test_traced_hits_lie_on_surfaces():
    scene = generate_scene(11)
    lo, hi = scene.bounds()
    target = (lo + hi) / 2.0
    cam = target + np.array([0.4, 0.9, -1.8])
    pose = CameraPose(rotation=look_at(cam, target), center=cam, focal=0.9, principal_point=(16.0, 16.0),
                      image_size=(32, 32))
    _, depth = raytrace_oracle(scene, pose)
    rays = generate_rays(pose, pixel_grid(32, 32))
    d = depth.reshape(-1)
    hit = np.isfinite(d)
    assert hit.any()
    points = rays.origins[hit] + d[hit, None] * rays.directions[hit]
    assert np.max(surface_distance(scene, points)) < 1e-6


# =============================================================================
# PPM images
# =============================================================================

def test_ppm_round_trip_is_8_bit(tmp_path, rng):
    image = rng.uniform(size=(5, 7, 3))
    path = tmp_path / "a.ppm"
    write_ppm(path, image)
    assert path.read_bytes().startswith(b"P6")
    back = read_ppm(path)
    assert back.shape == (5, 7, 3)
    assert np.max(np.abs(back - image)) <= 0.5 / 255 + 1e-12


def test_grayscale_is_written_as_three_equal_channels(tmp_path):
    path = tmp_path / "g.ppm"
    write_ppm(path, np.linspace(0.0, 1.0, 12).reshape(3, 4))
    back = read_ppm(path)
    assert back.shape == (3, 4, 3)
    np.testing.assert_array_equal(back[..., 0], back[..., 2])


def test_unreadable_images_raise_dataset_errors(tmp_path):
    with pytest.raises(DatasetIOError):
        read_ppm(tmp_path / "missing.ppm")
    garbage = tmp_path / "bad.ppm"
    garbage.write_bytes(b"not an image")
    with pytest.raises(DatasetIOError):
        read_ppm(garbage)
    png = tmp_path / "x.png"
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(png)
    with pytest.raises(DatasetIOError):
        read_ppm(png)


# =============================================================================
# Dataset
# =============================================================================

def test_holdout_split():
    splits = [split_for(i, 5) for i in range(10)]
    assert splits.count("train") == 8
    assert splits.count("test") == 2
    assert splits[4] == splits[9] == "test"
    assert all(split_for(i, 0) == "train" for i in range(10))


def test_data_config_validation():
    with pytest.raises(ValidationError):
        DataConfig(scenes=0).validate()
    with pytest.raises(ValidationError):
        DataConfig(views=2).validate()
    with pytest.raises(ValidationError):
        DataConfig(dist_min=3.0, dist_max=2.0).validate()


def test_generated_dataset_layout(tiny_dataset, tiny_cfg):
    assert [s.split for s in tiny_dataset.scenes] == ["train", "test", "train", "test"]
    assert tiny_dataset.image_size == (8, 8)
    for scene in tiny_dataset.scenes:
        assert len(scene.views) == tiny_cfg.data.views
        assert tiny_dataset.image(scene, 0).shape == (8, 8, 3)
        first = scene.views[0].pose
        assert np.linalg.norm(first.center) == pytest.approx(scene.normalization.z)
        for view in scene.views:
            check_rotation(view.pose.rotation)


def test_generation_is_byte_reproducible(tmp_path, tiny_cfg):
    cfg = replace(tiny_cfg.data, scenes=2)
    generate_dataset(tmp_path / "a", cfg)
    generate_dataset(tmp_path / "b", cfg)
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.ppm"))
    assert a == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*.ppm"))
    for rel in a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_loading_rejects_broken_manifests(tmp_path, tiny_data):
    with pytest.raises(DatasetIOError):
        load_dataset(tmp_path)
    manifest = json.loads((tiny_data / MANIFEST_NAME).read_text())
    manifest["version"] = 99
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(DatasetIOError):
        load_dataset(tmp_path)
    # right version, but the images live elsewhere
    manifest["version"] = 1
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(DatasetIOError):
        load_dataset(tmp_path)


def test_pose_json_round_trip():
    pose = CameraPose(rotation=look_at([1.0, 0.5, -2.0]), center=np.array([1.0, 0.5, -2.0]), focal=0.9,
                      principal_point=(4.0, 4.0), image_size=(8, 8))
    back = pose_from_json(json.loads(json.dumps(pose_to_json(pose))))
    np.testing.assert_array_equal(back.rotation, pose.rotation)
    assert back.image_size == (8, 8)
    with pytest.raises(DatasetIOError):
        pose_from_json({"rotation": [1.0]})


def test_external_loaders_are_not_bundled(tmp_path):
    with pytest.raises(DatasetIOError):
        load_mvimgnet_stub(tmp_path)
    with pytest.raises(DatasetIOError):
        load_shapenet_stub(tmp_path)
