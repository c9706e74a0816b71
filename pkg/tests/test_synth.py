import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from handrecon.geometry import CameraModel, RigidTransform, triangulate
from handrecon.synth import (
    CATEGORIES,
    NoiseConfig,
    ObjectSpec,
    SceneConfig,
    SceneGenerationError,
    generate_scene,
    perception_oracle,
    read_scene,
    render_masks,
    sample_layout,
    write_scene,
)
from handrecon.synth.dataset import read_pnm, write_pnm
from handrecon.synth.render import render_silhouettes
from handrecon.synth.scene import SceneLayout, perturb_pose
from handrecon.synth.shapes import Capsule, HandSpec, min_gap


@pytest.fixture(scope="module")
def scene():
    return generate_scene(7)


def test_same_seed_gives_identical_sample(scene):
    again = generate_scene(7)
    assert again.object.to_dict() == scene.object.to_dict()
    assert again.hand.to_dict() == scene.hand.to_dict()
    np.testing.assert_array_equal(again.gt_tsdf_object.values, scene.gt_tsdf_object.values)
    np.testing.assert_array_equal(again.gt_tsdf_hand.values, scene.gt_tsdf_hand.values)
    for a, b in zip(again.observations, scene.observations):
        np.testing.assert_array_equal(a.image, b.image)


def test_hand_touches_object():
    for seed in range(15):
        sc = sample_layout(seed)
        assert min_gap(sc.hand, sc.object) < 0.005


def test_category_frequencies_over_1000_seeds():
    weights = np.array([3.0, 1.0, 1.0, 2.0, 1.0, 2.0])
    config = SceneConfig(category_weights=tuple(weights))
    counts = {c: 0 for c in CATEGORIES}
    for seed in range(1000):
        counts[sample_layout(seed, config).object.category] += 1
    freq = np.array([counts[c] for c in CATEGORIES]) / 1000
    assert all(counts.values())
    np.testing.assert_allclose(freq, weights / weights.sum(), atol=0.05)


def test_rejection_budget_exhausted_raises():
    with pytest.raises(SceneGenerationError, match="100"):
        sample_layout(0, SceneConfig(image_size=(30, 30), focal=20.0))


def test_sphere_on_optical_axis_renders_analytic_disk():
    f, w, h, d, r = 200.0, 96, 80, 0.5, 0.06
    cam = CameraModel.simple(f, w, h)
    sphere = ObjectSpec("sphere", {"diameter": 2 * r}, RigidTransform.identity().from_rotvec((0, 0, 0), (0, 0, d)))
    _, m_o = render_masks(SceneLayout(0, sphere, None), cam)
    radius_px = f * np.tan(np.arcsin(r / d))
    jj, ii = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dist = np.hypot(jj - w / 2, ii - h / 2)
    assert m_o.bitmap[dist < radius_px - 1].all()
    assert not m_o.bitmap[dist > radius_px + 1].any()


def test_empty_scene_renders_empty_masks():
    m_h, m_o = render_masks(SceneLayout(0, None, None), CameraModel.simple(100.0, 40, 30))
    assert m_h.area == 0 and m_o.area == 0


def test_hand_behind_object_is_occluded_by_depth():
    cam = CameraModel.simple(150.0, 80, 60)
    box = ObjectSpec("box", {"width": 0.06, "depth": 0.06, "height": 0.06}, RigidTransform.from_rotvec((0, 0, 0), (0, 0, 0.4)))
    wrist = RigidTransform.from_rotvec((0, 0, 0), (-0.03, 0.0, 0.5))
    hand = HandSpec(wrist, (Capsule((0.0, 0.0, 0.0), (0.1, 0.0, 0.0), 0.015),))
    m_h, m_o = render_masks(SceneLayout(0, box, hand), cam)
    hand_alone, _, dh, _ = render_silhouettes(cam, hand.sdf, None)
    _, obj_alone, _, do = render_silhouettes(cam, None, box.sdf)
    np.testing.assert_array_equal(m_o.bitmap, obj_alone.bitmap)
    np.testing.assert_array_equal(m_h.bitmap, hand_alone.bitmap & ~obj_alone.bitmap)
    assert m_h.area > 0
    # sample rays: wherever both are hit, the nearer one wins
    both = np.isfinite(dh) & np.isfinite(do)
    assert (do[both] < dh[both]).all()


def _surface_samples(obj, n, rng):
    p = obj.pose.apply(rng.uniform(-1, 1, (n, 3)) * obj.half_extents() * 1.3)
    for _ in range(30):
        eps = 1e-6
        grad = np.stack([(obj.sdf(p + eps * e) - obj.sdf(p - eps * e)) / (2 * eps) for e in np.eye(3)], axis=1)
        grad /= np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)
        p = p - obj.sdf(p)[:, None] * grad
    return p[np.abs(obj.sdf(p)) < 1e-5]


def test_object_surface_projects_inside_its_mask(scene):
    pts = _surface_samples(scene.object, 3000, np.random.default_rng(1))
    assert len(pts) > 1000
    for cam in scene.cameras:
        _, m_o, _, _ = render_silhouettes(cam, None, scene.object.sdf)
        grown = m_o.dilated(1).bitmap
        px, ok = cam.project(pts)
        j = np.clip(np.floor(px[ok, 0]).astype(int), 0, cam.width - 1)
        i = np.clip(np.floor(px[ok, 1]).astype(int), 0, cam.height - 1)
        assert grown[i, j].mean() >= 0.99


def test_ground_truth_tsdf_matches_analytic_sdf(scene):
    grid = scene.gt_tsdf_object
    ref = np.clip(scene.object.sdf(grid.world_centers()), -grid.truncation, grid.truncation)
    assert np.abs(grid.values.ravel() - ref.ravel()).max() <= 1.5 * grid.voxel_size


def test_zero_noise_perception_is_exact(scene):
    for v, frame in enumerate(perception_oracle(scene, NoiseConfig())):
        gt_h, gt_o = scene.gt_masks[v]
        np.testing.assert_array_equal(frame.mask_hand.bitmap, gt_h.bitmap)
        np.testing.assert_array_equal(frame.mask_object.bitmap, gt_o.bitmap)
        assert frame.box_hand == gt_h.bounding_box() and frame.box_object == gt_o.bounding_box()
        assert frame.wrist_pose.almost_equal(scene.hand.wrist_pose, 0.0)
        px, _ = scene.cameras[v].project(scene.object_center)
        np.testing.assert_array_equal(frame.centroid_px, px[0])
        np.testing.assert_array_equal(frame.observation.image, scene.observations[v].image)


def test_translation_noise_is_per_axis_gaussian():
    rng = np.random.default_rng(3)
    truth = RigidTransform.from_rotvec((0.1, 0.2, 0.3), (0.5, 0.0, 0.2))
    err = np.array([perturb_pose(truth, 0.0, 5.0, rng).translation - truth.translation for _ in range(1000)])
    assert np.abs(err).mean() < 0.005
    np.testing.assert_allclose(err.std(axis=0), 0.005, rtol=0.1)
    np.testing.assert_allclose(err.mean(axis=0), 0.0, atol=0.0006)


def _gate_reject_rate(scene, jitter, draws=150):
    rng = np.random.default_rng(11)
    noise = NoiseConfig(centroid_jitter_px=jitter)
    rejected = 0
    for _ in range(draws):
        left, right = perception_oracle(scene, noise, rng)
        _, el, er = triangulate(left.centroid_px, right.centroid_px, *scene.cameras)
        rejected += max(el, er) >= 5.0
    return rejected / draws


def test_centroid_jitter_triggers_the_gate(scene):
    assert _gate_reject_rate(scene, 6.0) > 0
    assert _gate_reject_rate(scene, 0.0, draws=5) == 0


def test_dataset_round_trip(scene, tmp_path):
    out = write_scene(scene, tmp_path)
    back = read_scene(out)
    assert back.object.to_dict() == scene.object.to_dict()
    assert back.hand.to_dict() == scene.hand.to_dict()
    np.testing.assert_array_equal(back.gt_tsdf_object.values, scene.gt_tsdf_object.values)
    for a, b in zip(back.observations, scene.observations):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_allclose(a.camera.intrinsics, b.camera.intrinsics)
    for a, b in zip(back.cameras, scene.cameras):
        np.testing.assert_array_equal(a.projection_matrix(), b.projection_matrix())
    for (ah, ao), (bh, bo) in zip(back.gt_masks, scene.gt_masks):
        np.testing.assert_array_equal(ah.bitmap, bh.bitmap)
        np.testing.assert_array_equal(ao.bitmap, bo.bitmap)


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]))))
def test_pnm_round_trip(tmp_path_factory, img):
    img = img[..., 0] if img.shape[2] == 1 else img
    path = tmp_path_factory.mktemp("pnm") / "x.pnm"
    write_pnm(path, img)
    np.testing.assert_array_equal(read_pnm(path), img)
