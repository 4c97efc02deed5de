import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobotmimic.world import (SENTINEL, CameraModel, Demonstration, Detection, GenerationError,
                              NoiseConfig, SceneObject, SceneState, TaskConfig, camera_to_world,
                              generate_demonstration, goal_for, load_demo, object_of_interest,
                              pixel_to_camera, random_scene, run_expert, save_demo,
                              scripted_expert, select_object_of_interest, world_to_pixel)

CAM = CameraModel()
SORT = TaskConfig()
POUR = TaskConfig.pouring()


# ------------------------------------------------------------------- camera
def test_principal_point():
    assert np.allclose(pixel_to_camera(CAM.cx, CAM.cy, 1000.0, CAM), [0, 0, 1.0], atol=0)


def test_focal_scaling_in_meters():
    cam = CameraModel(fx=600.0, fy=600.0)
    assert pixel_to_camera(cam.cx + 600.0, cam.cy, 1000.0, cam)[0] == pytest.approx(1.0, abs=1e-15)


def test_literal_formula_mixes_units():
    p = pixel_to_camera(CAM.cx + 615.0, CAM.cy, 1000.0, CAM, literal=True)
    assert p[0] == pytest.approx(1000.0) and p[2] == pytest.approx(1.0)


def test_invalid_depth():
    for z in (0.0, -5.0):
        with pytest.raises(ValueError):
            pixel_to_camera(1, 2, z, CAM)


def test_default_permutation():
    cam = CameraModel(translation=(0.0, 0.0, 0.0))
    assert np.array_equal(camera_to_world([1, 2, 3], cam), [3, 1, 2])
    assert np.array_equal(camera_to_world([0, 0, 0], CameraModel(translation=(0.5, 0, 0))), [0.5, 0, 0])
    P = cam.permutation
    assert abs(abs(np.linalg.det(P)) - 1) < 1e-15
    assert np.array_equal(P.sum(0), np.ones(3)) and np.array_equal(P.sum(1), np.ones(3))


def test_camera_round_trip():
    rng = np.random.default_rng(0)
    pts = rng.uniform([0.0, -0.6, -0.1], [0.8, 0.4, 0.6], size=(1000, 3))
    for p in pts:
        x, y, z = world_to_pixel(p, CAM)
        assert z > 0
        assert np.allclose(camera_to_world(pixel_to_camera(x, y, z, CAM), CAM), p, atol=1e-9, rtol=0)


def test_principal_ray_and_behind_camera():
    on_ray = camera_to_world([0.0, 0.0, 1.3], CAM)
    x, y, _ = world_to_pixel(on_ray, CAM)
    assert x == pytest.approx(CAM.cx, abs=1e-9) and y == pytest.approx(CAM.cy, abs=1e-9)
    with pytest.raises(ValueError):
        world_to_pixel(camera_to_world([0.0, 0.0, -1.0], CAM), CAM)


# ---------------------------------------------------------------- selection
def test_rule1_low_confidence():
    dets = [Detection("blemished", 0.4, (0.3, 0.1, 0.1)), Detection("unblemished", 0.4, (0.3, 0.2, 0.1))]
    label, loc, rule = select_object_of_interest(dets, (0.3, 0.1, 0.2))
    assert label == "unknown" and rule == 1
    assert np.all(loc == -np.inf)


def test_rule2_near_beats_lower_y():
    eef = np.array([0.3, 0.0, 0.2])
    near = Detection("unblemished", 0.9, (0.3, 0.15, 0.2))
    far = Detection("blemished", 0.9, (0.3, -0.8, 0.2))
    label, loc, rule = select_object_of_interest([far, near], eef)
    assert (label, rule) == ("unblemished", 2) and np.array_equal(loc, near.centroid_3d)


def test_rule2_nearest_of_several():
    eef = np.zeros(3)
    a = Detection("blemished", 0.9, (0.1, 0.0, 0.0))
    b = Detection("unblemished", 0.9, (0.05, 0.0, 0.0))
    assert select_object_of_interest([a, b], eef)[0] == "unblemished"


def test_rule3_lowest_y():
    eef = np.array([0.0, 0.0, 2.0])
    dets = [Detection("unblemished", 0.8, (0.3, 0.6, 0.1)), Detection("blemished", 0.8, (0.3, 0.3, 0.1))]
    label, loc, rule = select_object_of_interest(dets, eef)
    assert (label, rule) == ("blemished", 3) and loc[1] == 0.3


det_strategy = st.builds(
    Detection, st.sampled_from(["blemished", "unblemished", "unknown"]), st.floats(0, 1),
    st.tuples(*[st.floats(-1, 1)] * 3))


@settings(max_examples=300, deadline=None)
@given(st.lists(det_strategy, max_size=6), st.tuples(*[st.floats(-1, 1)] * 3))
def test_selection_total(dets, eef):
    label, loc, rule = select_object_of_interest(dets, eef)
    qualifying = [d for d in dets if d.confidence >= 0.5]
    assert rule in (1, 2, 3)
    if not qualifying:
        assert rule == 1 and label == "unknown"
    else:
        assert any(np.array_equal(loc, d.centroid_3d) and label == d.label for d in qualifying)
        near = any(np.linalg.norm(np.subtract(d.centroid_3d, eef)) < 0.20 for d in qualifying)
        assert (rule == 2) == near


# ------------------------------------------------------------------- expert
def test_zero_action_when_done():
    scene = SceneState((SceneObject(0, "blemished", (0.3, 0.0, 0.1), phase="at_bin"),), (0.3, 0.0, 0.3))
    assert np.array_equal(scripted_expert(scene, SORT), np.zeros(3))


def test_carry_to_bin_step_length():
    bin_ = np.asarray(SORT.bin)
    eef = bin_ + np.array([0.0, 0.4, 0.0])
    obj = SceneObject(0, "blemished", tuple(eef), phase="grasped", visible=True)
    a = scripted_expert(SceneState((obj,), tuple(eef)), SORT)
    assert np.linalg.norm(a) == pytest.approx(0.05, abs=1e-12)
    assert np.allclose(a / np.linalg.norm(a), [0.0, -1.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("task", [SORT, POUR], ids=["sorting", "pouring"])
def test_terminal_phases(task):
    rng = np.random.default_rng(1)
    for _ in range(30):
        scenes, _ = run_expert(task, random_scene(task, rng))
        final = scenes[-1]
        assert final.done
        for o in final.objects:
            if task.name == "sorting":
                assert o.phase == ("at_bin" if o.label_true == "blemished" else "at_corner")
            else:
                assert o.phase == "at_bin" and o.emptied


def test_expert_never_oscillates():
    rng = np.random.default_rng(2)
    for _ in range(20):
        scenes, _ = run_expert(SORT, random_scene(SORT, rng))
        for a, b in zip(scenes[:-1], scenes[1:]):
            _, label, loc = object_of_interest(SORT, a)
            goal = goal_for(SORT, a.eef, loc, label)
            if goal is not None:
                assert np.linalg.norm(goal - b.eef) <= np.linalg.norm(goal - a.eef) + 1e-12


def test_episode_lengths_mostly_in_budget():
    lengths = [len(run_expert(SORT, random_scene(SORT, np.random.default_rng(s)))[0]) for s in range(200)]
    inside = np.mean([25 <= n <= 35 for n in lengths])
    assert inside > 0.6


def test_pouring_tilt_once_per_object():
    demo = generate_demonstration(POUR, NoiseConfig(), 3)
    assert sum(f.tilt for f in demo.frames) == POUR.n_objects


# ----------------------------------------------------------- demonstrations
def test_noise_free_actions_reconstruct_path():
    demo = generate_demonstration(SORT, NoiseConfig(), 4)
    path = demo.eef_path
    recon = path[0] + np.concatenate([[np.zeros(3)], np.cumsum([f.action for f in demo.frames[:-1]], 0)])
    assert np.allclose(recon, path, atol=1e-12)
    for f, g in zip(demo.frames[:-1], demo.frames[1:]):
        assert np.array_equal(f.eef + f.action, g.eef)
    assert np.allclose(demo.frames[0].keypoints, demo.frames[0].true_keypoints, atol=0)
    assert SORT.frame_budget[0] <= len(demo) <= SORT.frame_budget[1]


def test_action_consistency_with_noise():
    demo = generate_demonstration(SORT, NoiseConfig(0.01, 0.3, 0.1, 1.0, 2.0), 5)
    for f, g in zip(demo.frames[:-1], demo.frames[1:]):
        assert np.linalg.norm(f.eef + f.action - g.eef) <= 1e-9


def test_dropout_fraction():
    noise = NoiseConfig(dropout_prob=0.2)
    dropped = total = 0
    seed = 0
    while total < 10_000:
        demo = generate_demonstration(SORT, noise, seed, protect_head=0)
        dropped += sum(f.dropped for f in demo.frames)
        total += len(demo)
        seed += 1
    assert 0.18 <= dropped / total <= 0.22


def test_head_protected():
    for seed in range(20):
        demo = generate_demonstration(SORT, NoiseConfig(dropout_prob=0.9), seed)
        assert not demo.frames[0].dropped and not demo.frames[1].dropped


def test_determinism():
    noise = NoiseConfig(0.01, 0.2, 0.1, 1.0, 2.0)
    a = generate_demonstration(SORT, noise, 11)
    b = generate_demonstration(SORT, noise, 11)
    from cobotmimic.world import demo_to_jsonl
    assert demo_to_jsonl(a) == demo_to_jsonl(b)


def test_dropout_must_be_below_one():
    with pytest.raises(ValueError):
        NoiseConfig(dropout_prob=1.0)


def test_unreachable_scene_raises():
    far = TaskConfig(conveyor_lo=(0.9, -0.1, 0.1), conveyor_hi=(0.95, 0.0, 0.1),
                     bounds_hi=(1.2, 0.4, 0.55), frame_budget=(1, 200))
    with pytest.raises(GenerationError):
        generate_demonstration(far, NoiseConfig(), 0)


def test_jsonl_round_trip(tmp_path):
    demo = generate_demonstration(SORT, NoiseConfig(0.01, 0.3, 0.5), 6)
    # force a sentinel into the stream
    demo.frames[-1].obj_loc = SENTINEL.copy()
    p = tmp_path / "d.jsonl"
    save_demo(p, demo)
    assert '"neg_inf"' in p.read_text()
    back = load_demo(p)
    assert isinstance(back, Demonstration) and len(back) == len(demo)
    for f, g in zip(demo.frames, back.frames):
        assert np.array_equal(f.eef, g.eef) and np.array_equal(f.action, g.action)
        assert np.array_equal(f.obj_loc, g.obj_loc) and f.dropped == g.dropped
        if not f.dropped:
            assert np.array_equal(f.keypoints, g.keypoints)
        assert [d.centroid_3d for d in f.detections] == [d.centroid_3d for d in g.detections]
    assert back.metadata == demo.metadata


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"schema": "other"}\n')
    with pytest.raises(ValueError):
        load_demo(p)
