"""合成世界（描画・オラクル検出器・クリップ生成・保存）のテスト"""
from __future__ import annotations

import numpy as np
import pytest

from src.config import OracleDetectorConfig, SceneConfig
from src.evaluation.metrics import iou
from src.models import FrameTruth, ObjectTruth
from src.pipeline.annotations import curate_nao_gt
from src.world.detector import oracle_detect, perturb_box
from src.world.render import BACKGROUND, SceneState, category_color, render_frame
from src.world.scene import generate_clip, generate_clips
from src.world.storage import load_dataset, read_clip, write_clip, write_dataset
from tests.anacto_test_utils import exact_detector, tiny_scene_config


def _truth(*objects) -> FrameTruth:
    return FrameTruth(frame_index=0, camera_origin=(0.0, 0.0),
                      objects=[ObjectTruth(category=c, box=b) for c, b in objects])


def test_render_empty_scene_is_background():
    frame = render_frame(SceneState(camera_origin=(10.0, 10.0), camera_size=(32, 32)))
    assert frame.shape == (32, 32, 3)
    assert frame.dtype == np.uint8
    assert np.all(frame == np.array(BACKGROUND, dtype=np.uint8))


def test_render_object_at_camera_center():
    state = SceneState(camera_origin=(20.0, 30.0), camera_size=(32, 32), objects=[(2, (36.0, 46.0, 6.0, 6.0))])
    frame = render_frame(state)
    np.testing.assert_array_equal(frame[16, 16], category_color(2))
    np.testing.assert_array_equal(frame[13, 13], category_color(2))
    np.testing.assert_array_equal(frame[0, 0], BACKGROUND)


def test_render_camera_shift_translates_scene():
    objects = [(1, (40.0, 40.0, 8.0, 6.0)), (4, (52.0, 35.0, 5.0, 9.0))]
    hands = [((45.0, 50.0), 3.0)]
    shift = 3
    base = render_frame(SceneState(camera_origin=(20.0, 20.0), camera_size=(32, 32), objects=objects, hands=hands))
    moved = render_frame(SceneState(camera_origin=(20.0 + shift, 20.0), camera_size=(32, 32),
                                    objects=objects, hands=hands))
    np.testing.assert_array_equal(moved[:, :32 - shift], base[:, shift:])


def test_oracle_detect_zero_noise_reproduces_truth():
    config = exact_detector()
    truth = _truth((0, (10.0, 12.0, 6.0, 4.0)), (3, (20.0, 8.0, 5.0, 5.0)))
    detections = oracle_detect(truth, config, num_categories=4, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(detections.boxes[0], [10.0, 12.0, 6.0, 4.0])
    np.testing.assert_array_equal(detections.boxes[3], [20.0, 8.0, 5.0, 5.0])
    assert detections.scores[0] == 1.0 - config.epsilon
    assert detections.scores[3] == 1.0 - config.epsilon
    assert detections.is_empty(1) and detections.is_empty(2)


def test_oracle_detect_full_dropout_is_empty():
    config = OracleDetectorConfig(dropout_prob=1.0)
    truth = _truth((0, (10.0, 12.0, 6.0, 4.0)), (1, (20.0, 8.0, 5.0, 5.0)))
    detections = oracle_detect(truth, config, num_categories=8, rng=np.random.default_rng(1))
    assert np.all(detections.scores == 0.0)
    assert np.all(detections.boxes == 0.0)


def test_oracle_detect_keeps_most_confident_instance():
    config = OracleDetectorConfig(center_noise_sigma=2.0, scale_noise_sigma=0.0, dropout_prob=0.0)
    truth = _truth((2, (10.0, 10.0, 6.0, 6.0)), (2, (24.0, 24.0, 6.0, 6.0)))
    detections = oracle_detect(truth, config, num_categories=4, rng=np.random.default_rng(2))
    assert 0.0 < detections.scores[2] < 1.0
    assert sum(1 for i in range(4) if not detections.is_empty(i)) == 1


def test_center_noise_matches_gaussian_mean():
    config = OracleDetectorConfig(center_noise_sigma=2.0, scale_noise_sigma=0.0, dropout_prob=0.0)
    rng = np.random.default_rng(3)
    box = (50.0, 50.0, 10.0, 10.0)
    errors = []
    for _ in range(1000):
        noisy, confidence = perturb_box(box, config, rng)
        assert 0.0 < confidence < 1.0
        errors.extend([abs(noisy[0] - box[0]), abs(noisy[1] - box[1])])
    # 軸ごとの |dx| の平均は σ√(2/π) ≈ 1.596
    assert 1.4 <= float(np.mean(errors)) <= 1.8


def test_generate_clip_is_deterministic():
    config = tiny_scene_config(seed=5)
    a = generate_clip(config, clip_id=2)
    b = generate_clip(config, clip_id=2)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert a.meta() == b.meta()
    assert [r.to_dict() for r in a.annotations] == [r.to_dict() for r in b.annotations]

    other = generate_clip(config, clip_id=3)
    assert other.frames.tobytes() != a.frames.tobytes()


def test_generated_clip_contact_contract():
    config = tiny_scene_config(seed=1, num_hands=2)
    for clip in generate_clips(config, 4):
        start = clip.action_start_index
        assert clip.frames.shape == (config.num_frames, config.camera_size, config.camera_size, 3)
        assert start == config.action_start_index

        right = [h for h in clip.truth[start].hands if h.side == 'right'][0]
        target_box = clip.truth[start].object_box(clip.target_category)
        assert target_box is not None
        assert iou(right.box, target_box) > 0

        for frame in clip.truth[start:]:
            contacts = [h.contact_category for h in frame.hands if h.side == 'right']
            assert contacts == [clip.target_category]
            for hand in frame.hands:
                if hand.side == 'left':
                    assert hand.contact_category is None

        for frame in clip.truth:
            for obj in frame.objects:
                xc, yc, w, h = obj.box
                assert xc - w / 2 >= -1e-9 and xc + w / 2 <= config.camera_size + 1e-9
                assert yc - h / 2 >= -1e-9 and yc + h / 2 <= config.camera_size + 1e-9


def test_infeasible_geometry_is_rejected():
    with pytest.raises(ValueError, match="Infeasible"):
        generate_clip(SceneConfig(arena_size=40, camera_size=32, object_size_min=30, object_size_max=40))
    with pytest.raises(ValueError):
        generate_clip(SceneConfig(contact_time=20.0))


def test_target_present_in_lookup_window():
    config = SceneConfig(seed=11)
    clips = generate_clips(config, 40)
    present = sum(1 for clip in clips if curate_nao_gt(clip.annotations, clip.action_start_index) is not None)
    assert present / len(clips) >= 0.9


@pytest.mark.slow
def test_target_presence_over_500_clips():
    config = SceneConfig(seed=0)
    clips = generate_clips(config, 500)
    present = sum(1 for clip in clips if curate_nao_gt(clip.annotations, clip.action_start_index) is not None)
    assert present / len(clips) >= 0.9


def test_clip_directory_round_trip(tmp_path):
    clip = generate_clip(tiny_scene_config(seed=3), clip_id=7)
    clip_dir = write_clip(clip, str(tmp_path))
    assert clip_dir.name == 'clip_0007'
    assert (clip_dir / 'frame_0000.ppm').read_bytes().startswith(b'P6')

    loaded = read_clip(str(clip_dir))
    np.testing.assert_array_equal(loaded.frames, clip.frames)
    assert loaded.meta() == clip.meta()
    assert [r.to_dict() for r in loaded.annotations] == [r.to_dict() for r in clip.annotations]


def test_dataset_written_twice_is_byte_identical(tmp_path):
    config = tiny_scene_config(seed=9)
    write_dataset(generate_clips(config, 2), str(tmp_path / 'a'))
    write_dataset(generate_clips(config, 2), str(tmp_path / 'b'))
    files_a = sorted(p.relative_to(tmp_path / 'a') for p in (tmp_path / 'a').rglob('*') if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / 'b') for p in (tmp_path / 'b').rglob('*') if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes()
    assert [c.clip_id for c in load_dataset(str(tmp_path / 'a'))] == [0, 1]
