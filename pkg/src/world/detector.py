"""オラクル物体検出器

真値ボックスに中心ノイズ（ガウス）と倍率ノイズ（対数正規）を加え、
ノイズの大きさから決まる確信度を付ける。事前学習済み検出器の代わりに使う。
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import OracleDetectorConfig, SceneConfig
from src.models import (
    ActiveObject,
    AnnotationRecord,
    Box,
    DetectionSet,
    FrameTruth,
    HandRecord,
    ObjectRecord,
    clamp_box,
)

MIN_CONFIDENCE = 1e-6


def detection_confidence(box: Sequence[float], noisy: Sequence[float], config: OracleDetectorConfig) -> float:
    """ノイズの大きさ → (0, 1) の確信度

    ノイズ 0 で 1−ε、誤差が confidence_scale_px 増えるごとに 1/e 倍。
    """
    center_error = float(np.hypot(noisy[0] - box[0], noisy[1] - box[1]))
    size_error = 0.5 * (abs(noisy[2] - box[2]) + abs(noisy[3] - box[3]))
    confidence = (1.0 - config.epsilon) * np.exp(-(center_error + size_error) / config.confidence_scale_px)
    return float(max(confidence, MIN_CONFIDENCE))


def perturb_box(
    box: Box,
    config: OracleDetectorConfig,
    rng: np.random.Generator,
    frame_size: Optional[Tuple[int, int]] = None,
) -> Optional[Tuple[Box, float]]:
    """1つのボックスを検出する（ドロップアウト時は None）

    乱数は結果によらず毎回同じ個数だけ消費する。
    """
    dropped = rng.random() < config.dropout_prob
    dx, dy = rng.normal(0.0, config.center_noise_sigma, size=2)
    sw, sh = np.exp(rng.normal(0.0, config.scale_noise_sigma, size=2))
    if dropped:
        return None

    noisy = (box[0] + dx, box[1] + dy, box[2] * sw, box[3] * sh)
    if frame_size is not None:
        noisy = clamp_box(noisy, *frame_size)
        if noisy is None:
            return None
    noisy = tuple(float(v) for v in noisy)
    return noisy, detection_confidence(box, noisy, config)


def oracle_detect(
    frame_truth: FrameTruth,
    config: OracleDetectorConfig,
    num_categories: int = 8,
    rng: Optional[np.random.Generator] = None,
    frame_size: Optional[Tuple[int, int]] = None,
) -> DetectionSet:
    """フレームの真値からカテゴリ別の検出結果を作る

    同じカテゴリの物体が複数あるときは確信度が最も高い検出を採用する。

    Args:
        frame_truth: フレームの真値
        config: 検出器設定
        num_categories: カテゴリ数 N（スロット数）
        rng: 乱数生成器（None なら固定 seed）
        frame_size: (幅, 高さ)。指定時は検出ボックスをフレーム内にクランプする

    Returns:
        N スロットの DetectionSet
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    detections = DetectionSet.empty(num_categories)
    for obj in frame_truth.objects:
        if not 0 <= obj.category < num_categories:
            raise ValueError(f"Category {obj.category} out of range for N={num_categories}")
        result = perturb_box(obj.box, config, rng, frame_size)
        if result is None:
            continue
        noisy, confidence = result
        if confidence > detections.scores[obj.category]:
            detections.boxes[obj.category] = noisy
            detections.scores[obj.category] = confidence
    return detections


def build_annotations(
    truth: List[FrameTruth],
    scene: SceneConfig,
    config: OracleDetectorConfig,
    rng: np.random.Generator,
) -> List[AnnotationRecord]:
    """真値から annotations.jsonl 相当のレコード列を作る

    手と物体はオラクル検出器の出力、接触物体は真値ボックス。
    annotation_miss_prob の確率でそのフレームの手・物体の接触を取りこぼす。
    """
    frame_size = (scene.camera_size, scene.camera_size)
    records = []
    for frame in truth:
        detections = oracle_detect(frame, config, scene.num_categories, rng, frame_size)
        missed = rng.random() < scene.annotation_miss_prob

        hands = []
        active_objects = []
        for hand in frame.hands:
            result = perturb_box(hand.box, config, rng, frame_size)
            in_contact = hand.contact_category is not None and not missed
            if in_contact:
                box = frame.object_box(hand.contact_category)
                if box is not None:
                    active_objects.append(ActiveObject(box=box, category=hand.contact_category, side=hand.side))
            if result is None:
                continue
            box, score = result
            hands.append(HandRecord(box=box, score=score, side=hand.side, contact_state=in_contact))

        records.append(AnnotationRecord(
            frame_index=frame.frame_index,
            hands=hands,
            objects=[ObjectRecord(category=o.category, box=o.box, score=o.score)
                     for o in detections.to_objects()],
            active_objects=active_objects,
        ))
    return records
