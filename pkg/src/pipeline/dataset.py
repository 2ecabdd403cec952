"""モデル入力の組み立て

クリップから観測フレームをサンプルし、検出・接触物体・NAO 真値をモデル入力解像度に
写して Sample を作る。NAO 真値がないクリップは除外して件数を記録する。
"""
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from src.config import AnnotationConfig
from src.models import HAND_SLOTS, AnnotationRecord, BoxPair, ClipRecord, DetectionSet, Sample
from src.pipeline.annotations import (
    curate_nao_gt,
    records_by_index,
    threshold_detections,
)
from src.pipeline.sampling import rescale_box, resize_frame, sample_frames

TargetMode = Literal['contact', 'last_observed']


@dataclass
class SampleStats:
    """サンプル組み立ての集計"""
    total: int = 0
    excluded_ids: List[int] = field(default_factory=list)

    @property
    def kept(self) -> int:
        return self.total - len(self.excluded_ids)

    @property
    def presence_rate(self) -> float:
        return self.kept / self.total if self.total else 0.0


def _rescale_pair(pair: BoxPair, native_size, image_size: int) -> BoxPair:
    boxes = [rescale_box(pair.boxes[slot], native_size, image_size) if pair.valid[slot] else None
             for slot in range(2)]
    return BoxPair.from_slots(*boxes)


def observed_hands(records: Sequence[Optional[AnnotationRecord]], min_score: float = 0.5) -> Tuple[bool, bool]:
    """観測フレームで閾値以上の手が1度でも検出されたスロット

    どの手も検出されなければ両スロットを有効のままにする。
    """
    seen = [False, False]
    for record in records:
        if record is None:
            continue
        for hand in record.hands:
            if hand.score >= min_score:
                seen[HAND_SLOTS[hand.side]] = True
    if not any(seen):
        return (True, True)
    return (seen[0], seen[1])


def _rescale_detections(detections: DetectionSet, native_size, image_size: int) -> DetectionSet:
    boxes = detections.boxes.copy()
    for i in range(detections.num_categories):
        if not detections.is_empty(i):
            boxes[i] = rescale_box(boxes[i], native_size, image_size)
    return DetectionSet(boxes, detections.scores.copy())


def nao_target(
    clip: ClipRecord,
    sampled_indices: Sequence[int],
    target: TargetMode = 'contact',
    lookup: int = 10,
) -> Optional[BoxPair]:
    """NAO の真値（ネイティブ解像度）

    contact: 行動開始からのルックアップ窓で最初に見つかった接触物体。
    last_observed: 最後の観測フレームでの対象物体のボックス（右手スロット）。
    """
    if target == 'contact':
        return curate_nao_gt(clip.annotations, clip.action_start_index, lookup)
    if target == 'last_observed':
        last = sampled_indices[-1]
        if last >= len(clip.truth):
            return None
        box = clip.truth[last].object_box(clip.target_category)
        return BoxPair.from_slots(box) if box is not None else None
    raise ValueError(f"Unknown target mode: {target}")


def build_sample(
    clip: ClipRecord,
    image_size: int,
    num_categories: int,
    tau_a: float,
    num_frames: int = 10,
    annotation: Optional[AnnotationConfig] = None,
    target: TargetMode = 'contact',
    clamp: bool = False,
) -> Optional[Sample]:
    """クリップ1本から Sample を作る

    Args:
        clip: クリップ
        image_size: モデル入力の一辺
        num_categories: カテゴリ数 N
        tau_a: TTC（秒）
        num_frames: 観測フレーム数
        annotation: 閾値・ルックアップ窓の設定
        target: NAO 真値の取り方
        clamp: 履歴不足のとき先頭フレームを詰めるか

    Returns:
        Sample。NAO 真値がなければ None

    Raises:
        DataError: 履歴不足（clamp=False のとき）
    """
    annotation = annotation or AnnotationConfig()
    windows = sample_frames(clip.fps, clip.action_start_index, tau_a, num_frames, clamp=clamp, clip_id=clip.clip_id)
    nao = nao_target(clip, windows.sampled_indices, target, annotation.lookup)
    if nao is None or not nao.any_valid():
        return None

    by_index = records_by_index(clip.annotations)
    frames = []
    detections = []
    cao = []
    records = [by_index.get(index) for index in windows.sampled_indices]
    for index, record in zip(windows.sampled_indices, records):
        frames.append(resize_frame(clip.frames[index], image_size))
        if record is None:
            detections.append(DetectionSet.empty(num_categories))
            cao.append(BoxPair.empty())
            continue
        raw = threshold_detections(DetectionSet.from_objects(record.objects, num_categories), annotation.min_score)
        detections.append(_rescale_detections(raw, clip.native_size, image_size))
        cao.append(_rescale_pair(record.active_box_pair(), clip.native_size, image_size))

    return Sample(
        clip_id=clip.clip_id,
        frames=np.stack(frames),
        detections=detections,
        cao=cao,
        nao=_rescale_pair(nao, clip.native_size, image_size),
        image_size=image_size,
        windows=windows,
        target_category=clip.target_category,
        hands=observed_hands(records, annotation.min_score),
    )


def build_samples(
    clips: Sequence[ClipRecord],
    image_size: int,
    num_categories: int,
    tau_a: float,
    num_frames: int = 10,
    annotation: Optional[AnnotationConfig] = None,
    target: TargetMode = 'contact',
    clamp: bool = False,
):
    """クリップ列から Sample 列を作る

    Returns:
        (Sample のリスト, SampleStats)
    """
    samples = []
    stats = SampleStats()
    for clip in clips:
        stats.total += 1
        sample = build_sample(clip, image_size, num_categories, tau_a, num_frames, annotation, target, clamp)
        if sample is None:
            stats.excluded_ids.append(clip.clip_id)
            logger.debug(f"Clip {clip.clip_id}: no NAO ground truth, excluded")
            continue
        samples.append(sample)

    logger.info(f"NAO ground truth present in {stats.kept}/{stats.total} clips "
                f"({stats.presence_rate:.1%}, target={target}, tau_a={tau_a}s)")
    return samples, stats
