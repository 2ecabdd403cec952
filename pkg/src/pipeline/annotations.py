"""アノテーション整形

フレームレートの正規化（ボックスは線形補間、真偽値は最近傍）、信頼度による閾値処理、
ルックアップ窓による次接触物体（NAO）の真値抽出。
"""
import bisect
import math
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.errors import DataError
from src.models import (
    ActiveObject,
    AnnotationRecord,
    BoxPair,
    DetectionSet,
    HandRecord,
    ObjectRecord,
    is_empty_box,
)

DEFAULT_TARGET_FPS = 30
MIN_SCORE = 0.5
LOOKUP_FRAMES = 10


def exact_fraction(value) -> Fraction:
    """10進表記どおりの有理数（29.97 → 2997/100）"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(repr(float(value)))


class _Track:
    """1つのトラック（同じ手・同じカテゴリ）の出現フレーム列"""

    def __init__(self):
        self.indices: List[int] = []
        self.items: list = []

    def add(self, index: int, item):
        self.indices.append(index)
        self.items.append(item)

    def interpolate(self, position: Fraction) -> Tuple[Tuple[float, ...], float]:
        """position を挟む2フレームのボックスとスコアを線形補間する"""
        right = bisect.bisect_left(self.indices, position)
        if right < len(self.indices) and self.indices[right] == position:
            item = self.items[right]
            return item.box, getattr(item, 'score', 1.0)
        left = right - 1
        if left < 0:
            item = self.items[0]
            return item.box, getattr(item, 'score', 1.0)
        if right >= len(self.indices):
            item = self.items[-1]
            return item.box, getattr(item, 'score', 1.0)
        i0, i1 = self.indices[left], self.indices[right]
        a, b = self.items[left], self.items[right]
        weight = float((position - i0) / (i1 - i0))
        box = tuple(float(x0 + weight * (x1 - x0)) for x0, x1 in zip(a.box, b.box))
        s0, s1 = getattr(a, 'score', 1.0), getattr(b, 'score', 1.0)
        return box, float(s0 + weight * (s1 - s0))


def _collect_tracks(records: Sequence[AnnotationRecord]) -> Dict[tuple, _Track]:
    tracks: Dict[tuple, _Track] = {}
    for record in records:
        for hand in record.hands:
            tracks.setdefault(('hand', hand.side), _Track()).add(record.frame_index, hand)
        for obj in record.objects:
            tracks.setdefault(('object', obj.category), _Track()).add(record.frame_index, obj)
        for active in record.active_objects:
            tracks.setdefault(('active', active.side, active.category), _Track()).add(record.frame_index, active)
    return tracks


def _nearest(indices: List[int], position: Fraction) -> int:
    """最も近いフレームの位置（等距離なら前のフレーム）"""
    right = bisect.bisect_left(indices, position)
    if right == 0:
        return 0
    if right >= len(indices):
        return len(indices) - 1
    left = right - 1
    if position - indices[left] <= indices[right] - position:
        return left
    return right


def normalize_fps(
    records: Sequence[AnnotationRecord],
    src_fps: float,
    dst_fps: float = DEFAULT_TARGET_FPS,
) -> List[AnnotationRecord]:
    """アノテーション列を一定のフレームレートに変換する

    出力フレーム j の時刻は j/dst_fps。トラックの有無と真偽値（接触状態）は最も近い
    元フレームから写し、ボックスとスコアは同じトラックを持つ前後2フレームから線形補間する。

    Args:
        records: frame_index 昇順のレコード列
        src_fps: 元のフレームレート
        dst_fps: 変換後のフレームレート

    Returns:
        変換後のレコード列（src_fps == dst_fps なら入力と同じ内容）

    Raises:
        ValueError: fps が正でない、frame_index が昇順でない
        DataError: レコード列が空
    """
    if src_fps <= 0 or dst_fps <= 0:
        raise ValueError(f"fps must be > 0 (src={src_fps}, dst={dst_fps})")
    records = list(records)
    if not records:
        raise DataError("Cannot normalize an empty annotation stream")
    indices = [r.frame_index for r in records]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValueError("records must be sorted by strictly increasing frame_index")

    src, dst = exact_fraction(src_fps), exact_fraction(dst_fps)
    if src == dst:
        return records

    ratio = src / dst
    tracks = _collect_tracks(records)
    first_out = math.ceil(Fraction(indices[0]) / ratio)
    last_out = math.floor(Fraction(indices[-1]) / ratio)

    output = []
    for j in range(first_out, last_out + 1):
        position = j * ratio
        nearest = records[_nearest(indices, position)]
        hands = []
        for hand in nearest.hands:
            box, score = tracks[('hand', hand.side)].interpolate(position)
            hands.append(HandRecord(box=box, score=score, side=hand.side, contact_state=hand.contact_state))
        objects = []
        for obj in nearest.objects:
            box, score = tracks[('object', obj.category)].interpolate(position)
            objects.append(ObjectRecord(category=obj.category, box=box, score=score))
        active_objects = []
        for active in nearest.active_objects:
            box, _ = tracks[('active', active.side, active.category)].interpolate(position)
            active_objects.append(ActiveObject(box=box, category=active.category, side=active.side))
        output.append(AnnotationRecord(frame_index=j, hands=hands, objects=objects, active_objects=active_objects))
    return output


def threshold_detections(detections: DetectionSet, min_score: float = MIN_SCORE) -> DetectionSet:
    """スコアが min_score 未満のスロットを空にする（min_score ちょうどは残す）"""
    boxes = detections.boxes.copy()
    scores = detections.scores.copy()
    drop = scores < min_score
    boxes[drop] = 0.0
    scores[drop] = 0.0
    return DetectionSet(boxes, scores)


def threshold_record(record: AnnotationRecord, min_score: float = MIN_SCORE) -> AnnotationRecord:
    """手と物体の検出に閾値を適用する（接触物体はそのまま）"""
    return AnnotationRecord(
        frame_index=record.frame_index,
        hands=[h for h in record.hands if h.score >= min_score],
        objects=[o for o in record.objects if o.score >= min_score],
        active_objects=list(record.active_objects),
    )


def records_by_index(records: Iterable[AnnotationRecord]) -> Dict[int, AnnotationRecord]:
    return {r.frame_index: r for r in records}


def curate_nao_gt(
    records: Sequence[AnnotationRecord],
    action_start_index: int,
    lookup: int = LOOKUP_FRAMES,
) -> Optional[BoxPair]:
    """行動開始からの窓 [s, s+lookup) で最初に接触物体を持つフレームのボックスを返す

    Args:
        records: アノテーション列
        action_start_index: 行動開始フレーム s
        lookup: 窓のフレーム数

    Returns:
        手のスロットに並べた BoxPair。窓内に接触物体がなければ None
    """
    if lookup < 1:
        raise ValueError(f"lookup must be >= 1, got {lookup}")
    by_index = records_by_index(records)
    for k in range(action_start_index, action_start_index + lookup):
        record = by_index.get(k)
        if record is None:
            continue
        if any(not is_empty_box(a.box) for a in record.active_objects):
            return record.active_box_pair()
    return None
