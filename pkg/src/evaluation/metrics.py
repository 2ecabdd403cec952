"""IoU と AP

ボックスは中心形式 (x_c, y_c, w, h)。予測スロット k は真値スロット k とだけ対応する。
"""
from typing import List, Optional, Sequence

import numpy as np

from src.models import BoxPair, is_empty_box


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """2つのボックスの IoU（どちらかが空なら 0）"""
    if is_empty_box(a) or is_empty_box(b):
        return 0.0
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return float(min(max(inter / union, 0.0), 1.0))


def slot_ious(predictions: Sequence[BoxPair], targets: Sequence[BoxPair]) -> List[float]:
    """真値が有効な全スロットについて、同じスロットの予測との IoU を並べる"""
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions but {len(targets)} targets")
    values = []
    for pred, gt in zip(predictions, targets):
        for slot in np.flatnonzero(gt.valid):
            values.append(iou(pred.boxes[slot], gt.boxes[slot]) if pred.valid[slot] else 0.0)
    return values


def voc_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """適合率包絡の下の面積（再現率が変わる点で区分求積）"""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ap_at(
    predictions: Sequence[BoxPair],
    targets: Sequence[BoxPair],
    threshold: float,
    scores: Optional[Sequence[Sequence[float]]] = None,
) -> float:
    """IoU 閾値での AP

    scores がなければ、有効な真値スロットのうち IoU ≥ threshold の予測を持つ割合。
    scores（クリップごとにスロット2つ分）があれば、スコア順の適合率-再現率曲線の包絡面積。

    Raises:
        ValueError: 有効な真値スロットが1つもない
    """
    npos = int(sum(int(gt.valid.sum()) for gt in targets))
    if npos == 0:
        raise ValueError("AP is undefined without any valid ground-truth slot")
    if scores is None:
        values = slot_ious(predictions, targets)
        return sum(1 for v in values if v >= threshold) / npos

    if len(scores) != len(predictions) or len(targets) != len(predictions):
        raise ValueError("predictions, targets and scores must be aligned per clip")
    ranked = []
    for index, (pred, gt, score) in enumerate(zip(predictions, targets, scores)):
        for slot in np.flatnonzero(pred.valid):
            hit = bool(gt.valid[slot]) and iou(pred.boxes[slot], gt.boxes[slot]) >= threshold
            ranked.append((-float(score[slot]), index, int(slot), hit))
    if not ranked:
        return 0.0
    ranked.sort(key=lambda item: item[:3])
    hits = np.array([item[3] for item in ranked], dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / npos
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return voc_ap(recall, precision)
