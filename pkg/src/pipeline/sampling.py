"""観測区間のサンプリングとリサイズ

観測フレームは TTC（τ_a）と同じ間隔で取り、最後のフレームが行動開始の τ_a 前に来る。
"""
import math
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from src.errors import DataError
from src.models import Box, ClipWindows
from src.pipeline.annotations import exact_fraction

DEFAULT_NUM_FRAMES = 10

Size = Union[int, Tuple[int, int]]


def _as_size(size: Size) -> Tuple[int, int]:
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    width, height = size
    return int(width), int(height)


def sample_frames(
    clip_fps: float,
    action_start_index: int,
    tau_a: float,
    num_frames: int = DEFAULT_NUM_FRAMES,
    clamp: bool = False,
    clip_id: Optional[int] = None,
) -> ClipWindows:
    """観測区間のフレーム番号を決める

    index_k = round(s − fps·τ_a·(num_frames − k))、k = 0..num_frames−1。
    端数 0.5 は切り上げる（有理数で厳密に計算する）。

    Args:
        clip_fps: クリップのフレームレート
        action_start_index: 行動開始フレーム s
        tau_a: TTC（秒）
        num_frames: サンプル数
        clamp: 履歴不足のとき先頭を 0 に詰めるか（False ならエラー）
        clip_id: エラーメッセージ用のクリップ番号

    Returns:
        ClipWindows

    Raises:
        ValueError: 引数の不正、間隔が1フレーム未満で番号が重複する
        DataError: 履歴不足（clamp=False のとき）
    """
    if clip_fps <= 0 or tau_a <= 0 or num_frames < 1:
        raise ValueError(f"Invalid sampling parameters: fps={clip_fps}, tau_a={tau_a}, num_frames={num_frames}")
    stride = exact_fraction(clip_fps) * exact_fraction(tau_a)
    half = Fraction(1, 2)
    raw = [math.floor(action_start_index - stride * (num_frames - k) + half) for k in range(num_frames)]

    clamped = False
    if raw[0] < 0:
        if not clamp:
            label = f"clip {clip_id}" if clip_id is not None else "clip"
            needed = math.floor(stride * num_frames + half)
            raise DataError(f"{label}: insufficient history for {num_frames} frames at tau_a={tau_a}s "
                            f"(action_start_index={action_start_index}, need >= {needed})")
        raw = [max(i, 0) for i in raw]
        clamped = True

    try:
        return ClipWindows(
            tau_o=num_frames * tau_a,
            tau_a=tau_a,
            tau_s=action_start_index / clip_fps,
            num_frames=num_frames,
            sampled_indices=tuple(raw),
            clamped=clamped,
        )
    except ValueError as e:
        raise ValueError(f"tau_a={tau_a}s is below one frame at {clip_fps} fps: {e}") from e


def rescale_box(box: Sequence[float], from_size: Size, to_size: Size) -> Box:
    """ボックスを別解像度の座標に写す（軸ごとの比率で拡大縮小）

    Args:
        box: 中心形式のボックス
        from_size: 元の (幅, 高さ)（int なら正方形）
        to_size: 先の (幅, 高さ)

    Returns:
        写したボックス（空の番兵は空のまま）
    """
    fw, fh = _as_size(from_size)
    tw, th = _as_size(to_size)
    if min(fw, fh, tw, th) <= 0:
        raise ValueError(f"Sizes must be positive: {from_size} -> {to_size}")
    if (fw, fh) == (tw, th):
        return tuple(float(v) for v in box)
    sx, sy = tw / fw, th / fh
    xc, yc, w, h = box
    return (xc * sx, yc * sy, w * sx, h * sy)


def resize_frame(frame: np.ndarray, size: Size) -> np.ndarray:
    """最近傍でフレームをリサイズする（同サイズなら複製を返す）"""
    width, height = _as_size(size)
    if frame.shape[1] == width and frame.shape[0] == height:
        return frame.copy()
    image = Image.fromarray(np.ascontiguousarray(frame, dtype=np.uint8))
    return np.asarray(image.resize((width, height), resample=Image.NEAREST), dtype=np.uint8).copy()
