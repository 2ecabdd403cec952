"""フレーム描画

背景は単色、物体はカテゴリ色の塗りつぶし矩形、手は肌色の円。
ピクセル (i, j) はその中心 (j+0.5, i+0.5) が図形に含まれるとき塗られる。
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from src.models import Box

BACKGROUND = (48, 48, 48)
HAND_COLOR = (214, 160, 128)
# カテゴリ 0..7 の色（固定）
CATEGORY_PALETTE = (
    (220, 40, 40),
    (40, 180, 60),
    (50, 90, 220),
    (230, 210, 40),
    (200, 60, 200),
    (40, 200, 210),
    (240, 140, 30),
    (235, 235, 235),
)


def category_color(category: int) -> Tuple[int, int, int]:
    return CATEGORY_PALETTE[category % len(CATEGORY_PALETTE)]


@dataclass
class SceneState:
    """描画対象の1時刻分の状態（アリーナ座標）

    Attributes:
        camera_origin: カメラ窓の左上 (x, y)
        camera_size: カメラ窓の (幅, 高さ)
        objects: (カテゴリ, 中心形式ボックス) のリスト。後のものが上に描かれる
        hands: (中心 (x, y), 半径) のリスト。物体より上に描かれる
    """
    camera_origin: Tuple[float, float]
    camera_size: Tuple[int, int]
    objects: List[Tuple[int, Box]] = field(default_factory=list)
    hands: List[Tuple[Tuple[float, float], float]] = field(default_factory=list)


def render_frame(state: SceneState) -> np.ndarray:
    """カメラ窓で切り出したフレームを描画する

    Args:
        state: シーン状態

    Returns:
        (高さ, 幅, 3) の uint8 配列
    """
    width, height = state.camera_size
    ox, oy = state.camera_origin
    frame = np.empty((height, width, 3), dtype=np.uint8)
    frame[:] = BACKGROUND

    xs = np.arange(width) + 0.5 + ox
    ys = np.arange(height) + 0.5 + oy

    for category, (xc, yc, w, h) in state.objects:
        in_x = (xs >= xc - w / 2) & (xs < xc + w / 2)
        in_y = (ys >= yc - h / 2) & (ys < yc + h / 2)
        if in_x.any() and in_y.any():
            frame[np.ix_(in_y, in_x)] = category_color(category)

    for (hx, hy), radius in state.hands:
        dist2 = (xs[None, :] - hx) ** 2 + (ys[:, None] - hy) ** 2
        frame[dist2 <= radius * radius] = HAND_COLOR

    return frame
