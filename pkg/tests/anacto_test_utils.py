"""テスト向け共通ユーティリティ"""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from src.config import ModelConfig, OracleDetectorConfig, SceneConfig
from src.models import BoxPair, ClipWindows, DetectionSet, Sample

TINY_IMAGE = 16


def tiny_model_config(**overrides) -> ModelConfig:
    """数ミリ秒で順伝播できる大きさのモデル設定"""
    values = dict(
        image_size=TINY_IMAGE,
        patch_size=8,
        embed_dim=8,
        enc_layers=1,
        dec_layers=1,
        heads=2,
        mlp_ratio=2,
        num_categories=4,
        num_frames=3,
    )
    values.update(overrides)
    return ModelConfig(**values)


def tiny_scene_config(**overrides) -> SceneConfig:
    values = dict(num_objects=3, num_categories=4, clip_len=6.0, contact_time=5.0, release_time=4.0)
    values.update(overrides)
    return SceneConfig(**values)


def exact_detector() -> OracleDetectorConfig:
    """ノイズ・ドロップアウトなしの検出器"""
    return OracleDetectorConfig(center_noise_sigma=0.0, scale_noise_sigma=0.0, dropout_prob=0.0)


def random_box(rng: np.random.Generator, size: float) -> tuple:
    """フレーム [0, size]² に収まるランダムなボックス"""
    w, h = rng.uniform(2.0, size / 2, size=2)
    xc = rng.uniform(w / 2, size - w / 2)
    yc = rng.uniform(h / 2, size - h / 2)
    return (float(xc), float(yc), float(w), float(h))


def random_box_pair(rng: np.random.Generator, size: float, valid=(True, False)) -> BoxPair:
    slots = [random_box(rng, size) if v else None for v in valid]
    return BoxPair.from_slots(*slots)


def random_detections(rng: np.random.Generator, num_categories: int, size: float) -> DetectionSet:
    """半分ほどのスロットが埋まった DetectionSet"""
    detections = DetectionSet.empty(num_categories)
    for i in range(num_categories):
        if rng.random() < 0.5:
            detections.boxes[i] = random_box(rng, size)
            detections.scores[i] = rng.uniform(0.5, 1.0)
    return detections


def make_sample(
    config: ModelConfig,
    seed: int = 0,
    clip_id: int = 0,
    cao_valid: Optional[List[tuple]] = None,
    nao_valid: tuple = (True, False),
    hands: tuple = (True, True),
) -> Sample:
    """乱数で作ったモデル入力1件

    Args:
        config: モデル設定（image_size・num_frames・num_categories に合わせる）
        seed: 乱数 seed
        clip_id: クリップ番号
        cao_valid: フレームごとの接触物体スロットの有効フラグ（省略時は交互）
        nao_valid: NAO 真値のスロットの有効フラグ
        hands: 観測区間で検出された手のスロット
    """
    rng = np.random.default_rng(seed)
    count, size = config.num_frames, config.image_size
    if cao_valid is None:
        cao_valid = [(t % 2 == 0, False) for t in range(count)]
    frames = rng.integers(0, 256, size=(count, size, size, 3), dtype=np.uint8)
    detections = [random_detections(rng, config.num_categories, size) for _ in range(count)]
    cao = [random_box_pair(rng, size, valid) for valid in cao_valid]
    nao = random_box_pair(rng, size, nao_valid)
    windows = ClipWindows(
        tau_o=count * 0.25,
        tau_a=0.25,
        tau_s=(count + 1) * 0.25,
        num_frames=count,
        sampled_indices=tuple(range(count)),
    )
    return Sample(
        clip_id=clip_id,
        frames=frames,
        detections=detections,
        cao=cao,
        nao=nao,
        image_size=size,
        windows=windows,
        target_category=0,
        hands=hands,
    )


def make_samples(config: ModelConfig, count: int, seed: int = 0) -> List[Sample]:
    return [make_sample(config, seed=seed + i, clip_id=i) for i in range(count)]


class FixedPredictor:
    """クリップ番号ごとに決めた予測を返す評価用モデル"""
    kind = 'fixed'

    def __init__(self, predictions: dict):
        self.predictions = predictions

    def predict_nao(self, sample: Sample) -> BoxPair:
        return self.predictions[sample.clip_id]
