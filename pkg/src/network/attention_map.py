"""空間注意マップ

エンコーダ各層の注意重み（ヘッド平均）に残差分の単位行列を混ぜ、行正規化してから
層の順に行列積で合成する（ロールアウト）。[cls] 行のパッチ成分をグリッドに並べたものが
フレームの注意マップ。
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from loguru import logger

from src.models import DetectionSet, Sample
from src.network.encoder import FrameEncoder
from src.world.storage import write_ppm

RESIDUAL_MIX = 0.5


@dataclass
class AttentionMap:
    """1フレームの注意マップ

    Attributes:
        grid: (g, g) のロールアウト値（非負）
        layer_rows: 層ごとの [cls] 行（ヘッド平均、長さ P+1、和が 1）
    """
    grid: np.ndarray
    layer_rows: List[np.ndarray]

    def to_dict(self) -> dict:
        return {
            'grid': self.grid.tolist(),
            'layer_rows': [row.tolist() for row in self.layer_rows],
        }


def rollout(layer_weights: List[np.ndarray]) -> np.ndarray:
    """(L, L) の層別注意重みを入力側から順に合成する"""
    length = layer_weights[0].shape[-1]
    identity = np.eye(length)
    joint = identity
    for weights in layer_weights:
        mixed = RESIDUAL_MIX * weights + (1.0 - RESIDUAL_MIX) * identity
        mixed = mixed / mixed.sum(axis=-1, keepdims=True)
        joint = mixed @ joint
    return joint


def _encoder_of(model) -> FrameEncoder:
    encoder = model if isinstance(model, FrameEncoder) else getattr(model, 'encoder', None)
    if not isinstance(encoder, FrameEncoder):
        kind = getattr(model, 'kind', type(model).__name__)
        raise ValueError(f"Model '{kind}' has no attention encoder to extract maps from")
    return encoder


def spatial_attention_map(model, frame: np.ndarray, detections: DetectionSet = None) -> AttentionMap:
    """1フレームの注意マップを求める

    Args:
        model: AnactoModel（tanacto / recurrent）または FrameEncoder
        frame: (S, S, 3) uint8
        detections: 受け取るが注意には影響しない（検出融合は [cls] 出力の後段）

    Returns:
        AttentionMap

    Raises:
        ValueError: 注意エンコーダを持たないモデル（framewise）
    """
    encoder = _encoder_of(model)
    _, weights = encoder.backbone(np.asarray(frame)[None], return_attention=True)
    per_layer = [w[0].mean(axis=0) for w in weights]
    joint = rollout(per_layer)
    grid_size = encoder.config.grid
    grid = joint[0, 1:].reshape(grid_size, grid_size)
    return AttentionMap(grid=grid, layer_rows=[w[0] for w in per_layer])


def grid_to_raster(grid: np.ndarray, image_size: int) -> np.ndarray:
    """グリッドを [0, 255] に伸ばし、最近傍で image_size に拡大する"""
    peak = float(grid.max())
    scaled = grid / peak if peak > 0 else np.zeros_like(grid)
    levels = np.round(scaled * 255.0).astype(np.uint8)
    factor = image_size // grid.shape[0]
    return np.repeat(np.repeat(levels, factor, axis=0), factor, axis=1)


def export_attention_maps(model, sample: Sample, out_dir: str) -> List[Path]:
    """サンプルの各フレームについて P5 画像と JSON グリッドを書き出す

    Returns:
        書き出した P5 ファイルのパス
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t, (frame, det) in enumerate(zip(sample.frames, sample.detections)):
        attention = spatial_attention_map(model, frame, det)
        stem = f"attn_{t:02d}"
        raster_path = out / f"{stem}.pgm"
        write_ppm(raster_path, grid_to_raster(attention.grid, sample.image_size))
        with open(out / f"{stem}.json", 'w', encoding='utf-8') as f:
            json.dump({'clip_id': sample.clip_id, 'frame': sample.windows.sampled_indices[t],
                       **attention.to_dict()}, f, indent=2)
        written.append(raster_path)
    logger.info(f"Wrote {len(written)} attention maps for clip {sample.clip_id} to {out}")
    return written
