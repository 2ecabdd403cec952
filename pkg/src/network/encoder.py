"""T-ANACTO エンコーダ

フレームをパッチに分割し、[cls] トークンと空間位置埋め込みを付けてプレノルムの
ブロックに通す。[cls] の出力に検出ベクトル（N×5）の MLP 出力を足したものがフレーム埋め込み z_t。
"""
from typing import Sequence, Tuple

import numpy as np

from src.config import ModelConfig
from src.models import DetectionSet
from src.network.layers import AttentionBlock, FeedForward, LayerNorm, Linear
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tensor, concat, reshape

PIXEL_SCALE = 255.0


def patchify(frame: np.ndarray, patch_size: int) -> np.ndarray:
    """フレームを重なりのないパッチ列にする

    Args:
        frame: (H, W, C) または (T, H, W, C)
        patch_size: パッチの一辺

    Returns:
        (P, p·p·C) または (T, P, p·p·C)。パッチは行優先、パッチ内はチャネルが最後

    Raises:
        ValueError: H, W がパッチサイズで割り切れない
    """
    frame = np.asarray(frame)
    batched = frame.ndim == 4
    if not batched:
        frame = frame[None]
    count, height, width, channels = frame.shape
    if patch_size <= 0 or height % patch_size or width % patch_size:
        raise ValueError(f"Frame {height}x{width} is not divisible by patch_size={patch_size}")
    rows, cols = height // patch_size, width // patch_size
    patches = frame.reshape(count, rows, patch_size, cols, patch_size, channels)
    patches = patches.transpose(0, 1, 3, 2, 4, 5).reshape(count, rows * cols, patch_size * patch_size * channels)
    return patches if batched else patches[0]


def unpatchify(patches: np.ndarray, image_size: Tuple[int, int], patch_size: int, channels: int = 3) -> np.ndarray:
    """patchify の逆変換（(P, p·p·C) → (H, W, C)）"""
    height, width = image_size
    rows, cols = height // patch_size, width // patch_size
    frame = np.asarray(patches).reshape(rows, cols, patch_size, patch_size, channels)
    return frame.transpose(0, 2, 1, 3, 4).reshape(height, width, channels)


def detection_matrix(detections: Sequence[DetectionSet], num_categories: int, image_size: int) -> np.ndarray:
    """検出を (T, N×5) に並べる（ボックスは image_size で正規化）

    Raises:
        ValueError: スロット数が N と異なる
    """
    rows = []
    for t, det in enumerate(detections):
        if det.num_categories != num_categories:
            raise ValueError(f"Frame {t}: detection has {det.num_categories} slots, expected {num_categories}")
        values = np.concatenate([det.boxes / float(image_size), det.scores[:, None]], axis=1)
        rows.append(values.reshape(-1))
    return np.stack(rows)


class DetectionFusion:
    """f_MLP: 検出ベクトル (N×5) → 埋め込み次元"""

    def __init__(self, store: ParameterStore, name: str, config: ModelConfig):
        self.mlp = FeedForward(store, name, config.det_dim, config.embed_dim, config.embed_dim)

    def __call__(self, det: np.ndarray) -> Tensor:
        return self.mlp(Tensor(det))


class FrameEncoder:
    """ViT 型のフレームエンコーダと検出融合"""

    def __init__(self, store: ParameterStore, config: ModelConfig, name: str = 'encoder', temporal: bool = True):
        self.config = config
        width = config.embed_dim
        self.patch_embed = Linear(store, f"{name}.patch_embed", config.patch_dim, width)
        self.cls_token = store.embedding(f"{name}.cls_token", (1, width))
        self.pos_embed = store.embedding(f"{name}.pos_embed", (config.num_patches + 1, width))
        self.blocks = [AttentionBlock(store, f"{name}.block{i}", width, config.heads, config.mlp_ratio)
                       for i in range(config.enc_layers)]
        self.ln_f = LayerNorm(store, f"{name}.ln_f", width)
        self.fusion = DetectionFusion(store, f"{name}.det_mlp", config)
        self.fuse_proj = None
        if config.fusion_mode == 'concat_project':
            self.fuse_proj = Linear(store, f"{name}.fuse_proj", 2 * width, width)
        self.temporal_embed = None
        if temporal:
            self.temporal_embed = store.embedding(f"{name}.temporal_embed", (config.num_frames, width))

    def backbone(self, frames: np.ndarray, return_attention: bool = False):
        """[cls] の出力 (T, D)。return_attention なら層ごとの注意重み (T, H, L, L) も返す"""
        frames = np.asarray(frames)
        count = len(frames)
        if frames.shape[1:3] != (self.config.image_size, self.config.image_size):
            raise ValueError(f"Frames must be {self.config.image_size}x{self.config.image_size}, "
                             f"got {frames.shape[1]}x{frames.shape[2]}")
        patches = patchify(np.asarray(frames, dtype=np.float64) / PIXEL_SCALE, self.config.patch_size)
        tokens = self.patch_embed(Tensor(patches))
        cls = reshape(self.cls_token, (1, 1, self.config.embed_dim)) + np.zeros((count, 1, self.config.embed_dim))
        x = concat([cls, tokens], axis=1) + self.pos_embed

        weights = []
        for block in self.blocks:
            if return_attention:
                x, w = block(x, return_weights=True)
                weights.append(w)
            else:
                x = block(x)
        out = self.ln_f(x[:, 0, :])
        return (out, weights) if return_attention else out

    def __call__(self, frames: np.ndarray, detections: Sequence[DetectionSet], fusion: bool = True) -> Tensor:
        """フレーム埋め込み z (T, D)（時間位置埋め込みの前）

        Args:
            frames: (T, S, S, 3) の uint8 配列（S = image_size）
            detections: フレームごとの DetectionSet（モデル入力座標）
            fusion: False なら検出融合を外す（検証用）
        """
        if len(frames) != len(detections):
            raise ValueError(f"{len(frames)} frames but {len(detections)} detection sets")
        cls_out = self.backbone(frames)
        if not fusion:
            return cls_out
        det = detection_matrix(detections, self.config.num_categories, self.config.image_size)
        fused = self.fusion(det)
        if self.fuse_proj is not None:
            return self.fuse_proj(concat([cls_out, fused], axis=-1))
        return cls_out + fused

    def add_temporal(self, z: Tensor) -> Tensor:
        """時間位置埋め込みを足す（T ≤ num_frames）"""
        count = z.shape[0]
        if count > self.config.num_frames:
            raise ValueError(f"Sequence of {count} frames exceeds num_frames={self.config.num_frames}")
        return z + self.temporal_embed[:count]

