"""ベースライン

recurrent: フレーム埋め込みを転がす GRU と、各時刻の予測状態を作る展開用 GRU。
framewise: フレームごとに独立した線形埋め込み（時間方向の混合なし）と共通の因果デコーダ。
"""
from typing import Optional, Sequence

import numpy as np

from src.config import ModelConfig
from src.models import BoxPair, DetectionSet
from src.network.decoder import BOX_DIM, CausalDecoder, DecoderOutput
from src.network.encoder import PIXEL_SCALE, DetectionFusion, detection_matrix, patchify
from src.network.layers import GRUCell, Linear
from src.numeric import functional as F
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tensor, concat, reshape


class RecurrentAggregator:
    """転がし・展開の2つの再帰セルによる集約

    時間順は GRU の状態だけが運ぶので、入力 z に時間位置埋め込みは足さない
    （AnactoModel は recurrent 用のエンコーダを temporal=False で作る）。
    教師強制も使わない。学習でも推論でも ŷ は z だけから決まる。
    """

    def __init__(self, store: ParameterStore, config: ModelConfig, name: str = 'recurrent'):
        width = config.embed_dim
        self.width = width
        self.rolling = GRUCell(store, f"{name}.rolling", width, width)
        self.unrolling = GRUCell(store, f"{name}.unrolling", width, width)
        self.head = Linear(store, f"{name}.head", width, BOX_DIM)

    def __call__(self, z: Tensor, teacher: Optional[Sequence[BoxPair]] = None) -> DecoderOutput:
        """h_t = GRU_r(z_t, h_{t−1}), u_t = GRU_u(z_t, h_t), ŷ_t = θ(u_t)

        teacher は受け取るが使わない（インタフェースを decode と揃える）。
        """
        length = z.shape[0]
        if length == 0:
            raise ValueError("Cannot decode an empty sequence (T=0)")
        hidden = Tensor(np.zeros((1, self.width)))
        states = []
        for t in range(length):
            frame = z[t:t + 1]
            hidden = self.rolling(frame, hidden)
            states.append(self.unrolling(frame, hidden))
        zhat = concat(states, axis=0)
        return DecoderOutput(zhat=zhat, yhat=self.head(zhat))


class FramewiseEncoder:
    """フレーム単体の埋め込み（パッチごとの線形 → GELU → 連結 → 線形）"""

    def __init__(self, store: ParameterStore, config: ModelConfig, name: str = 'framewise'):
        self.config = config
        patch_width = max(config.embed_dim // 4, 1)
        self.patch_width = patch_width
        self.patch_proj = Linear(store, f"{name}.patch_proj", config.patch_dim, patch_width)
        self.frame_proj = Linear(store, f"{name}.frame_proj", config.num_patches * patch_width, config.embed_dim)
        self.fusion = DetectionFusion(store, f"{name}.det_mlp", config)
        self.temporal_embed = store.embedding(f"{name}.temporal_embed", (config.num_frames, config.embed_dim))

    def __call__(self, frames: np.ndarray, detections: Sequence[DetectionSet]) -> Tensor:
        frames = np.asarray(frames)
        if len(frames) != len(detections):
            raise ValueError(f"{len(frames)} frames but {len(detections)} detection sets")
        count = len(frames)
        patches = patchify(frames.astype(np.float64) / PIXEL_SCALE, self.config.patch_size)
        features = F.gelu(self.patch_proj(Tensor(patches)))
        flat = reshape(features, (count, self.config.num_patches * self.patch_width))
        det = detection_matrix(detections, self.config.num_categories, self.config.image_size)
        return self.frame_proj(flat) + self.fusion(det)

    def add_temporal(self, z: Tensor) -> Tensor:
        count = z.shape[0]
        if count > self.config.num_frames:
            raise ValueError(f"Sequence of {count} frames exceeds num_frames={self.config.num_frames}")
        return z + self.temporal_embed[:count]


class FramewiseModel:
    """フレーム単体の埋め込み + 共通の因果デコーダ"""

    def __init__(self, store: ParameterStore, config: ModelConfig):
        self.encoder = FramewiseEncoder(store, config)
        self.decoder = CausalDecoder(store, config)

    def probe(self, frames: np.ndarray, detections: Sequence[DetectionSet]) -> Tensor:
        """デコーダを外し、各フレームの埋め込みに回帰ヘッドを直接かける"""
        return self.decoder.head(self.encoder(frames, detections))
