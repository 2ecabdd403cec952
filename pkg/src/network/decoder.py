"""因果デコーダ

時刻 t の入力は fuse(z_t ⊕ e_t)。e_0 は学習可能な開始トークン、t ≥ 1 では直前の
ボックス（R^8）と有効フラグ（2値）を埋め込んだもの。位置 t は t 以前だけを参照し、
最終 LayerNorm の出力 ẑ_t を回帰ヘッドに通して ŷ_t ∈ R^8 を得る。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from src.config import ModelConfig
from src.models import BoxPair
from src.network.layers import AttentionBlock, LayerNorm, Linear
from src.numeric import functional as F
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tensor, concat

BOX_DIM = 8
FEEDBACK_DIM = BOX_DIM + 2


@dataclass
class DecoderOutput:
    """デコーダ出力

    Attributes:
        zhat: (T, D) 予測特徴 ẑ
        yhat: (T, 8) 正規化座標のボックス ŷ
    """
    zhat: Tensor
    yhat: Tensor


def teacher_feedback(pair: BoxPair, image_size: int) -> np.ndarray:
    """真値 BoxPair → (1, 10) のフィードバック入力（無効スロットは 0）"""
    return np.concatenate([pair.vector() * pair.mask() / float(image_size), pair.valid.astype(np.float64)])[None, :]


class CausalDecoder:
    """マスク付き自己注意の自己回帰デコーダ"""

    def __init__(self, store: ParameterStore, config: ModelConfig, name: str = 'decoder'):
        self.config = config
        width = config.embed_dim
        self.start_token = store.embedding(f"{name}.start_token", (1, width))
        self.feedback = Linear(store, f"{name}.feedback", FEEDBACK_DIM, width)
        self.fuse = Linear(store, f"{name}.fuse", 2 * width, width)
        self.blocks = [AttentionBlock(store, f"{name}.block{i}", width, config.heads, config.mlp_ratio)
                       for i in range(config.dec_layers)]
        self.ln_f = LayerNorm(store, f"{name}.ln_f", width)
        self.head = Linear(store, f"{name}.head", width, BOX_DIM)

    def _feedback_input(self, t: int, previous: Tensor, teacher: Optional[Sequence[BoxPair]]):
        if t == 0:
            return self.start_token
        if teacher is not None and teacher[t - 1].any_valid():
            return self.feedback(teacher_feedback(teacher[t - 1], self.config.image_size))
        valid = np.ones((1, 2))
        return self.feedback(concat([previous, valid], axis=-1))

    def __call__(self, z: Tensor, teacher: Optional[Sequence[BoxPair]] = None) -> DecoderOutput:
        """ẑ_0..ẑ_{T−1} と ŷ_0..ŷ_{T−1} を1ステップずつ生成する

        Args:
            z: (T, D) 時間位置埋め込み済みのフレーム埋め込み
            teacher: 教師強制に使う接触物体の真値列（モデル入力座標）。
                t−1 の真値が有効なら ŷ_{t−1} の代わりに入力する。None なら完全自己回帰

        Returns:
            DecoderOutput

        Raises:
            ValueError: T = 0、教師列の長さ不一致
        """
        length = z.shape[0]
        if length == 0:
            raise ValueError("Cannot decode an empty sequence (T=0)")
        if teacher is not None and len(teacher) < length - 1:
            raise ValueError(f"teacher sequence has {len(teacher)} entries, need {length - 1}")

        inputs: List[Tensor] = []
        zhats: List[Tensor] = []
        yhats: List[Tensor] = []
        previous = None
        for t in range(length):
            feedback = self._feedback_input(t, previous, teacher)
            inputs.append(self.fuse(concat([z[t:t + 1], feedback], axis=-1)))
            h = concat(inputs, axis=0)
            mask = F.causal_mask(t + 1)
            for block in self.blocks:
                h = block(h, mask=mask)
            zhat = self.ln_f(h[t:t + 1])
            previous = self.head(zhat)
            zhats.append(zhat)
            yhats.append(previous)
        return DecoderOutput(zhat=concat(zhats, axis=0), yhat=concat(yhats, axis=0))
