"""損失関数

L_feat: ẑ_t と z_{t+1} の二乗誤差（t = 0..T−2、目標側は勾配を切る）
L_cao : 観測区間の接触物体ボックスの二乗誤差（有効スロットのみ）
L_nao : 最終ステップの NAO ボックスの二乗誤差（有効スロットのみ）
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src.config import LossWeights
from src.errors import DataError
from src.models import BoxPair, Sample
from src.numeric import functional as F
from src.numeric.tensor import Tensor, TensorLike, as_tensor


@dataclass
class LossBreakdown:
    """1クリップ（またはバッチ平均）の損失内訳"""
    feat: Tensor
    cao: Tensor
    nao: Tensor
    total: Tensor

    def values(self) -> dict:
        return {
            'loss_feat': self.feat.item(),
            'loss_cao': self.cao.item(),
            'loss_nao': self.nao.item(),
            'loss_total': self.total.item(),
        }


def loss_feat(zhat: Tensor, z: TensorLike) -> Tensor:
    """Σ_{t=0}^{T−2} ‖ẑ_t − z_{t+1}‖²

    Raises:
        ValueError: 系列長の不一致
    """
    z = as_tensor(z).detach()
    if zhat.shape != z.shape:
        raise ValueError(f"loss_feat length mismatch: zhat {zhat.shape} vs z {z.shape}")
    if zhat.shape[0] < 2:
        return Tensor(0.0)
    return F.squared_error(zhat[:-1], z[1:])


def _targets(pairs: Sequence[BoxPair], scale: float):
    masks = np.stack([pair.mask() for pair in pairs])
    vectors = np.stack([pair.vector() / scale for pair in pairs]) * masks
    return vectors, masks


def loss_cao(yhat: Tensor, targets: Sequence[BoxPair], scale: float = 1.0) -> Tensor:
    """Σ_t ‖y_t − ŷ_t‖²（有効スロットのみ）

    Args:
        yhat: (T', 8) 観測区間の予測（最終ステップを除く）
        targets: T' 個の接触物体真値
        scale: 真値を割る値（モデル内部の正規化座標に合わせる）
    """
    if len(targets) != yhat.shape[0]:
        raise ValueError(f"loss_cao expects {yhat.shape[0]} targets, got {len(targets)}")
    if not targets:
        return Tensor(0.0)
    vectors, masks = _targets(targets, scale)
    if not masks.any():
        return Tensor(0.0)
    return F.squared_error(yhat, vectors, masks)


def loss_nao(yhat_n: Tensor, target: Optional[BoxPair], scale: float = 1.0) -> Tensor:
    """‖y_n − ŷ_n‖²（有効スロットのみ）

    Raises:
        DataError: NAO 真値がない（除外は前段の責務）
    """
    if target is None or not target.any_valid():
        raise DataError("loss_nao called without NAO ground truth")
    return F.squared_error(yhat_n, target.vector() * target.mask() / scale, target.mask())


def combine_loss(feat, cao, nao, weights: LossWeights):
    """feat_weight·L_feat + λ1·L_cao + λ2·L_nao"""
    return weights.feat_weight * feat + weights.lambda1 * cao + weights.lambda2 * nao


def sample_loss(model, sample: Sample, weights: LossWeights, teacher_forcing: bool = True) -> LossBreakdown:
    """1クリップの損失を求める（テープの中で呼ぶと勾配を追跡する）"""
    out = model.forward(sample, teacher_forcing=teacher_forcing)
    scale = float(sample.image_size)
    count = sample.num_frames
    feat = loss_feat(out.zhat, out.z)
    cao = loss_cao(out.yhat[:count - 1], sample.cao[:count - 1], scale)
    nao = loss_nao(out.yhat[count - 1], sample.nao, scale)
    return LossBreakdown(feat=feat, cao=cao, nao=nao, total=combine_loss(feat, cao, nao, weights))
