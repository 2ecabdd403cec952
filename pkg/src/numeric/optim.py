"""最適化

素の確率的勾配降下法（モーメンタム・減衰なし）。
"""
from typing import List, Sequence

import numpy as np

from src.config import SgdConfig
from src.numeric.tensor import Tensor


def sgd_step(params: Sequence[Tensor], grads: Sequence[Tensor], config: SgdConfig) -> List[Tensor]:
    """p ← p − lr·g を要素ごとにその場で適用する

    Args:
        params: 更新するパラメータ
        grads: params と同順・同形の勾配
        config: SGD 設定

    Returns:
        更新後のパラメータ（params と同じオブジェクト）

    Raises:
        ValueError: 個数・形の不一致、負の学習率
    """
    if len(params) != len(grads):
        raise ValueError(f"Got {len(params)} params but {len(grads)} grads")
    if config.learning_rate < 0:
        raise ValueError(f"learning_rate must be >= 0, got {config.learning_rate}")

    for param, g in zip(params, grads):
        g_data = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g_data.shape != param.shape:
            label = param.name or 'param'
            raise ValueError(f"Shape mismatch for {label}: grad {g_data.shape} != param {param.shape}")

    for param, g in zip(params, grads):
        g_data = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        param.data -= config.learning_rate * g_data
    return list(params)
