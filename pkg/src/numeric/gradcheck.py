"""有限差分による勾配検証"""
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.numeric.tensor import Tensor

FD_STEP = 1e-5
REL_ERROR_FLOOR = 1e-3


def numerical_grad(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = FD_STEP,
    indices: Optional[Sequence[Sequence[int]]] = None,
) -> List[np.ndarray]:
    """中心差分 (f(p+h) − f(p−h)) / 2h で勾配を近似する

    Args:
        f: 現在のパラメータ値でスカラー損失を返す関数
        params: 摂動するパラメータ（値はその場で書き換えて戻す）
        h: 差分幅
        indices: パラメータごとに評価する平坦インデックス（None なら全要素）

    Returns:
        params と同形の配列のリスト（評価しない要素は 0）
    """
    results = []
    for p_index, param in enumerate(params):
        flat = param.data.reshape(-1)
        out = np.zeros_like(flat)
        targets = range(flat.size) if indices is None else indices[p_index]
        for i in targets:
            original = flat[i]
            flat[i] = original + h
            plus = f().item()
            flat[i] = original - h
            minus = f().item()
            flat[i] = original
            out[i] = (plus - minus) / (2.0 * h)
        results.append(out.reshape(param.shape))
    return results


def max_relative_error(analytic, numeric, floor: float = REL_ERROR_FLOOR) -> float:
    """|a − n| / max(|a|, |n|, floor) の最大値"""
    a = np.asarray(analytic.data if isinstance(analytic, Tensor) else analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"Shape mismatch: {a.shape} != {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
