"""ニューラルネットの基本演算

softmax / layer_norm / gelu は数値安定な融合演算としてテープに記録する。
注意機構はこれらと matmul の合成で表現する。
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from src.errors import NumericError
from src.numeric.tensor import (
    Tensor,
    TensorLike,
    _apply,
    as_tensor,
    matmul,
    reshape,
    swap_last,
    transpose,
)

LAYER_NORM_EPS = 1e-5
MASK_FILL = -1e30
# GELU の tanh 近似の係数
GELU_COEF_A = math.sqrt(2.0 / math.pi)
GELU_COEF_B = 0.044715


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    """スライスごとの最大値を引いてから正規化する softmax"""
    x = as_tensor(x)
    if x.ndim == 0:
        raise ValueError("softmax is undefined for 0-d tensors")
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out = exps / np.sum(exps, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)
    return _apply('softmax', out, (x,), backward)


def layer_norm(x: TensorLike, gamma: TensorLike, beta: TensorLike, eps: float = LAYER_NORM_EPS) -> Tensor:
    """最終軸に沿った LayerNorm（γ⊙x̂ + β）"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ValueError(f"gamma/beta must have shape ({width},), got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")

    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = gamma.data * x_hat + beta.data
    lead_axes = tuple(range(x.ndim - 1))

    def backward(g):
        g_hat = g * gamma.data
        g_x = inv_std / width * (
            width * g_hat
            - np.sum(g_hat, axis=-1, keepdims=True)
            - x_hat * np.sum(g_hat * x_hat, axis=-1, keepdims=True)
        )
        g_gamma = np.sum(g * x_hat, axis=lead_axes)
        g_beta = np.sum(g, axis=lead_axes)
        return g_x, g_gamma, g_beta
    return _apply('layer_norm', out, (x, gamma, beta), backward)


def gelu(x: TensorLike) -> Tensor:
    """GELU（tanh 近似, 係数 √(2/π), 0.044715）"""
    x = as_tensor(x)
    v = x.data
    inner = GELU_COEF_A * (v + GELU_COEF_B * v ** 3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        d_inner = GELU_COEF_A * (1.0 + 3.0 * GELU_COEF_B * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner),)
    return _apply('gelu', out, (x,), backward)


def causal_mask(length: int) -> np.ndarray:
    """位置 i は j ≤ i のみ参照できる下三角マスク"""
    return np.tril(np.ones((length, length), dtype=bool))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, width = x.shape
    n = len(lead)
    x = reshape(x, (*lead, length, heads, width // heads))
    return transpose(x, (*range(n), n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, head_dim = x.shape
    n = len(lead)
    x = transpose(x, (*range(n), n + 1, n, n + 2))
    return reshape(x, (*lead, length, heads * head_dim))


def masked_multi_head_attention(
    q: TensorLike,
    k: TensorLike,
    v: TensorLike,
    mask: Optional[np.ndarray] = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """マスク付きマルチヘッド注意（射影済みの q, k, v を受け取る）

    Args:
        q: (..., Lq, D)
        k: (..., Lk, D)
        v: (..., Lk, D)
        mask: (Lq, Lk) の真偽行列。False の位置は参照不可（None なら全参照可）
        heads: ヘッド数（D を割り切ること）
        return_weights: 注意重み (..., H, Lq, Lk) の numpy 配列も返す

    Returns:
        q と同じ形の出力（return_weights なら (出力, 重み)）

    Raises:
        ValueError: 次元がヘッド数で割り切れない、マスクの形が不正
        NumericError: 全要素がマスクされた行がある
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    width = q.shape[-1]
    if width % heads != 0:
        raise ValueError(f"model dim {width} is not divisible by heads={heads}")
    q_len, k_len = q.shape[-2], k.shape[-2]

    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q_len, k_len):
            raise ValueError(f"mask shape {mask.shape} does not match ({q_len}, {k_len})")
        empty_rows = np.flatnonzero(~mask.any(axis=1))
        if empty_rows.size:
            raise NumericError(f"attention rows {empty_rows.tolist()} are fully masked")
        bias = np.where(mask, 0.0, MASK_FILL)

    head_dim = width // heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scores = matmul(qh, swap_last(kh)) * (1.0 / math.sqrt(head_dim))
    if bias is not None:
        scores = scores + bias
    weights = softmax(scores, axis=-1)
    out = _merge_heads(matmul(weights, vh))
    if return_weights:
        return out, weights.data.copy()
    return out


def linear(x: TensorLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b"""
    out = matmul(as_tensor(x), weight)
    return out + bias if bias is not None else out


def squared_error(pred: TensorLike, target: TensorLike, mask: Optional[np.ndarray] = None) -> Tensor:
    """Σ mask·(pred − target)²"""
    diff = as_tensor(pred) - as_tensor(target)
    sq = diff * diff
    if mask is not None:
        sq = sq * np.asarray(mask, dtype=np.float64)
    return sq.sum()
