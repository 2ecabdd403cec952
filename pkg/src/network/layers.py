"""ネットワーク部品

全部品は ParameterStore にパラメータを登録し、呼び出し時にテンソル演算を組み立てる。
"""
from typing import Optional

import numpy as np

from src.numeric import functional as F
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tensor, TensorLike


class Linear:
    """全結合層 x @ W + b"""

    def __init__(self, store: ParameterStore, name: str, fan_in: int, fan_out: int, bias: bool = True):
        self.weight = store.linear_weight(f"{name}.weight", fan_in, fan_out)
        self.bias = store.zeros(f"{name}.bias", (fan_out,)) if bias else None

    def __call__(self, x: TensorLike) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, width: int):
        self.gamma = store.ones(f"{name}.gamma", (width,))
        self.beta = store.zeros(f"{name}.beta", (width,))

    def __call__(self, x: TensorLike) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta)


class FeedForward:
    """Linear → GELU → Linear"""

    def __init__(self, store: ParameterStore, name: str, width: int, hidden: int, out: Optional[int] = None):
        self.fc1 = Linear(store, f"{name}.fc1", width, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, out or width)

    def __call__(self, x: TensorLike) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class AttentionBlock:
    """プレノルムの Transformer ブロック

    x ← x + Attn(LN(x)),  x ← x + FFN(LN(x))
    """

    def __init__(self, store: ParameterStore, name: str, width: int, heads: int, mlp_ratio: int):
        self.heads = heads
        self.ln1 = LayerNorm(store, f"{name}.ln1", width)
        self.q = Linear(store, f"{name}.attn.q", width, width)
        self.k = Linear(store, f"{name}.attn.k", width, width)
        self.v = Linear(store, f"{name}.attn.v", width, width)
        self.proj = Linear(store, f"{name}.attn.proj", width, width)
        self.ln2 = LayerNorm(store, f"{name}.ln2", width)
        self.mlp = FeedForward(store, f"{name}.mlp", width, width * mlp_ratio)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None, return_weights: bool = False):
        h = self.ln1(x)
        attended = F.masked_multi_head_attention(
            self.q(h), self.k(h), self.v(h), mask=mask, heads=self.heads, return_weights=return_weights,
        )
        if return_weights:
            attended, weights = attended
        x = x + self.proj(attended)
        x = x + self.mlp(self.ln2(x))
        if return_weights:
            return x, weights
        return x


class GRUCell:
    """ゲート付き再帰セル

    z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
    n = tanh(xW_n + (r⊙h)U_n + b_n), h' = (1−z)⊙n + z⊙h
    """

    def __init__(self, store: ParameterStore, name: str, input_size: int, hidden_size: int):
        self.hidden_size = hidden_size
        self.x_update = Linear(store, f"{name}.x_update", input_size, hidden_size)
        self.h_update = Linear(store, f"{name}.h_update", hidden_size, hidden_size, bias=False)
        self.x_reset = Linear(store, f"{name}.x_reset", input_size, hidden_size)
        self.h_reset = Linear(store, f"{name}.h_reset", hidden_size, hidden_size, bias=False)
        self.x_cand = Linear(store, f"{name}.x_cand", input_size, hidden_size)
        self.h_cand = Linear(store, f"{name}.h_cand", hidden_size, hidden_size, bias=False)

    def __call__(self, x: TensorLike, h: TensorLike) -> Tensor:
        update = (self.x_update(x) + self.h_update(h)).sigmoid()
        reset = (self.x_reset(x) + self.h_reset(h)).sigmoid()
        candidate = (self.x_cand(x) + self.h_cand(reset * h)).tanh()
        return (1.0 - update) * candidate + update * h
