"""パラメータ管理

名前付き・順序付きのパラメータ集合。初期化規則:
線形写像は uniform(±1/√fan_in)、埋め込み・トークンは normal(0, 0.02)、
バイアスは 0、LayerNorm は γ=1, β=0。
"""
from __future__ import annotations

from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.numeric.tensor import Tensor

EMBED_INIT_STD = 0.02


class ParameterStore:
    """モデルの全パラメータを保持する

    名前は `group.module.param` 形式で、先頭要素がグループ名になる。
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._params: Dict[str, Tensor] = {}

    def _register(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"Duplicate parameter name: {name}")
        tensor = Tensor(array, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def linear_weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self.rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def embedding(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self._register(name, self.rng.normal(0.0, EMBED_INIT_STD, size=shape))

    def zeros(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self._register(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def tensors(self) -> List[Tensor]:
        return list(self._params.values())

    def groups(self) -> Dict[str, List[str]]:
        """モジュール単位（先頭2要素）でパラメータ名をまとめる"""
        grouped: Dict[str, List[str]] = {}
        for name in self._params:
            key = '.'.join(name.split('.')[:2])
            grouped.setdefault(key, []).append(name)
        return grouped

    def num_values(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        """値をその場で書き換える（モジュールが保持する参照はそのまま）"""
        missing = [name for name in self._params if name not in state]
        unexpected = [name for name in state if name not in self._params]
        if missing or unexpected:
            raise ValueError(f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, tensor in self._params.items():
            array = np.asarray(state[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise ValueError(f"Shape mismatch for {name}: {array.shape} != {tensor.shape}")
            tensor.data[...] = array
