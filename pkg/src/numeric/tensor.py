"""テンソルとリバースモード自動微分

64bit 浮動小数点の numpy 配列をラップし、テープに演算を記録して勾配を計算する。
演算結果に NaN/Inf が現れた時点で NumericError を送出する（黙って伝播させない）。
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import GradientError, NumericError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional['Tape']:
    """現在記録中のテープ（なければ None）"""
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Node:
    """テープ上の1演算"""
    op: str
    output: 'Tensor'
    inputs: Tuple['Tensor', ...]
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tape:
    """実行された微分可能演算の記録

    with ブロック内で、勾配を必要とする入力を持つ演算だけを実行順に保持する。
    テープはスレッドローカルで、スレッド間で共有しない。
    """

    def __init__(self):
        self.nodes: List[_Node] = []

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _check_finite(array: np.ndarray, op: str):
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NumericError(f"Non-finite values produced by '{op}' ({bad} of {np.size(array)} elements)")


class Tensor:
    """n 次元数値配列（float64, 行優先）

    Attributes:
        data: numpy 配列
        requires_grad: 勾配計算の対象かどうか
        name: パラメータ名（任意）
    """
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        _check_finite(array, 'tensor')
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> 'Tensor':
        obj = cls.__new__(cls)
        obj.data = array
        obj.requires_grad = False
        obj.name = None
        obj._tape = None
        return obj

    @staticmethod
    def zeros(shape, **kwargs) -> 'Tensor':
        return Tensor(np.zeros(shape), **kwargs)

    @staticmethod
    def ones(shape, **kwargs) -> 'Tensor':
        return Tensor(np.ones(shape), **kwargs)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        """勾配を切った複製"""
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"<Tensor shape={self.shape} requires_grad={self.requires_grad}{label}>"

    # 演算子
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self) -> 'Tensor':
        return exp(self)

    def tanh(self) -> 'Tensor':
        return tanh(self)

    def sigmoid(self) -> 'Tensor':
        return sigmoid(self)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _apply(op: str, array, inputs: Sequence[Tensor], backward) -> Tensor:
    """演算結果を生成し、必要ならテープに記録する"""
    array = np.asarray(array, dtype=np.float64)
    _check_finite(array, op)
    out = Tensor._wrap(array)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(op, out, tuple(inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """ブロードキャストで広がった軸を畳み込んで元の形に戻す"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _normalize_axis(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# 要素ごとの演算

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _apply('add', a.data + b.data, (a, b), backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _apply('sub', a.data - b.data, (a, b), backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _apply('mul', a.data * b.data, (a, b), backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise NumericError("Division by zero in 'div'")

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _apply('div', a.data / b.data, (a, b), backward)


def power(x: TensorLike, exponent: float) -> Tensor:
    x = as_tensor(x)
    exponent = float(exponent)

    def backward(g):
        return (g * exponent * np.power(x.data, exponent - 1.0),)
    return _apply('power', np.power(x.data, exponent), (x,), backward)


def exp(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)
    return _apply('exp', out, (x,), backward)


def tanh(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)
    return _apply('tanh', out, (x,), backward)


def sigmoid(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    # tanh 表現でオーバーフローを避ける
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * out * (1.0 - out),)
    return _apply('sigmoid', out, (x,), backward)


# 行列・形状の演算

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """行列積（先頭軸はブロードキャスト）"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul requires rank >= 2 operands, got {a.shape} and {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _apply('matmul', np.matmul(a.data, b.data), (a, b), backward)


def tsum(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _apply('sum', np.sum(x.data, axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: TensorLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x: TensorLike, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)
    return _apply('reshape', x.data.reshape(shape), (x,), backward)


def transpose(x: TensorLike, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return _apply('transpose', np.transpose(x.data, axes), (x,), backward)


def swap_last(x: TensorLike) -> Tensor:
    """最後の2軸を入れ替える"""
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def getitem(x: TensorLike, index) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)
    return _apply('getitem', x.data[index], (x,), backward)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _apply('concat', np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack needs at least one tensor")
    axis = axis % (tensors[0].ndim + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _apply('stack', np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# 勾配計算

def grad(loss: Tensor, params: Sequence[Tensor]) -> List[Tensor]:
    """損失の各パラメータに関する勾配を返す

    Args:
        loss: スカラーの損失
        params: 勾配を求めるパラメータ（requires_grad=True であること）

    Returns:
        params と同じ形の勾配テンソルのリスト。損失に到達しないパラメータはゼロ。

    Raises:
        GradientError: 損失が非スカラー、またはパラメータがテープで追跡されていない
    """
    if not isinstance(loss, Tensor):
        raise GradientError(f"loss must be a Tensor, got {type(loss).__name__}")
    if loss.size != 1:
        raise GradientError(f"loss must be a scalar, got shape {loss.shape}")
    for index, param in enumerate(params):
        if not param.requires_grad:
            label = param.name or f"#{index}"
            raise GradientError(f"parameter {label} is not tracked on the tape (requires_grad=False)")

    grads = {}
    tape = loss._tape
    if tape is not None:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            for inp, contribution in zip(node.inputs, node.backward(upstream)):
                if contribution is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + contribution if key in grads else contribution

    result = []
    for param in params:
        g = grads.get(id(param))
        if g is None:
            result.append(Tensor._wrap(np.zeros_like(param.data)))
        else:
            g = np.array(g, dtype=np.float64).reshape(param.shape)
            _check_finite(g, 'grad')
            result.append(Tensor._wrap(g))
    return result
