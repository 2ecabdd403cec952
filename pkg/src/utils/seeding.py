"""乱数ストリーム

1つの seed から名前付きのサブストリーム（data, init, shuffle など）を導出する。
"""
import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """seed と名前列から決定的な Generator を作る

    Args:
        seed: ルート seed
        names: サブストリーム名（'data', 'clip', 3 のように階層化してよい）

    Returns:
        numpy Generator
    """
    keys = [int(seed) & 0xFFFFFFFF]
    for name in names:
        keys.append(zlib.crc32(str(name).encode('utf-8')))
    return np.random.default_rng(np.random.SeedSequence(keys))
