"""チェックポイント入出力

ディレクトリに manifest.json（キー・形・オフセット・設定）と
params.bin（リトルエンディアン float64 の連結）を書き出す。
"""
import json
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from src.errors import DataError

MANIFEST_NAME = 'manifest.json'
BLOB_NAME = 'params.bin'
FORMAT_VERSION = 1


def save_checkpoint(
    directory: str,
    state: Dict[str, np.ndarray],
    model_kind: str,
    config: dict,
    seed: int,
    epoch: Optional[int] = None,
    extra: Optional[dict] = None,
) -> Path:
    """パラメータを保存する

    Args:
        directory: 出力ディレクトリ（なければ作成）
        state: パラメータ名→配列（順序を保持）
        model_kind: 'tanacto' / 'recurrent' / 'framewise'
        config: 具体化済みの設定 dict
        seed: ルート seed
        epoch: エポック番号
        extra: 追加メタデータ（検証 AP など）

    Returns:
        出力ディレクトリの Path
    """
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    chunks = []
    offset = 0
    for key, array in state.items():
        array = np.asarray(array, dtype='<f8')
        entries.append({'key': key, 'shape': list(array.shape), 'offset': offset})
        chunks.append(array.tobytes(order='C'))
        offset += array.size

    manifest = {
        'format_version': FORMAT_VERSION,
        'dtype': 'float64-le',
        'model_kind': model_kind,
        'seed': int(seed),
        'epoch': epoch,
        'num_values': offset,
        'params': entries,
        'config': config,
        'extra': extra or {},
    }
    with open(out_dir / BLOB_NAME, 'wb') as f:
        f.write(b''.join(chunks))
    with open(out_dir / MANIFEST_NAME, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    logger.debug(f"Checkpoint saved: {out_dir} ({len(entries)} tensors, {offset} values)")
    return out_dir


def load_checkpoint(directory: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    """チェックポイントを読み込む

    Args:
        directory: save_checkpoint の出力ディレクトリ

    Returns:
        (manifest, パラメータ名→配列)

    Raises:
        DataError: ファイル欠落・サイズ不整合
    """
    in_dir = Path(directory)
    manifest_path = in_dir / MANIFEST_NAME
    blob_path = in_dir / BLOB_NAME
    if not manifest_path.exists() or not blob_path.exists():
        raise DataError(f"Checkpoint not found or incomplete: {in_dir}")

    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    if manifest.get('format_version') != FORMAT_VERSION:
        raise DataError(f"Unsupported checkpoint format: {manifest.get('format_version')}")

    blob = np.frombuffer(blob_path.read_bytes(), dtype='<f8')
    if blob.size != manifest['num_values']:
        raise DataError(f"Checkpoint blob has {blob.size} values, manifest says {manifest['num_values']}")

    state = {}
    for entry in manifest['params']:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        start = entry['offset']
        if start + count > blob.size:
            raise DataError(f"Checkpoint entry {entry['key']} exceeds blob size")
        state[entry['key']] = blob[start:start + count].astype(np.float64).reshape(shape)
    return manifest, state
