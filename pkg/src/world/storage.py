"""クリップディレクトリの入出力

レイアウト:
    clip_<id>/frame_<k>.ppm     バイナリ P6, 8bit RGB
    clip_<id>/meta.json         fps, native_size, action_start_index, target_category, seed, 真値
    clip_<id>/annotations.jsonl AnnotationRecord を1行1件
"""
import json
from pathlib import Path
from typing import Iterable, List

import numpy as np
from loguru import logger
from PIL import Image

from src.errors import DataError
from src.models import AnnotationRecord, ClipRecord, FrameTruth

META_NAME = 'meta.json'
ANNOTATIONS_NAME = 'annotations.jsonl'


def clip_dir_name(clip_id: int) -> str:
    return f"clip_{clip_id:04d}"


def frame_file_name(k: int) -> str:
    return f"frame_{k:04d}.ppm"


def write_ppm(path: Path, raster: np.ndarray):
    """RGB は P6、グレースケールは P5 で保存する"""
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(path, format='PPM')


def read_ppm(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert('RGB'), dtype=np.uint8).copy()


def write_annotations(records: Iterable[AnnotationRecord], path: str):
    """annotations.jsonl を書き出す"""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record.to_dict()) + '\n')


def read_annotations(path: str) -> List[AnnotationRecord]:
    """annotations.jsonl を読み込む

    Raises:
        DataError: ファイルがない、または行が壊れている
    """
    in_path = Path(path)
    if not in_path.exists():
        raise DataError(f"Annotation file not found: {in_path}")
    records = []
    with open(in_path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(AnnotationRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{in_path}:{line_no}: invalid annotation record: {e}") from e
    return records


def write_clip(clip: ClipRecord, root: str) -> Path:
    """クリップをディレクトリに書き出す

    Returns:
        clip_<id> ディレクトリ
    """
    clip_dir = Path(root) / clip_dir_name(clip.clip_id)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(clip.frames):
        write_ppm(clip_dir / frame_file_name(k), frame)
    with open(clip_dir / META_NAME, 'w', encoding='utf-8') as f:
        json.dump(clip.meta(), f, indent=2, sort_keys=True)
    write_annotations(clip.annotations, clip_dir / ANNOTATIONS_NAME)
    return clip_dir


def read_clip(clip_dir: str) -> ClipRecord:
    """write_clip で書いたディレクトリを読み込む

    Raises:
        DataError: ファイル欠落・不整合
    """
    clip_path = Path(clip_dir)
    meta_path = clip_path / META_NAME
    if not meta_path.exists():
        raise DataError(f"Clip meta not found: {meta_path}")
    with open(meta_path, 'r', encoding='utf-8') as f:
        meta = json.load(f)

    frames = []
    for k in range(meta['num_frames']):
        frame_path = clip_path / frame_file_name(k)
        if not frame_path.exists():
            raise DataError(f"Missing frame {k} in {clip_path}")
        frames.append(read_ppm(frame_path))

    try:
        return ClipRecord(
            clip_id=int(meta['clip_id']),
            frames=np.stack(frames),
            fps=meta['fps'],
            native_size=tuple(meta['native_size']),
            action_start_index=int(meta['action_start_index']),
            target_category=int(meta['target_category']),
            seed=int(meta['seed']),
            truth=[FrameTruth.from_dict(t) for t in meta.get('truth', [])],
            annotations=read_annotations(clip_path / ANNOTATIONS_NAME),
        )
    except (ValueError, KeyError) as e:
        raise DataError(f"Invalid clip directory {clip_path}: {e}") from e


def list_clip_dirs(root: str) -> List[Path]:
    """root 直下の clip_* ディレクトリ（名前順）"""
    root_path = Path(root)
    if not root_path.is_dir():
        raise DataError(f"Dataset directory not found: {root_path}")
    return sorted(p for p in root_path.iterdir() if p.is_dir() and p.name.startswith('clip_'))


def write_dataset(clips: Iterable[ClipRecord], root: str) -> List[Path]:
    paths = [write_clip(clip, root) for clip in clips]
    logger.info(f"Wrote {len(paths)} clips to {root}")
    return paths


def load_dataset(root: str) -> List[ClipRecord]:
    """データセットディレクトリの全クリップを読み込む

    Raises:
        DataError: クリップが1本もない
    """
    clip_dirs = list_clip_dirs(root)
    if not clip_dirs:
        raise DataError(f"No clip_* directories in {root}")
    clips = [read_clip(p) for p in clip_dirs]
    logger.info(f"Loaded {len(clips)} clips from {root}")
    return clips
