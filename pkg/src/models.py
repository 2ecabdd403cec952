"""データモデル定義

アノテーション・検出結果・クリップ・評価レポートなど、全モジュールで共有するデータモデルを定義。
ボックスはすべて中心形式 (x_c, y_c, w, h)。w == h == 0 の全ゼロボックスを空の番兵とする。
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

Box = Tuple[float, float, float, float]
EMPTY_BOX: Box = (0.0, 0.0, 0.0, 0.0)
HAND_SLOTS = {'right': 0, 'left': 1}
SLOT_SIDES = ('right', 'left')


def is_empty_box(box: Sequence[float]) -> bool:
    """空の番兵（幅か高さが 0 以下）かどうか"""
    return not (box[2] > 0 and box[3] > 0)


def clamp_box(box: Sequence[float], width: float, height: float) -> Optional[Box]:
    """フレーム [0,width]×[0,height] との共通部分を返す

    負の幅・高さは 0 とみなす。共通部分の面積が 0 なら None。
    """
    xc, yc, w, h = (float(v) for v in box)
    w, h = max(w, 0.0), max(h, 0.0)
    if w > 0 and h > 0 and xc - w / 2 >= 0 and yc - h / 2 >= 0 and xc + w / 2 <= width and yc + h / 2 <= height:
        return (xc, yc, w, h)
    x1, y1 = max(xc - w / 2, 0.0), max(yc - h / 2, 0.0)
    x2, y2 = min(xc + w / 2, float(width)), min(yc + h / 2, float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def _check_box(box: Sequence[float], what: str) -> Box:
    if len(box) != 4:
        raise ValueError(f"Invalid {what} box (need 4 values): {box}")
    box = tuple(float(v) for v in box)
    if any(v != 0.0 for v in box) and is_empty_box(box):
        raise ValueError(f"Invalid {what} box (w, h must be > 0 or all-zero sentinel): {box}")
    return box


@dataclass
class HandRecord:
    """手のアノテーション"""
    box: Box
    score: float
    side: Literal['right', 'left']
    contact_state: bool = False

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.box = _check_box(self.box, 'hand')
        if not 0.0 < self.score <= 1.0:
            raise ValueError(f"Invalid hand score: {self.score}")
        if self.side not in HAND_SLOTS:
            raise ValueError(f"Invalid hand side: {self.side}")

    def to_dict(self) -> dict:
        return {'box': list(self.box), 'score': self.score, 'side': self.side,
                'contact_state': self.contact_state}


@dataclass
class ObjectRecord:
    """カテゴリ別の物体検出"""
    category: int
    box: Box
    score: float

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.box = _check_box(self.box, 'object')
        if not 0.0 < self.score <= 1.0:
            raise ValueError(f"Invalid object score: {self.score}")
        if self.category < 0:
            raise ValueError(f"Invalid category: {self.category}")

    def to_dict(self) -> dict:
        return {'category': self.category, 'box': list(self.box), 'score': self.score}


@dataclass
class ActiveObject:
    """手が接触している物体"""
    box: Box
    category: int
    side: Literal['right', 'left'] = 'right'

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.box = _check_box(self.box, 'active object')
        if self.side not in HAND_SLOTS:
            raise ValueError(f"Invalid hand side: {self.side}")

    def to_dict(self) -> dict:
        return {'box': list(self.box), 'category': self.category, 'side': self.side}


@dataclass
class AnnotationRecord:
    """1フレーム分のアノテーション

    annotations.jsonl の1行に対応する。ボックスはネイティブ解像度のピクセル座標。
    """
    frame_index: int
    hands: List[HandRecord] = field(default_factory=list)
    objects: List[ObjectRecord] = field(default_factory=list)
    active_objects: List[ActiveObject] = field(default_factory=list)

    def __post_init__(self):
        """初期化後のバリデーション"""
        if self.frame_index < 0:
            raise ValueError(f"Invalid frame_index: {self.frame_index}")
        if len(self.hands) > 2:
            raise ValueError(f"At most 2 hands per frame, got {len(self.hands)}")
        if len(self.active_objects) > 2:
            raise ValueError(f"At most 2 active objects per frame, got {len(self.active_objects)}")

    def to_dict(self) -> dict:
        """辞書形式に変換

        JSONL 出力で使用。
        """
        return {
            'frame_index': self.frame_index,
            'hands': [h.to_dict() for h in self.hands],
            'objects': [o.to_dict() for o in self.objects],
            'active_objects': [a.to_dict() for a in self.active_objects],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'AnnotationRecord':
        return cls(
            frame_index=int(data['frame_index']),
            hands=[HandRecord(box=tuple(h['box']), score=h['score'], side=h['side'],
                              contact_state=bool(h['contact_state'])) for h in data.get('hands', [])],
            objects=[ObjectRecord(category=int(o['category']), box=tuple(o['box']), score=o['score'])
                     for o in data.get('objects', [])],
            active_objects=[ActiveObject(box=tuple(a['box']), category=int(a['category']),
                                         side=a.get('side', 'right'))
                            for a in data.get('active_objects', [])],
        )

    def active_box_pair(self) -> 'BoxPair':
        """接触物体を手のスロット（右=0, 左=1）に並べた BoxPair"""
        slots: List[Optional[Box]] = [None, None]
        for active in self.active_objects:
            slot = HAND_SLOTS[active.side]
            if slots[slot] is None and not is_empty_box(active.box):
                slots[slot] = active.box
        return BoxPair.from_slots(*slots)


@dataclass
class BoxPair:
    """手ごとに1つの接触物体ボックス（R^8 ベクトル + 有効マスク）

    Attributes:
        boxes: (2, 4) 配列。スロット 0 が右手、1 が左手
        valid: (2,) 真偽配列。無効スロットは全ゼロ
    """
    boxes: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.boxes = np.array(self.boxes, dtype=np.float64).reshape(2, 4)
        self.valid = np.array(self.valid, dtype=bool).reshape(2)
        if np.any(self.boxes[~self.valid] != 0.0):
            raise ValueError("Invalid BoxPair slots must be all-zero")

    @classmethod
    def empty(cls) -> 'BoxPair':
        return cls(np.zeros((2, 4)), np.zeros(2, dtype=bool))

    @classmethod
    def from_slots(cls, right: Optional[Sequence[float]] = None,
                   left: Optional[Sequence[float]] = None) -> 'BoxPair':
        boxes = np.zeros((2, 4))
        valid = np.zeros(2, dtype=bool)
        for slot, box in enumerate((right, left)):
            if box is not None:
                boxes[slot] = box
                valid[slot] = True
        return cls(boxes, valid)

    @classmethod
    def from_vector(cls, vector: Sequence[float], valid=(True, True)) -> 'BoxPair':
        boxes = np.array(vector, dtype=np.float64).reshape(2, 4)
        valid = np.array(valid, dtype=bool)
        boxes[~valid] = 0.0
        return cls(boxes, valid)

    def vector(self) -> np.ndarray:
        """R^8 ベクトル"""
        return self.boxes.reshape(8).copy()

    def mask(self) -> np.ndarray:
        """R^8 の損失マスク（有効スロットの4要素が 1）"""
        return np.repeat(self.valid.astype(np.float64), 4)

    def any_valid(self) -> bool:
        return bool(self.valid.any())

    def within(self, width: float, height: float) -> bool:
        """有効スロットがフレーム内に収まっているか"""
        for slot in np.flatnonzero(self.valid):
            xc, yc, w, h = self.boxes[slot]
            if xc - w / 2 < -1e-9 or yc - h / 2 < -1e-9:
                return False
            if xc + w / 2 > width + 1e-9 or yc + h / 2 > height + 1e-9:
                return False
        return True

    def scaled(self, factor_x: float, factor_y: float) -> 'BoxPair':
        scale = np.array([factor_x, factor_y, factor_x, factor_y])
        return BoxPair(self.boxes * scale, self.valid.copy())

    def clamped(self, width: float, height: float) -> 'BoxPair':
        """有効スロットをフレームに収める（はみ出し切ったスロットは空ボックス）"""
        boxes = np.zeros((2, 4))
        for slot in np.flatnonzero(self.valid):
            clamped = clamp_box(self.boxes[slot], width, height)
            if clamped is not None:
                boxes[slot] = clamped
        return BoxPair(boxes, self.valid.copy())

    def to_dict(self) -> dict:
        return {'boxes': self.boxes.tolist(), 'valid': self.valid.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> 'BoxPair':
        return cls(np.array(data['boxes']), np.array(data['valid']))


@dataclass
class DetectionSet:
    """1フレームのカテゴリ別検出（N スロット固定）

    Attributes:
        boxes: (N, 4) 配列
        scores: (N,) 配列。空スロットはボックス全ゼロかつスコア 0
    """
    boxes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.boxes = np.array(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.scores = np.array(self.scores, dtype=np.float64).reshape(-1)
        if len(self.boxes) != len(self.scores):
            raise ValueError(f"DetectionSet has {len(self.boxes)} boxes but {len(self.scores)} scores")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError("Detection scores must lie in [0, 1]")

    @classmethod
    def empty(cls, num_categories: int) -> 'DetectionSet':
        return cls(np.zeros((num_categories, 4)), np.zeros(num_categories))

    @classmethod
    def from_objects(cls, objects: Sequence[ObjectRecord], num_categories: int) -> 'DetectionSet':
        """カテゴリごとに最高スコアの検出を採用する"""
        detections = cls.empty(num_categories)
        for obj in objects:
            if obj.category >= num_categories:
                raise ValueError(f"Category {obj.category} out of range for N={num_categories}")
            if obj.score > detections.scores[obj.category]:
                detections.boxes[obj.category] = obj.box
                detections.scores[obj.category] = obj.score
        return detections

    @property
    def num_categories(self) -> int:
        return len(self.scores)

    def is_empty(self, category: int) -> bool:
        return self.scores[category] == 0.0

    def to_vector(self) -> np.ndarray:
        """(N×5) に並べた平坦ベクトル（x_c, y_c, w, h, score）"""
        return np.concatenate([self.boxes, self.scores[:, None]], axis=1).reshape(-1)

    def to_objects(self) -> List[ObjectRecord]:
        return [ObjectRecord(category=i, box=tuple(self.boxes[i]), score=float(self.scores[i]))
                for i in range(self.num_categories) if not self.is_empty(i)]


@dataclass
class HandTruth:
    """手の真値（カメラ座標、フレーム内にクランプ済み）"""
    side: Literal['right', 'left']
    box: Box
    contact_category: Optional[int] = None

    def to_dict(self) -> dict:
        return {'side': self.side, 'box': list(self.box), 'contact_category': self.contact_category}


@dataclass
class ObjectTruth:
    """物体の真値（カメラ座標、フレーム内にクランプ済み）"""
    category: int
    box: Box

    def to_dict(self) -> dict:
        return {'category': self.category, 'box': list(self.box)}


@dataclass
class FrameTruth:
    """1フレームの真値

    見えている手・物体のみを保持する。camera_origin はアリーナ座標でのカメラ窓の左上。
    """
    frame_index: int
    camera_origin: Tuple[float, float]
    hands: List[HandTruth] = field(default_factory=list)
    objects: List[ObjectTruth] = field(default_factory=list)

    def contact_categories(self) -> List[int]:
        return [h.contact_category for h in self.hands if h.contact_category is not None]

    def object_box(self, category: int) -> Optional[Box]:
        for obj in self.objects:
            if obj.category == category:
                return obj.box
        return None

    def to_dict(self) -> dict:
        return {
            'frame_index': self.frame_index,
            'camera_origin': list(self.camera_origin),
            'hands': [h.to_dict() for h in self.hands],
            'objects': [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'FrameTruth':
        return cls(
            frame_index=int(data['frame_index']),
            camera_origin=tuple(data['camera_origin']),
            hands=[HandTruth(side=h['side'], box=tuple(h['box']), contact_category=h['contact_category'])
                   for h in data['hands']],
            objects=[ObjectTruth(category=int(o['category']), box=tuple(o['box'])) for o in data['objects']],
        )


@dataclass
class ClipRecord:
    """合成クリップ

    Attributes:
        clip_id: クリップ番号
        frames: (T, H, W, 3) の uint8 配列
        fps: フレームレート
        native_size: (幅, 高さ)
        action_start_index: 行動開始フレーム（τ_s·fps）
        target_category: 次に接触する物体のカテゴリ
        seed: 生成 seed
        truth: フレームごとの真値
        annotations: フレームごとのアノテーション
    """
    clip_id: int
    frames: np.ndarray
    fps: float
    native_size: Tuple[int, int]
    action_start_index: int
    target_category: int
    seed: int
    truth: List[FrameTruth] = field(default_factory=list)
    annotations: List[AnnotationRecord] = field(default_factory=list)

    def __post_init__(self):
        """初期化後のバリデーション"""
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3 or self.frames.dtype != np.uint8:
            raise ValueError(f"frames must be uint8 (T, H, W, 3), got {self.frames.dtype} {self.frames.shape}")
        if not 0 < self.action_start_index < len(self.frames):
            raise ValueError(f"action_start_index {self.action_start_index} outside clip of {len(self.frames)} frames")
        if self.fps <= 0:
            raise ValueError(f"Invalid fps: {self.fps}")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    def meta(self) -> dict:
        return {
            'clip_id': self.clip_id,
            'fps': self.fps,
            'native_size': list(self.native_size),
            'action_start_index': self.action_start_index,
            'target_category': self.target_category,
            'seed': self.seed,
            'num_frames': self.num_frames,
            'truth': [t.to_dict() for t in self.truth],
        }


@dataclass
class ClipWindows:
    """観測区間のサンプリング結果

    Attributes:
        tau_o: 観測長（秒）= num_frames·tau_a
        tau_a: 接触までの時間 TTC（秒）
        tau_s: 行動開始時刻（秒）
        num_frames: サンプル数
        sampled_indices: サンプルしたフレーム番号（狭義単調増加）
        clamped: 履歴不足で先頭を 0 にクランプしたか（このときだけ 0 の重複を許す）
    """
    tau_o: float
    tau_a: float
    tau_s: float
    num_frames: int
    sampled_indices: Tuple[int, ...]
    clamped: bool = False

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.sampled_indices = tuple(int(i) for i in self.sampled_indices)
        if len(self.sampled_indices) != self.num_frames:
            raise ValueError(f"Expected {self.num_frames} indices, got {len(self.sampled_indices)}")
        if any(i < 0 for i in self.sampled_indices):
            raise ValueError(f"sampled_indices must be >= 0: {self.sampled_indices}")
        for a, b in zip(self.sampled_indices, self.sampled_indices[1:]):
            if b <= a and not (self.clamped and a == b == 0):
                raise ValueError(f"sampled_indices must be strictly increasing: {self.sampled_indices}")


@dataclass
class Sample:
    """モデル入力1件

    ボックスはすべてモデル入力解像度（image_size）のピクセル座標。
    cao[t] はサンプルフレーム t の接触物体、nao は行動開始時の次接触物体。
    hands は観測区間で検出された手のスロット（右, 左）。予測はこのスロットだけを有効にする。
    """
    clip_id: int
    frames: np.ndarray
    detections: List[DetectionSet]
    cao: List[BoxPair]
    nao: BoxPair
    image_size: int
    windows: ClipWindows
    target_category: int = -1
    hands: Tuple[bool, bool] = (True, True)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass
class EvalReport:
    """評価レポート

    Attributes:
        ap: IoU 閾値 → AP
        ap_avg: 各閾値の AP の算術平均
        n_clips: 評価したクリップ数
        model_id: モデル識別子
        tau_a: TTC（秒）
        protocol: 'scoreless'（一致率）または 'scored'（適合率包絡の面積）
        n_excluded: NAO 真値がなく除外したクリップ数
    """
    ap: Dict[float, float]
    ap_avg: float
    n_clips: int
    model_id: str
    tau_a: float
    protocol: Literal['scoreless', 'scored'] = 'scoreless'
    n_excluded: int = 0

    def __post_init__(self):
        """初期化後のバリデーション"""
        self.ap = {float(k): float(v) for k, v in sorted(self.ap.items(), key=lambda kv: float(kv[0]))}
        values = list(self.ap.values())
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError(f"AP values must lie in [0, 1]: {self.ap}")
        if any(b > a + 1e-12 for a, b in zip(values, values[1:])):
            raise ValueError(f"AP must be non-increasing in threshold: {self.ap}")
        if values and abs(self.ap_avg - float(np.mean(values))) > 1e-12:
            raise ValueError(f"ap_avg {self.ap_avg} is not the mean of {values}")
        if self.protocol not in ('scoreless', 'scored'):
            raise ValueError(f"Invalid protocol: {self.protocol}")

    def to_dict(self) -> dict:
        return {
            'model_id': self.model_id,
            'tau_a': self.tau_a,
            'n_clips': self.n_clips,
            'n_excluded': self.n_excluded,
            'protocol': self.protocol,
            'ap': {f"{k:.2f}": v for k, v in self.ap.items()},
            'ap_avg': self.ap_avg,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'EvalReport':
        return cls(
            ap={float(k): v for k, v in data['ap'].items()},
            ap_avg=data['ap_avg'],
            n_clips=data['n_clips'],
            model_id=data['model_id'],
            tau_a=data['tau_a'],
            protocol=data.get('protocol', 'scoreless'),
            n_excluded=data.get('n_excluded', 0),
        )


@dataclass
class RunManifest:
    """実行マニフェスト

    サブコマンドの再実行に必要な情報（具体化済み設定・seed・入出力）を保持する。
    """
    subcommand: str
    config: dict
    seed: int
    version: str
    args: dict = field(default_factory=dict)
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    started_at: str = ''
    wall_clock_seconds: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            'subcommand': self.subcommand,
            'config': self.config,
            'seed': self.seed,
            'version': self.version,
            'args': self.args,
            'inputs': self.inputs,
            'outputs': self.outputs,
            'started_at': self.started_at,
            'wall_clock_seconds': self.wall_clock_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunManifest':
        return cls(**data)

    def write(self, path: str):
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> 'RunManifest':
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_dict(json.load(f))
