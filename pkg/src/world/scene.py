"""シーン生成

2次元アリーナに物体を配置し、カメラ窓のドリフトと手の動きを台本どおりに動かして
クリップを生成する。右手は action_start_index ちょうどで対象物体に接触し、以後接触を保つ。
乱数は seed とクリップ番号から導出した名前付きサブストリームだけを使う。
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from src.config import OracleDetectorConfig, SceneConfig
from src.models import ClipRecord, FrameTruth, HandTruth, ObjectTruth, clamp_box
from src.utils.seeding import substream
from src.world.detector import build_annotations
from src.world.render import SceneState, render_frame

PLACEMENT_TRIES = 200
PLACEMENT_GAP = 2.0
CAMERA_PERSISTENCE = 0.7
CAMERA_NOISE_RATIO = 0.6
TRAVEL_SECONDS = (1.5, 3.0)
# 接触点は物体中心から各辺の ±25% 以内
CONTACT_SPREAD = 0.25
WAYPOINT_SPREAD = 0.1
# 手の待機位置（カメラ窓に対する比率）
RIGHT_REST = (0.5, 0.9)
LEFT_REST = (0.2, 0.9)


@dataclass
class ObjectTrack:
    """物体1つの軌跡（アリーナ座標の中心列）"""
    category: int
    size: Tuple[float, float]
    centers: np.ndarray

    def box(self, k: int) -> Tuple[float, float, float, float]:
        return (float(self.centers[k, 0]), float(self.centers[k, 1]), self.size[0], self.size[1])


@dataclass
class HandTrack:
    """手1つの軌跡と接触カテゴリ列"""
    side: str
    centers: np.ndarray
    contacts: List[Optional[int]]


def check_feasible(config: SceneConfig):
    """生成可能な設定かを確かめる

    Raises:
        ValueError: 設定値の不正、物体がアリーナに収まらない
    """
    errors = config.errors()
    if config.object_size_max + 2 * PLACEMENT_GAP > config.arena_size:
        errors.append(f"object_size_max {config.object_size_max} does not fit in arena {config.arena_size}")
    if config.object_size_max + 2 > config.camera_size:
        errors.append(f"object_size_max {config.object_size_max} does not fit in camera {config.camera_size}")
    if errors:
        raise ValueError("Infeasible scene config: " + "; ".join(errors))


def _reflect(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """[lo, hi] の壁で反射させる"""
    span = hi - lo
    if span <= 0:
        return np.full_like(values, lo)
    folded = np.mod(values - lo, 2 * span)
    return lo + np.where(folded <= span, folded, 2 * span - folded)


def _overlaps(center_a, size_a, center_b, size_b) -> bool:
    return (abs(center_a[0] - center_b[0]) < (size_a[0] + size_b[0]) / 2 + PLACEMENT_GAP
            and abs(center_a[1] - center_b[1]) < (size_a[1] + size_b[1]) / 2 + PLACEMENT_GAP)


def place_objects(config: SceneConfig, rng: np.random.Generator) -> List[ObjectTrack]:
    """物体を重ならないように配置し、等速・壁反射の軌跡を作る"""
    frames = np.arange(config.num_frames)[:, None]
    categories = rng.choice(config.num_categories, size=config.num_objects, replace=False)
    placed = []
    tracks = []
    for category in categories:
        size = tuple(float(v) for v in rng.uniform(config.object_size_min, config.object_size_max, size=2))
        lo = np.array([size[0] / 2 + 1, size[1] / 2 + 1])
        hi = config.arena_size - lo
        center = rng.uniform(lo, hi)
        for _ in range(PLACEMENT_TRIES):
            if not any(_overlaps(center, size, c, s) for c, s in placed):
                break
            center = rng.uniform(lo, hi)
        placed.append((center, size))

        angle = rng.uniform(0.0, 2 * np.pi)
        velocity = config.object_speed * np.array([np.cos(angle), np.sin(angle)])
        raw = center + velocity * frames
        centers = np.stack([_reflect(raw[:, 0], lo[0], hi[0]), _reflect(raw[:, 1], lo[1], hi[1])], axis=1)
        tracks.append(ObjectTrack(int(category), size, centers))
    return tracks


def _limit(step: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.hypot(step[0], step[1]))
    if norm > max_norm:
        return step * (max_norm / norm) if norm > 0 else step
    return step


def camera_path(config: SceneConfig, target: ObjectTrack, rng: np.random.Generator) -> np.ndarray:
    """カメラ窓の中心列を作る

    行動開始フレームで対象物体が窓に収まる位置から時間を逆にたどる有界ランダムウォーク。
    行動開始以降は対象物体に追従する。1フレームの移動量は camera_drift 以下。
    """
    num_frames, start = config.num_frames, config.action_start_index
    half = config.camera_size / 2
    lo, hi = half, config.arena_size - half
    margin = max(half - max(target.size) / 2 - 1, 0.0)

    centers = np.empty((num_frames, 2))
    centers[start] = np.clip(target.centers[start] + rng.uniform(-margin, margin, size=2), lo, hi)

    velocity = np.zeros(2)
    for k in range(start - 1, -1, -1):
        velocity = CAMERA_PERSISTENCE * velocity + rng.normal(0.0, config.camera_drift * CAMERA_NOISE_RATIO, size=2)
        velocity = _limit(velocity, config.camera_drift)
        centers[k] = np.clip(centers[k + 1] + velocity, lo, hi)

    for k in range(start + 1, num_frames):
        desired = centers[start] + target.centers[k] - target.centers[start]
        step = _limit(desired - centers[k - 1], config.camera_drift)
        centers[k] = np.clip(centers[k - 1] + step, lo, hi)
    return centers


def _travel(start_point, goal, first: int, last: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    """first から last まで、中間2点を経由する折れ線 + ジッタ（両端はジッタなし）"""
    direction = goal - start_point
    dist = float(np.hypot(direction[0], direction[1]))
    normal = np.array([-direction[1], direction[0]]) / dist if dist > 0 else np.zeros(2)
    bends = rng.normal(0.0, WAYPOINT_SPREAD * dist, size=2)
    knot_t = [first, first + (last - first) / 3, first + 2 * (last - first) / 3, last]
    knot_p = np.stack([
        start_point,
        start_point + direction / 3 + normal * bends[0],
        start_point + 2 * direction / 3 + normal * bends[1],
        goal,
    ])
    steps = np.arange(first, last + 1)
    path = np.stack([np.interp(steps, knot_t, knot_p[:, 0]), np.interp(steps, knot_t, knot_p[:, 1])], axis=1)
    noise = rng.normal(0.0, jitter, size=path.shape)
    noise[0] = 0.0
    noise[-1] = 0.0
    return path + noise


def script_right_hand(
    config: SceneConfig,
    tracks: List[ObjectTrack],
    target_index: int,
    cam_centers: np.ndarray,
    rng: np.random.Generator,
) -> HandTrack:
    """右手の台本

    待機（または別の物体を保持して離す）→ 折れ線で対象物体へ移動 → 行動開始で接触。
    """
    num_frames, start = config.num_frames, config.action_start_index
    half = config.camera_size / 2
    target = tracks[target_index]
    contact_offset = rng.uniform(-CONTACT_SPREAD, CONTACT_SPREAD, size=2) * np.array(target.size)
    rest = np.array(RIGHT_REST) * config.camera_size - half
    use_prior = rng.random() < config.prior_contact_prob
    travel_frames = int(round(rng.uniform(*TRAVEL_SECONDS) * config.clip_fps))
    release = min(int(round(config.release_time * config.clip_fps)), start - 2)

    centers = np.empty((num_frames, 2))
    contacts: List[Optional[int]] = [None] * num_frames

    prior = None
    if use_prior and len(tracks) > 1 and release >= 1:
        others = [i for i in range(len(tracks)) if i != target_index]
        prior = min(others, key=lambda i: float(np.hypot(*(tracks[i].centers[release] - cam_centers[release]))))
        prior_offset = rng.uniform(-CONTACT_SPREAD, CONTACT_SPREAD, size=2) * np.array(tracks[prior].size)
        depart = release
    else:
        depart = max(start - travel_frames, 1)

    for k in range(depart):
        if prior is not None:
            centers[k] = tracks[prior].centers[k] + prior_offset
            contacts[k] = tracks[prior].category
        else:
            centers[k] = cam_centers[k] + rest + rng.normal(0.0, config.hand_jitter, size=2)

    if prior is not None:
        start_point = tracks[prior].centers[depart] + prior_offset
    else:
        start_point = cam_centers[depart] + rest
    goal = target.centers[start] + contact_offset
    centers[depart:start + 1] = _travel(start_point, goal, depart, start, config.hand_jitter, rng)

    for k in range(start, num_frames):
        centers[k] = target.centers[k] + contact_offset
        contacts[k] = target.category

    centers = np.clip(centers, 0.0, float(config.arena_size))
    return HandTrack('right', centers, contacts)


def script_left_hand(config: SceneConfig, cam_centers: np.ndarray, rng: np.random.Generator) -> HandTrack:
    """左手は窓の左下で待機する（接触なし）"""
    rest = np.array(LEFT_REST) * config.camera_size - config.camera_size / 2
    centers = cam_centers + rest + rng.normal(0.0, config.hand_jitter, size=cam_centers.shape)
    centers = np.clip(centers, 0.0, float(config.arena_size))
    return HandTrack('left', centers, [None] * len(cam_centers))


def frame_truth(
    config: SceneConfig,
    k: int,
    origin: np.ndarray,
    tracks: List[ObjectTrack],
    hands: List[HandTrack],
) -> FrameTruth:
    """フレーム k の見えている手・物体をカメラ座標で返す"""
    ox, oy = float(origin[0]), float(origin[1])
    size = config.camera_size
    truth = FrameTruth(frame_index=k, camera_origin=(ox, oy))
    for track in tracks:
        xc, yc, w, h = track.box(k)
        box = clamp_box((xc - ox, yc - oy, w, h), size, size)
        if box is not None:
            truth.objects.append(ObjectTruth(category=track.category, box=box))
    diameter = 2 * config.hand_radius
    for hand in hands:
        hx, hy = hand.centers[k]
        box = clamp_box((hx - ox, hy - oy, diameter, diameter), size, size)
        if box is not None:
            truth.hands.append(HandTruth(side=hand.side, box=box, contact_category=hand.contacts[k]))
    return truth


def generate_clip(
    config: SceneConfig,
    clip_id: int = 0,
    detector: Optional[OracleDetectorConfig] = None,
) -> ClipRecord:
    """合成クリップを1本生成する

    Args:
        config: シーン設定
        clip_id: クリップ番号（乱数サブストリームの名前にも使う）
        detector: アノテーション用のオラクル検出器設定（None なら既定値）

    Returns:
        フレーム・真値・アノテーションを持つ ClipRecord

    Raises:
        ValueError: 生成できない設定
    """
    check_feasible(config)
    detector = detector or OracleDetectorConfig()

    tracks = place_objects(config, substream(config.seed, 'data', clip_id, 'layout'))
    target_index = int(substream(config.seed, 'data', clip_id, 'target').integers(len(tracks)))
    target = tracks[target_index]
    cam_centers = camera_path(config, target, substream(config.seed, 'data', clip_id, 'camera'))

    hands = [script_right_hand(config, tracks, target_index, cam_centers,
                               substream(config.seed, 'data', clip_id, 'hand', 'right'))]
    if config.num_hands == 2:
        hands.append(script_left_hand(config, cam_centers, substream(config.seed, 'data', clip_id, 'hand', 'left')))

    origins = cam_centers - config.camera_size / 2
    frames = []
    truth = []
    for k in range(config.num_frames):
        state = SceneState(
            camera_origin=(float(origins[k, 0]), float(origins[k, 1])),
            camera_size=(config.camera_size, config.camera_size),
            objects=[(t.category, t.box(k)) for t in tracks],
            hands=[((float(h.centers[k, 0]), float(h.centers[k, 1])), config.hand_radius) for h in hands],
        )
        frames.append(render_frame(state))
        truth.append(frame_truth(config, k, origins[k], tracks, hands))

    annotations = build_annotations(truth, config, detector, substream(config.seed, 'data', clip_id, 'detector'))
    return ClipRecord(
        clip_id=clip_id,
        frames=np.stack(frames),
        fps=config.clip_fps,
        native_size=(config.camera_size, config.camera_size),
        action_start_index=config.action_start_index,
        target_category=target.category,
        seed=config.seed,
        truth=truth,
        annotations=annotations,
    )


def generate_clips(
    config: SceneConfig,
    num_clips: int,
    detector: Optional[OracleDetectorConfig] = None,
    first_id: int = 0,
    show_progress: bool = False,
) -> List[ClipRecord]:
    """クリップをまとめて生成する"""
    check_feasible(config)
    ids = range(first_id, first_id + num_clips)
    if show_progress:
        ids = tqdm(ids, desc="Generating clips", unit="clip")
    clips = [generate_clip(config, clip_id, detector) for clip_id in ids]
    logger.info(f"Generated {len(clips)} clips (seed={config.seed}, fps={config.clip_fps}, "
                f"frames/clip={config.num_frames})")
    return clips
