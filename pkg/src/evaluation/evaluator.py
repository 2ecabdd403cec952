"""評価

各クリップで自己回帰推論を行い、フレーム内にクランプした ŷ_n を NAO 真値と比べて
閾値ごとの AP をまとめる。
"""
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger
from tqdm import tqdm

from src.config import AP_THRESHOLDS, ModelConfig
from src.errors import DataError
from src.evaluation.metrics import ap_at, iou
from src.models import BoxPair, EvalReport, Sample
from src.network.anacto import AnactoModel
from src.numeric.checkpoint import load_checkpoint, save_checkpoint

ORACLE_KIND = 'oracle'


class OracleModel:
    """真値をそのまま返す評価用モデル（パラメータなしのチェックポイントとして保存できる）"""
    kind = ORACLE_KIND

    def __init__(self, config: Optional[ModelConfig] = None):
        self.config = config

    def predict_nao(self, sample: Sample) -> BoxPair:
        return BoxPair(sample.nao.boxes.copy(), sample.nao.valid.copy())

    def save(self, directory: str, config: dict, seed: int = 0, epoch=None, extra=None):
        return save_checkpoint(directory, {}, self.kind, config, seed, epoch, extra)


def load_model(directory: str):
    """チェックポイントからモデル（またはオラクル）を復元する"""
    manifest, _ = load_checkpoint(directory)
    if manifest.get('model_kind') == ORACLE_KIND:
        model_section = manifest.get('config', {}).get('model')
        return OracleModel(ModelConfig(**model_section) if model_section else None)
    return AnactoModel.load(directory)


def expected_frames(model) -> Optional[int]:
    config = getattr(model, 'config', None)
    return getattr(config, 'num_frames', None)


def detection_support(prediction: BoxPair, sample: Sample) -> np.ndarray:
    """スロットごとの確信度: 最後の観測フレームの検出との IoU × 検出スコアの最大値"""
    detections = sample.detections[-1]
    scores = np.zeros(2)
    for slot in np.flatnonzero(prediction.valid):
        for i in range(detections.num_categories):
            if detections.is_empty(i):
                continue
            support = iou(prediction.boxes[slot], detections.boxes[i]) * detections.scores[i]
            scores[slot] = max(scores[slot], support)
    return scores


def evaluate(
    model,
    samples: Sequence[Sample],
    tau_a: float,
    thresholds: Sequence[float] = AP_THRESHOLDS,
    scored: bool = False,
    n_excluded: int = 0,
    model_id: Optional[str] = None,
    show_progress: bool = False,
) -> EvalReport:
    """モデルを評価してレポートを作る

    Args:
        model: predict_nao(sample) を持つモデル
        samples: 評価サンプル（NAO 真値のあるもの）
        tau_a: TTC（秒）
        thresholds: IoU 閾値
        scored: スコア順 AP を使うか（False なら一致率）
        n_excluded: 前段で除外したクリップ数（レポートに記録する）
        model_id: レポートに載せる識別子
        show_progress: tqdm の進捗表示

    Returns:
        EvalReport

    Raises:
        DataError: サンプルがない、またはモデルとデータの num_frames 不一致
    """
    if not samples:
        raise DataError("No samples with NAO ground truth to evaluate")
    expected = expected_frames(model)
    for sample in samples:
        if expected is not None and sample.num_frames != expected:
            raise DataError(f"Clip {sample.clip_id} has {sample.num_frames} frames but the model expects "
                            f"num_frames={expected}")

    predictions: List[BoxPair] = []
    targets: List[BoxPair] = []
    scores: List[np.ndarray] = []
    for sample in tqdm(samples, desc='eval', disable=not show_progress):
        prediction = model.predict_nao(sample)
        predictions.append(prediction)
        targets.append(sample.nao)
        if scored:
            scores.append(detection_support(prediction, sample))

    ap = {float(t): ap_at(predictions, targets, t, scores if scored else None) for t in thresholds}
    report = EvalReport(
        ap=ap,
        ap_avg=float(np.mean(list(ap.values()))),
        n_clips=len(samples),
        model_id=model_id or getattr(model, 'kind', type(model).__name__),
        tau_a=tau_a,
        protocol='scored' if scored else 'scoreless',
        n_excluded=n_excluded,
    )
    logger.info(f"Evaluated {report.model_id} on {report.n_clips} clips: AP_avg={report.ap_avg:.4f}")
    return report
