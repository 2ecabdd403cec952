"""学習ループ

エポックごとに seed から決まる順序でクリップを並べ替え、バッチ（クリップ平均の損失）
ごとに SGD を1ステップ進める。エポックの終わりに損失の内訳と検証 AP_avg を
metrics.jsonl に1行追記し、epoch_<k>/ と最良の best/ にチェックポイントを書く。
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger
from tqdm import tqdm

from src.config import AP_THRESHOLDS, Config, LossWeights, TrainConfig
from src.errors import DataError, NumericError
from src.evaluation.evaluator import evaluate
from src.models import Sample
from src.network.anacto import AnactoModel
from src.numeric.optim import sgd_step
from src.numeric.tensor import Tape, Tensor, grad
from src.pipeline.dataset import build_samples
from src.training.losses import LossBreakdown, sample_loss
from src.utils.seeding import substream
from src.world.storage import load_dataset

METRICS_NAME = 'metrics.jsonl'
BEST_DIR = 'best'


@dataclass
class EpochMetrics:
    """1エポックの記録（ステップ平均の損失と検証 AP_avg）"""
    epoch: int
    loss_feat: float
    loss_cao: float
    loss_nao: float
    loss_total: float
    val_ap_avg: Optional[float] = None
    steps: int = 0

    def to_dict(self) -> dict:
        return {
            'epoch': self.epoch,
            'loss_feat': self.loss_feat,
            'loss_cao': self.loss_cao,
            'loss_nao': self.loss_nao,
            'loss_total': self.loss_total,
            'val_ap_avg': self.val_ap_avg,
        }


@dataclass
class TrainResult:
    """学習結果"""
    history: List[EpochMetrics] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_ap_avg: Optional[float] = None
    steps: int = 0


def batch_loss(model: AnactoModel, batch: Sequence[Sample], weights: LossWeights,
               teacher_forcing: bool = True) -> LossBreakdown:
    """バッチ内クリップの損失の平均（学習率がバッチサイズに依存しないよう和ではなく平均）"""
    parts = [sample_loss(model, sample, weights, teacher_forcing) for sample in batch]
    count = float(len(parts))

    def mean_of(name: str) -> Tensor:
        total = getattr(parts[0], name)
        for part in parts[1:]:
            total = total + getattr(part, name)
        return total / count

    return LossBreakdown(feat=mean_of('feat'), cao=mean_of('cao'), nao=mean_of('nao'), total=mean_of('total'))


class Trainer:
    """T-ANACTO / ベースライン共通の学習器

    Attributes:
        model: 学習するモデル
        config: 学習設定
        weights: アブレーション適用後の損失重み
    """

    def __init__(
        self,
        model: AnactoModel,
        config: TrainConfig,
        train_samples: Sequence[Sample],
        val_samples: Optional[Sequence[Sample]] = None,
        config_echo: Optional[dict] = None,
        thresholds: Sequence[float] = AP_THRESHOLDS,
        out_dir: Optional[str] = None,
        show_progress: bool = True,
    ):
        """初期化

        Raises:
            DataError: 学習サンプルがない、またはサンプルとモデルの num_frames 不一致
        """
        if not train_samples:
            raise DataError("No training samples with NAO ground truth")
        for sample in list(train_samples) + list(val_samples or []):
            if sample.num_frames != model.config.num_frames:
                raise DataError(f"Clip {sample.clip_id} has {sample.num_frames} frames but the model expects "
                                f"num_frames={model.config.num_frames}")
        self.model = model
        self.config = config
        self.weights = LossWeights.for_ablation(config.ablation, config.loss)
        self.train_samples = list(train_samples)
        self.val_samples = list(val_samples) if val_samples else None
        self.config_echo = config_echo if config_echo is not None else {'model': asdict(model.config)}
        self.thresholds = tuple(thresholds)
        self.out_dir = Path(out_dir) if out_dir else None
        self.show_progress = show_progress
        self.params = model.parameters()

    def epoch_order(self, epoch: int) -> List[int]:
        """エポックのクリップ順（seed とエポック番号で決まる）"""
        rng = substream(self.config.seed, 'shuffle', epoch)
        return [int(i) for i in rng.permutation(len(self.train_samples))]

    def train_step(self, batch: Sequence[Sample], step: int) -> dict:
        """1バッチで勾配を求めて SGD を適用する

        Raises:
            NumericError: 損失・勾配に NaN/Inf が出た
        """
        try:
            with Tape():
                breakdown = batch_loss(self.model, batch, self.weights, self.config.teacher_forcing)
                grads = grad(breakdown.total, self.params)
        except NumericError as e:
            clip_ids = [sample.clip_id for sample in batch]
            raise NumericError(f"Non-finite value at step {step} (clips {clip_ids}): {e}") from e
        sgd_step(self.params, grads, self.config.sgd)
        return breakdown.values()

    def validation_ap(self) -> float:
        samples = self.val_samples or self.train_samples
        report = evaluate(self.model, samples, self.config.tau_a, self.thresholds)
        return report.ap_avg

    def _save(self, name: str, epoch: int, metrics: EpochMetrics):
        if self.out_dir is None:
            return
        self.model.save(str(self.out_dir / name), self.config_echo, seed=self.config.seed,
                        epoch=epoch, extra=metrics.to_dict())

    def _append_metrics(self, metrics: EpochMetrics):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / METRICS_NAME, 'a', encoding='utf-8') as f:
            f.write(json.dumps(metrics.to_dict(), sort_keys=True) + '\n')

    def run(self) -> TrainResult:
        """学習を実行する"""
        result = TrainResult()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / METRICS_NAME).write_text('', encoding='utf-8')

        logger.info("=" * 60)
        logger.info(f"Training {self.model.kind} ({self.config.ablation}) on {len(self.train_samples)} clips: "
                    f"epochs={self.config.sgd.epochs}, lr={self.config.sgd.learning_rate}, "
                    f"batch={self.config.batch_size}, max_steps={self.config.max_steps}")
        logger.info("=" * 60)

        size = self.config.batch_size
        for epoch in range(1, self.config.sgd.epochs + 1):
            order = self.epoch_order(epoch)
            batches = [[self.train_samples[i] for i in order[start:start + size]]
                       for start in range(0, len(order), size)]
            totals = {'loss_feat': 0.0, 'loss_cao': 0.0, 'loss_nao': 0.0, 'loss_total': 0.0}
            steps = 0
            progress = tqdm(batches, desc=f"epoch {epoch}", disable=not self.show_progress, leave=False)
            for batch in progress:
                if self.config.max_steps is not None and result.steps >= self.config.max_steps:
                    break
                values = self.train_step(batch, result.steps + 1)
                for key in totals:
                    totals[key] += values[key]
                steps += 1
                result.steps += 1
                result.step_losses.append(values['loss_total'])
                progress.set_postfix(loss=f"{values['loss_total']:.4f}")

            if steps == 0:
                break
            metrics = EpochMetrics(epoch=epoch, steps=steps, **{k: v / steps for k, v in totals.items()})
            metrics.val_ap_avg = self.validation_ap()
            result.history.append(metrics)
            self._append_metrics(metrics)
            self._save(f"epoch_{epoch}", epoch, metrics)
            if result.best_ap_avg is None or metrics.val_ap_avg > result.best_ap_avg:
                result.best_ap_avg = metrics.val_ap_avg
                result.best_epoch = epoch
                self._save(BEST_DIR, epoch, metrics)
            logger.info(f"Epoch {epoch}: loss_total={metrics.loss_total:.6f} (feat={metrics.loss_feat:.6f}, "
                        f"cao={metrics.loss_cao:.6f}, nao={metrics.loss_nao:.6f}) val_ap_avg={metrics.val_ap_avg:.4f}")

        logger.info(f"Training finished after {result.steps} steps; best epoch {result.best_epoch} "
                    f"(AP_avg={result.best_ap_avg})")
        return result


def load_samples(config: Config, data_dir: str):
    """データセットを読み込み、モデル設定に合わせて Sample を作る

    フレームとアノテーションはクリップの fps のまま使う。annotation.target_fps は
    annotate サブコマンドの書き出しにだけ効くので、異なる値が設定されていれば警告する。

    Returns:
        (Sample のリスト, SampleStats)
    """
    clips = load_dataset(data_dir)
    target_fps = config.annotation.target_fps
    mismatched = sorted({clip.fps for clip in clips if target_fps is not None and clip.fps != target_fps})
    if mismatched:
        logger.warning(f"annotation.target_fps={target_fps} is ignored when building samples; "
                       f"clips in {data_dir} are used at their native fps {mismatched}")
    return build_samples(
        clips,
        image_size=config.model.image_size,
        num_categories=config.model.num_categories,
        tau_a=config.training.tau_a,
        num_frames=config.model.num_frames,
        annotation=config.annotation,
        target=config.training.target,
        clamp=config.training.allow_short_history,
    )


def run_training(config: Config, show_progress: bool = True) -> TrainResult:
    """設定に従ってデータを読み込み、モデルを作って学習する

    Raises:
        DataError: データセットが指定されていない・読めない
    """
    training = config.training
    if not training.data_dir:
        raise DataError("training.data_dir is not set")
    train_samples, _ = load_samples(config, training.data_dir)
    val_samples = None
    if training.val_dir:
        val_samples, _ = load_samples(config, training.val_dir)

    model = AnactoModel(config.model, kind=training.model, seed=training.seed)
    trainer = Trainer(
        model,
        training,
        train_samples,
        val_samples,
        config_echo=config.to_dict(),
        thresholds=config.evaluation.thresholds,
        out_dir=training.out_dir,
        show_progress=show_progress,
    )
    return trainer.run()
