"""モデル本体

T-ANACTO と2つのベースラインを同じ入出力で扱う。ボックスはモデル内部では
image_size で正規化した座標、predict_nao の戻り値だけピクセル座標。
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from src.config import MODEL_KINDS, ModelConfig
from src.errors import DataError
from src.models import BoxPair, DetectionSet, Sample
from src.network.baselines import FramewiseModel, RecurrentAggregator
from src.network.decoder import CausalDecoder
from src.network.encoder import FrameEncoder
from src.numeric.checkpoint import load_checkpoint, save_checkpoint
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tensor
from src.utils.seeding import substream


@dataclass
class ModelOutput:
    """順伝播の結果

    Attributes:
        z: (T, D) フレーム埋め込み（時間位置埋め込みの前。特徴損失の目標）
        zhat: (T, D) 予測特徴
        yhat: (T, 8) 正規化座標のボックス。yhat[T−1] が NAO の予測
    """
    z: Tensor
    zhat: Tensor
    yhat: Tensor


class AnactoModel:
    """次接触物体の予測モデル

    Attributes:
        config: モデル設定
        kind: 'tanacto' / 'recurrent' / 'framewise'
        seed: 初期化 seed
        store: 全パラメータ
    """

    def __init__(self, config: ModelConfig, kind: str = 'tanacto', seed: int = 0):
        errors = config.errors()
        if errors:
            raise ValueError(f"Invalid model config: {errors}")
        if kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind: {kind}")
        self.config = config
        self.kind = kind
        self.seed = seed
        self.store = ParameterStore(substream(seed, 'init', kind))

        self.encoder = None
        self.decoder = None
        self.aggregator = None
        self.framewise = None
        if kind == 'tanacto':
            self.encoder = FrameEncoder(self.store, config)
            self.decoder = CausalDecoder(self.store, config)
        elif kind == 'recurrent':
            self.encoder = FrameEncoder(self.store, config, temporal=False)
            self.aggregator = RecurrentAggregator(self.store, config)
        else:
            self.framewise = FramewiseModel(self.store, config)
        logger.debug(f"Built {kind} model: {len(self.store)} tensors, {self.store.num_values()} values")

    def parameters(self) -> List[Tensor]:
        return self.store.tensors()

    def embed(self, frames: np.ndarray, detections: Sequence[DetectionSet]) -> Tensor:
        """フレーム埋め込み z (T, D)"""
        if self.framewise is not None:
            return self.framewise.encoder(frames, detections)
        return self.encoder(frames, detections)

    def forward_frames(
        self,
        frames: np.ndarray,
        detections: Sequence[DetectionSet],
        teacher: Optional[Sequence[BoxPair]] = None,
    ) -> ModelOutput:
        """フレーム列と検出列から ẑ, ŷ を求める

        Args:
            frames: (T, S, S, 3) uint8
            detections: フレームごとの DetectionSet（モデル入力座標）
            teacher: 教師強制用の接触物体列（None なら自己回帰）
        """
        if len(frames) == 0:
            raise ValueError("Cannot run the model on an empty sequence (T=0)")
        z = self.embed(frames, detections)
        if self.kind == 'tanacto':
            out = self.decoder(self.encoder.add_temporal(z), teacher)
        elif self.kind == 'recurrent':
            out = self.aggregator(z, teacher)
        else:
            out = self.framewise.decoder(self.framewise.encoder.add_temporal(z), teacher)
        return ModelOutput(z=z, zhat=out.zhat, yhat=out.yhat)

    def check_sample(self, sample: Sample):
        if sample.image_size != self.config.image_size:
            raise ValueError(f"Sample image_size {sample.image_size} != model image_size {self.config.image_size}")
        if sample.num_frames != self.config.num_frames:
            raise ValueError(f"Sample has {sample.num_frames} frames but model expects num_frames="
                             f"{self.config.num_frames}")

    def forward(self, sample: Sample, teacher_forcing: bool = False) -> ModelOutput:
        self.check_sample(sample)
        teacher = sample.cao if teacher_forcing else None
        return self.forward_frames(sample.frames, sample.detections, teacher)

    def predict_nao(self, sample: Sample) -> BoxPair:
        """自己回帰推論で ŷ_n を求め、ピクセル座標に戻してフレーム内にクランプする

        観測区間で検出されなかった手のスロットは無効（全ゼロ）にする。
        """
        out = self.forward(sample, teacher_forcing=False)
        vector = out.yhat.data[-1] * float(sample.image_size)
        pair = BoxPair.from_vector(vector, valid=sample.hands)
        return pair.clamped(sample.image_size, sample.image_size)

    def save(self, directory: str, config: dict, seed: Optional[int] = None,
             epoch: Optional[int] = None, extra: Optional[dict] = None):
        """チェックポイントを保存する（config は具体化済みの全体設定）"""
        return save_checkpoint(directory, self.store.state_dict(), self.kind, config,
                               self.seed if seed is None else seed, epoch, extra)

    @classmethod
    def load(cls, directory: str) -> 'AnactoModel':
        """チェックポイントからモデルを復元する"""
        manifest, state = load_checkpoint(directory)
        try:
            model_config = ModelConfig(**manifest['config']['model'])
        except (KeyError, TypeError) as e:
            raise DataError(f"Checkpoint {directory} has no usable model config: {e}") from e
        model = cls(model_config, kind=manifest['model_kind'], seed=manifest['seed'])
        model.store.load_state_dict(state)
        return model

