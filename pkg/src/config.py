"""設定管理

config.yamlと環境変数から設定を読み込み、管理する。
"""
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv

MODEL_KINDS = ('tanacto', 'recurrent', 'framewise')
ABLATIONS = ('full', 'nao_only', 'cao_plus_nao')
TARGET_MODES = ('contact', 'last_observed')
FUSION_MODES = ('sum', 'concat_project')
AP_THRESHOLDS = (0.05, 0.10, 0.20, 0.50)


@dataclass
class LoggingConfig:
    """ログ設定"""
    level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'INFO'
    file: Optional[str] = None
    console: bool = True


@dataclass
class SgdConfig:
    """SGD 設定（既定は学習率 1e-5, 50 エポック）"""
    learning_rate: float = 1e-5
    epochs: int = 50


@dataclass
class SceneConfig:
    """合成エゴセントリック世界の設定

    座標はすべてピクセル。アリーナ（世界）をカメラ窓で切り出してフレームにする。
    """
    arena_size: int = 96
    camera_size: int = 32
    num_objects: int = 4
    num_categories: int = 8
    clip_fps: float = 8.0
    clip_len: float = 12.0
    contact_time: float = 10.5
    camera_drift: float = 1.5
    object_size_min: float = 6.0
    object_size_max: float = 10.0
    object_speed: float = 0.0
    hand_radius: float = 3.0
    hand_jitter: float = 0.4
    num_hands: int = 1
    prior_contact_prob: float = 0.5
    release_time: float = 9.0
    annotation_miss_prob: float = 0.03
    seed: int = 0

    @property
    def num_frames(self) -> int:
        return int(round(self.clip_len * self.clip_fps))

    @property
    def action_start_index(self) -> int:
        return int(round(self.contact_time * self.clip_fps))

    def errors(self) -> List[str]:
        errors = []
        if self.camera_size > self.arena_size:
            errors.append("scene.camera_size must be <= scene.arena_size")
        if self.clip_fps <= 0:
            errors.append("scene.clip_fps must be > 0")
        if not 0 < self.action_start_index < self.num_frames:
            errors.append("scene.contact_time must lie strictly inside the clip")
        if self.num_objects < 1 or self.num_objects > self.num_categories:
            errors.append("scene.num_objects must be in [1, num_categories]")
        if self.num_hands not in (1, 2):
            errors.append("scene.num_hands must be 1 or 2")
        if self.camera_drift < 0:
            errors.append("scene.camera_drift must be >= 0")
        if not 0 < self.object_size_min <= self.object_size_max:
            errors.append("scene.object_size_min/max must satisfy 0 < min <= max")
        for name in ('prior_contact_prob', 'annotation_miss_prob'):
            if not 0.0 <= getattr(self, name) < 1.0:
                errors.append(f"scene.{name} must be in [0, 1)")
        return errors


@dataclass
class OracleDetectorConfig:
    """オラクル物体検出器の設定"""
    center_noise_sigma: float = 1.0
    scale_noise_sigma: float = 0.05
    dropout_prob: float = 0.05
    epsilon: float = 1e-3
    confidence_scale_px: float = 4.0

    def errors(self) -> List[str]:
        errors = []
        if self.center_noise_sigma < 0 or self.scale_noise_sigma < 0:
            errors.append("detector noise sigmas must be >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            errors.append("detector.dropout_prob must be in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            errors.append("detector.epsilon must be in (0, 1)")
        return errors


@dataclass
class AnnotationConfig:
    """アノテーション整形の設定"""
    target_fps: Optional[float] = None
    min_score: float = 0.5
    lookup: int = 10

    def errors(self) -> List[str]:
        errors = []
        if self.target_fps is not None and self.target_fps <= 0:
            errors.append("annotation.target_fps must be > 0")
        if self.lookup < 1:
            errors.append("annotation.lookup must be >= 1")
        return errors


@dataclass
class ModelConfig:
    """モデル設定（既定は卓上スケール）"""
    image_size: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    num_categories: int = 8
    num_frames: int = 10
    fusion_mode: Literal['sum', 'concat_project'] = 'sum'

    @classmethod
    def desk(cls, **overrides) -> 'ModelConfig':
        return replace(cls(), **overrides)

    @classmethod
    def vit_base(cls, **overrides) -> 'ModelConfig':
        """ViT-B/16 相当（224×224, 16×16 パッチ, 768 次元）"""
        return replace(cls(image_size=224, patch_size=16, embed_dim=768, enc_layers=12,
                           dec_layers=12, heads=12), **overrides)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def det_dim(self) -> int:
        return self.num_categories * 5

    def errors(self) -> List[str]:
        errors = []
        if self.patch_size <= 0 or self.image_size % self.patch_size:
            errors.append("model.image_size must be divisible by model.patch_size")
        if self.heads <= 0 or self.embed_dim % self.heads:
            errors.append("model.embed_dim must be divisible by model.heads")
        if self.fusion_mode not in FUSION_MODES:
            errors.append(f"model.fusion_mode must be one of {FUSION_MODES}")
        if self.num_frames < 1:
            errors.append("model.num_frames must be >= 1")
        return errors


@dataclass
class LossWeights:
    """損失の重み（λ1: L_cao, λ2: L_nao, 特徴損失）"""
    lambda1: float = 0.5
    lambda2: float = 1.0
    feat_weight: float = 1.0

    @classmethod
    def for_ablation(cls, ablation: str, base: Optional['LossWeights'] = None) -> 'LossWeights':
        """アブレーション名に対応する重み"""
        base = base or cls()
        if ablation == 'full':
            return base
        if ablation == 'nao_only':
            return replace(base, lambda1=0.0, feat_weight=0.0)
        if ablation == 'cao_plus_nao':
            return replace(base, feat_weight=0.0)
        raise ValueError(f"Unknown ablation: {ablation}")


@dataclass
class TrainConfig:
    """学習設定"""
    loss: LossWeights = field(default_factory=LossWeights)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    batch_size: int = 4
    seed: int = 0
    model: Literal['tanacto', 'recurrent', 'framewise'] = 'tanacto'
    ablation: Literal['full', 'nao_only', 'cao_plus_nao'] = 'full'
    tau_a: float = 0.25
    target: Literal['contact', 'last_observed'] = 'contact'
    teacher_forcing: bool = True
    max_steps: Optional[int] = None
    allow_short_history: bool = False
    data_dir: Optional[str] = None
    val_dir: Optional[str] = None
    out_dir: str = 'output/run'

    def errors(self) -> List[str]:
        errors = []
        if self.sgd.learning_rate <= 0:
            errors.append("training.sgd.learning_rate must be > 0")
        if self.sgd.epochs < 1:
            errors.append("training.sgd.epochs must be >= 1")
        if self.batch_size < 1:
            errors.append("training.batch_size must be >= 1")
        if min(self.loss.lambda1, self.loss.lambda2, self.loss.feat_weight) < 0:
            errors.append("training.loss weights must be >= 0")
        if self.model not in MODEL_KINDS:
            errors.append(f"training.model must be one of {MODEL_KINDS}")
        if self.ablation not in ABLATIONS:
            errors.append(f"training.ablation must be one of {ABLATIONS}")
        if self.target not in TARGET_MODES:
            errors.append(f"training.target must be one of {TARGET_MODES}")
        if self.tau_a <= 0:
            errors.append("training.tau_a must be > 0")
        if self.max_steps is not None and self.max_steps < 1:
            errors.append("training.max_steps must be >= 1")
        return errors


@dataclass
class EvalConfig:
    """評価設定"""
    thresholds: Tuple[float, ...] = AP_THRESHOLDS
    scored: bool = False
    tau_a: float = 0.25

    def errors(self) -> List[str]:
        if any(not 0.0 <= t <= 1.0 for t in self.thresholds):
            return ["evaluation.thresholds must lie in [0, 1]"]
        return []


@dataclass
class OutputConfig:
    """出力設定"""
    out_dir: str = 'output'
    log_file: Optional[str] = 'output/anacto.log'


def _build(cls, data: Optional[dict]):
    """dict から dataclass を作る（未知のキーはエラー）"""
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown keys for {cls.__name__}: {unknown}")
    return cls(**data)


@dataclass
class Config:
    """全体設定

    config.yamlと環境変数から読み込んだ設定を保持する。
    """
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector: OracleDetectorConfig = field(default_factory=OracleDetectorConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def load(cls, config_path: str = 'config.yaml', env_path: str = '.env') -> 'Config':
        """設定ファイルと環境変数から設定を読み込む

        Args:
            config_path: config.yamlのパス
            env_path: .envファイルのパス

        Returns:
            Configインスタンス

        Raises:
            FileNotFoundError: 設定ファイルが存在しない
            ValueError: 未知のキー・プリセット
        """
        # .envファイル読み込み
        if Path(env_path).exists():
            load_dotenv(env_path)

        if not Path(config_path).exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")

        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}

        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> 'Config':
        """YAML 由来の dict から設定を組み立てる"""
        model_data = dict(data.get('model') or {})
        preset = model_data.pop('preset', 'desk')
        if preset == 'desk':
            model_config = ModelConfig.desk(**model_data)
        elif preset == 'vit_base':
            model_config = ModelConfig.vit_base(**model_data)
        else:
            raise ValueError(f"Unknown model preset: {preset}")

        training_data = dict(data.get('training') or {})
        loss = _build(LossWeights, training_data.pop('loss', None))
        sgd = _build(SgdConfig, training_data.pop('sgd', None))
        training_config = _build(TrainConfig, training_data)
        training_config.loss = loss
        training_config.sgd = sgd

        eval_data = dict(data.get('evaluation') or {})
        if 'thresholds' in eval_data:
            eval_data['thresholds'] = tuple(float(t) for t in eval_data['thresholds'])

        config = cls(
            logging=_build(LoggingConfig, data.get('logging')),
            scene=_build(SceneConfig, data.get('scene')),
            detector=_build(OracleDetectorConfig, data.get('detector')),
            annotation=_build(AnnotationConfig, data.get('annotation')),
            model=model_config,
            training=training_config,
            evaluation=_build(EvalConfig, eval_data),
            output=_build(OutputConfig, data.get('output')),
        )

        # 環境変数によるログレベルの上書き
        env_level = os.getenv('ANACTO_LOG_LEVEL')
        if env_level:
            config.logging.level = env_level.upper()
        return config

    def to_dict(self) -> dict:
        """全既定値を具体化した dict（RunManifest に記録する）"""
        data = asdict(self)
        data['evaluation']['thresholds'] = list(self.evaluation.thresholds)
        return data

    def validate(self) -> List[str]:
        """設定のバリデーション

        Returns:
            エラーメッセージのリスト（空ならバリデーション成功）
        """
        errors = []
        if self.logging.level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR'):
            errors.append(f"logging.level is invalid: {self.logging.level}")
        errors.extend(self.scene.errors())
        errors.extend(self.detector.errors())
        errors.extend(self.annotation.errors())
        errors.extend(self.model.errors())
        errors.extend(self.training.errors())
        errors.extend(self.evaluation.errors())
        if self.scene.num_categories != self.model.num_categories:
            errors.append("scene.num_categories must equal model.num_categories")
        return errors

    def create_output_dirs(self):
        """出力ディレクトリを作成する"""
        Path(self.output.out_dir).mkdir(parents=True, exist_ok=True)
        if self.output.log_file:
            Path(self.output.log_file).parent.mkdir(parents=True, exist_ok=True)
