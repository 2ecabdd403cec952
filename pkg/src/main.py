"""次接触物体予測ツール - メインスクリプト

サブコマンド（gen-data / annotate / train / eval / attn-dump / compare）を振り分ける。
各サブコマンドは主出力の隣に <出力>.manifest.json を書き、--manifest で同じ実行を再現できる。
"""
import argparse
import json
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from loguru import logger

from src import __version__
from src.config import MODEL_KINDS, Config
from src.errors import AnactoError, DataError, UsageError
from src.evaluation.evaluator import evaluate, load_model
from src.models import RunManifest
from src.network.attention_map import export_attention_maps
from src.pipeline.annotations import curate_nao_gt, normalize_fps, threshold_record
from src.pipeline.dataset import build_sample, build_samples
from src.training.trainer import run_training
from src.utils.logger import configure_logging
from src.utils.reporter import Reporter
from src.world.scene import generate_clips
from src.world.storage import META_NAME, load_dataset, read_annotations, write_annotations, write_dataset

DEFAULT_CONFIG = 'config.yaml'
EXIT_OK = 0
EXIT_USAGE = 1

# CLI フラグ名 → 設定フィールド名
SCENE_FLAGS = {
    'fps': 'clip_fps',
    'clip_len': 'clip_len',
    'contact_time': 'contact_time',
    'camera_drift': 'camera_drift',
    'num_objects': 'num_objects',
    'num_hands': 'num_hands',
    'object_speed': 'object_speed',
    'prior_contact_prob': 'prior_contact_prob',
    'annotation_miss_prob': 'annotation_miss_prob',
}
DETECTOR_FLAGS = {
    'center_noise': 'center_noise_sigma',
    'scale_noise': 'scale_noise_sigma',
    'dropout': 'dropout_prob',
}


class CliParser(argparse.ArgumentParser):
    """使い方の誤りを終了コード 1 で報告するパーサ"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dashed(value: str) -> str:
    return value.replace('_', '-')


def _undashed(value: str) -> str:
    return value.replace('-', '_')


def build_parser() -> CliParser:
    """引数パーサを組み立てる"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None, help=f'設定ファイルパス（既定: {DEFAULT_CONFIG}）')
    common.add_argument('--log-level', type=str, default=None, help='ログレベル（DEBUG / INFO / WARNING / ERROR）')
    common.add_argument('--manifest', type=str, default=None, help='RunManifest から実行を再現する')
    common.add_argument('--seed', type=int, default=None, help='ルート seed')

    parser = CliParser(prog='anacto', description='次接触物体予測ツール')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='subcommand', parser_class=CliParser)

    p = sub.add_parser('gen-data', parents=[common], help='合成クリップを生成する')
    p.add_argument('--num-clips', type=int, default=8)
    p.add_argument('--first-id', type=int, default=0)
    p.add_argument('--out', type=str)
    p.add_argument('--fps', type=float)
    p.add_argument('--clip-len', type=float)
    p.add_argument('--contact-time', type=float)
    p.add_argument('--camera-drift', type=float)
    p.add_argument('--num-objects', type=int)
    p.add_argument('--num-hands', type=int, choices=(1, 2))
    p.add_argument('--object-speed', type=float)
    p.add_argument('--prior-contact-prob', type=float)
    p.add_argument('--annotation-miss-prob', type=float)
    p.add_argument('--center-noise', type=float)
    p.add_argument('--scale-noise', type=float)
    p.add_argument('--dropout', type=float)

    p = sub.add_parser('annotate', parents=[common], help='アノテーションを整形し NAO 真値を求める')
    p.add_argument('--in', dest='input', type=str)
    p.add_argument('--src-fps', type=float, help='元のフレームレート（省略時は隣の meta.json）')
    p.add_argument('--target-fps', type=float)
    p.add_argument('--threshold', type=float)
    p.add_argument('--lookup', type=int)
    p.add_argument('--action-start', type=int, help='行動開始フレーム（省略時は隣の meta.json）')
    p.add_argument('--out', type=str)

    p = sub.add_parser('train', parents=[common], help='モデルを学習する')
    p.add_argument('--data', type=str)
    p.add_argument('--val-data', type=str)
    p.add_argument('--model', choices=MODEL_KINDS)
    p.add_argument('--tau-a', type=float)
    p.add_argument('--ablation', choices=('full', 'nao-only', 'cao-plus-nao'))
    p.add_argument('--epochs', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--batch', type=int)
    p.add_argument('--max-steps', type=int)
    p.add_argument('--target', choices=('contact', 'last-observed'))
    p.add_argument('--num-frames', type=int)
    p.add_argument('--fusion', choices=('sum', 'concat-project'))
    p.add_argument('--no-teacher-forcing', action='store_true')
    p.add_argument('--allow-short-history', action='store_true')
    p.add_argument('--out', type=str)

    for name, text in (('eval', 'チェックポイントを評価する'), ('compare', '複数チェックポイントの比較表を作る')):
        p = sub.add_parser(name, parents=[common], help=text)
        if name == 'eval':
            p.add_argument('--checkpoint', type=str)
            p.add_argument('--report', type=str)
            p.add_argument('--model-id', type=str)
        else:
            p.add_argument('--checkpoints', nargs='+')
            p.add_argument('--labels', nargs='+')
            p.add_argument('--out', type=str, help='テキスト表の出力先')
            p.add_argument('--csv', type=str, help='比較 CSV の出力先')
        p.add_argument('--data', type=str)
        p.add_argument('--tau-a', type=float)
        p.add_argument('--target', choices=('contact', 'last-observed'))
        p.add_argument('--num-frames', type=int)
        p.add_argument('--scored', action='store_true')
        p.add_argument('--allow-short-history', action='store_true')

    p = sub.add_parser('attn-dump', parents=[common], help='空間注意マップを書き出す')
    p.add_argument('--checkpoint', type=str)
    p.add_argument('--data', type=str)
    p.add_argument('--clip', type=int, default=0)
    p.add_argument('--tau-a', type=float)
    p.add_argument('--out', type=str)
    return parser


def load_config(path: Optional[str]) -> Config:
    """設定を読み込む（--config 省略時に config.yaml がなければ既定値）

    Raises:
        UsageError: 指定した設定ファイルがない、または内容が不正
    """
    try:
        if path is None:
            return Config.load(DEFAULT_CONFIG) if Path(DEFAULT_CONFIG).exists() else Config()
        return Config.load(path)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e
    except (ValueError, TypeError) as e:
        raise UsageError(f"Invalid config {path or DEFAULT_CONFIG}: {e}") from e


def apply_overrides(config: Config, args: argparse.Namespace) -> Config:
    """CLI フラグを設定に反映する（指定されたものだけ）"""
    given = {k: v for k, v in vars(args).items() if v is not None}
    if 'seed' in given:
        config.scene.seed = given['seed']
        config.training.seed = given['seed']
    if args.subcommand == 'gen-data':
        for flag, name in SCENE_FLAGS.items():
            if flag in given:
                setattr(config.scene, name, given[flag])
        for flag, name in DETECTOR_FLAGS.items():
            if flag in given:
                setattr(config.detector, name, given[flag])
    if args.subcommand == 'annotate':
        if 'target_fps' in given:
            config.annotation.target_fps = given['target_fps']
        if 'threshold' in given:
            config.annotation.min_score = given['threshold']
        if 'lookup' in given:
            config.annotation.lookup = given['lookup']
    if args.subcommand == 'train':
        training = config.training
        simple = {'data': 'data_dir', 'val_data': 'val_dir', 'model': 'model', 'tau_a': 'tau_a',
                  'batch': 'batch_size', 'max_steps': 'max_steps', 'out': 'out_dir'}
        for flag, name in simple.items():
            if flag in given:
                setattr(training, name, given[flag])
        if 'ablation' in given:
            training.ablation = _undashed(given['ablation'])
        if 'target' in given:
            training.target = _undashed(given['target'])
        if 'epochs' in given:
            training.sgd.epochs = given['epochs']
        if 'lr' in given:
            training.sgd.learning_rate = given['lr']
        if 'num_frames' in given:
            config.model.num_frames = given['num_frames']
        if 'fusion' in given:
            config.model.fusion_mode = _undashed(given['fusion'])
        if args.no_teacher_forcing:
            training.teacher_forcing = False
        if args.allow_short_history:
            training.allow_short_history = True
    if args.subcommand in ('eval', 'compare', 'attn-dump'):
        if 'tau_a' in given:
            config.evaluation.tau_a = given['tau_a']
        if getattr(args, 'scored', False):
            config.evaluation.scored = True
    return config


def primary_output(args: argparse.Namespace, config: Config) -> str:
    """サブコマンドの主出力（マニフェストはこの隣に置く）"""
    name = {'eval': 'report'}.get(args.subcommand, 'out')
    value = getattr(args, name, None)
    if args.subcommand == 'train' and value is None:
        value = config.training.out_dir
    if args.subcommand == 'compare' and value is None:
        value = args.csv
    if not value:
        flag = '--report' if name == 'report' else '--out'
        raise UsageError(f"{args.subcommand} requires {flag}")
    return value


def manifest_path(output: str) -> Path:
    """<出力>.manifest.json（ディレクトリ出力なら末尾の / を除いた名前）"""
    path = Path(output.rstrip('/\\') or output)
    return path.with_name(path.name + '.manifest.json')


def _recorded_args(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ('config', 'manifest', 'log_level')}


def _require(args: argparse.Namespace, *names: str):
    missing = [f"--{_dashed(n)}" for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError(f"{args.subcommand} requires {', '.join(missing)}")


# ---------------------------------------------------------------- サブコマンド

def cmd_gen_data(args: argparse.Namespace, config: Config) -> List[str]:
    """合成クリップを生成して書き出す"""
    clips = generate_clips(config.scene, args.num_clips, config.detector, first_id=args.first_id, show_progress=True)
    paths = write_dataset(clips, args.out)
    return [str(p) for p in paths]


def _clip_meta(annotations_path: Path) -> dict:
    meta_path = annotations_path.parent / META_NAME
    if not meta_path.exists():
        return {}
    with open(meta_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def cmd_annotate(args: argparse.Namespace, config: Config) -> List[str]:
    """アノテーションを fps 正規化・閾値処理し、NAO 真値を求める"""
    _require(args, 'input')
    in_path = Path(args.input)
    if in_path.is_dir():
        in_path = in_path / 'annotations.jsonl'
    records = read_annotations(str(in_path))
    meta = _clip_meta(in_path)

    src_fps = args.src_fps or meta.get('fps')
    if src_fps is None:
        raise UsageError("annotate needs --src-fps when no meta.json sits next to the annotations")
    dst_fps = config.annotation.target_fps or src_fps
    records = normalize_fps(records, src_fps, dst_fps)
    records = [threshold_record(r, config.annotation.min_score) for r in records]
    write_annotations(records, args.out)
    outputs = [args.out]

    action_start = args.action_start
    if action_start is None and 'action_start_index' in meta:
        action_start = round(meta['action_start_index'] * dst_fps / src_fps)
    if action_start is not None:
        nao = curate_nao_gt(records, action_start, config.annotation.lookup)
        nao_path = Path(args.out).with_suffix('.nao.json')
        with open(nao_path, 'w', encoding='utf-8') as f:
            json.dump({'action_start_index': action_start, 'lookup': config.annotation.lookup,
                       'nao': nao.to_dict() if nao is not None else None}, f, indent=2, sort_keys=True)
        logger.info(f"NAO ground truth {'found' if nao is not None else 'absent'} "
                    f"in [{action_start}, {action_start + config.annotation.lookup})")
        outputs.append(str(nao_path))
    logger.info(f"Wrote {len(records)} records at {dst_fps} fps to {args.out}")
    return outputs


def cmd_train(args: argparse.Namespace, config: Config) -> List[str]:
    """学習を実行する"""
    result = run_training(config)
    if not result.history:
        raise DataError("Training ran no steps")
    return [config.training.out_dir]


def _eval_samples(config: Config, model, data_dir: str, args: argparse.Namespace):
    target = _undashed(args.target) if args.target else config.training.target
    num_frames = args.num_frames or (model.config.num_frames if model.config else config.model.num_frames)
    image_size = model.config.image_size if model.config else config.model.image_size
    num_categories = model.config.num_categories if model.config else config.model.num_categories
    return build_samples(
        load_dataset(data_dir),
        image_size=image_size,
        num_categories=num_categories,
        tau_a=config.evaluation.tau_a,
        num_frames=num_frames,
        annotation=config.annotation,
        target=target,
        clamp=args.allow_short_history,
    )


def _evaluate_checkpoint(config: Config, checkpoint: str, args: argparse.Namespace, model_id: str):
    model = load_model(checkpoint)
    samples, stats = _eval_samples(config, model, args.data, args)
    return evaluate(
        model,
        samples,
        config.evaluation.tau_a,
        thresholds=config.evaluation.thresholds,
        scored=config.evaluation.scored,
        n_excluded=len(stats.excluded_ids),
        model_id=model_id,
        show_progress=True,
    )


def cmd_eval(args: argparse.Namespace, config: Config) -> List[str]:
    """チェックポイントを評価してレポートを書く"""
    _require(args, 'checkpoint', 'data')
    report = _evaluate_checkpoint(config, args.checkpoint, args, args.model_id or Path(args.checkpoint).name)
    reporter = Reporter(config.output, logger)
    reporter.write_report(report, args.report)
    reporter.print_statistics([report])
    return [args.report]


def cmd_compare(args: argparse.Namespace, config: Config) -> List[str]:
    """チェックポイントごとに評価し、入力順の比較表を出す"""
    _require(args, 'checkpoints', 'data')
    labels = args.labels or list(args.checkpoints)
    if len(labels) != len(args.checkpoints):
        raise UsageError(f"--labels has {len(labels)} entries for {len(args.checkpoints)} checkpoints")
    reports = [_evaluate_checkpoint(config, path, args, label) for path, label in zip(args.checkpoints, labels)]

    reporter = Reporter(config.output, logger)
    table = reporter.format_table(reports, labels)
    print(table)
    outputs = []
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table + '\n', encoding='utf-8')
        outputs.append(args.out)
    if args.csv:
        reporter.write_comparison_csv(reports, args.csv, labels)
        outputs.append(args.csv)
    reporter.print_statistics(reports)
    return outputs


def cmd_attn_dump(args: argparse.Namespace, config: Config) -> List[str]:
    """1クリップの観測フレームの注意マップを書き出す"""
    _require(args, 'checkpoint', 'data')
    model = load_model(args.checkpoint)
    if getattr(model, 'encoder', None) is None:
        raise UsageError(f"Checkpoint {args.checkpoint} ({model.kind}) has no attention encoder")
    clips = {clip.clip_id: clip for clip in load_dataset(args.data)}
    if args.clip not in clips:
        raise DataError(f"Clip {args.clip} not found in {args.data}")
    sample = build_sample(
        clips[args.clip],
        image_size=model.config.image_size,
        num_categories=model.config.num_categories,
        tau_a=config.evaluation.tau_a,
        num_frames=model.config.num_frames,
        annotation=config.annotation,
    )
    if sample is None:
        raise DataError(f"Clip {args.clip} has no NAO ground truth")
    return [str(p) for p in export_attention_maps(model, sample, args.out)]


HANDLERS = {
    'gen-data': cmd_gen_data,
    'annotate': cmd_annotate,
    'train': cmd_train,
    'eval': cmd_eval,
    'attn-dump': cmd_attn_dump,
    'compare': cmd_compare,
}


def prepare(args: argparse.Namespace):
    """設定と実行引数を決める（--manifest なら記録から復元する）

    Returns:
        (args, config)
    """
    if args.manifest:
        try:
            recorded = RunManifest.load(args.manifest)
        except FileNotFoundError as e:
            raise UsageError(f"Manifest not found: {args.manifest}") from e
        if recorded.subcommand != args.subcommand:
            raise UsageError(f"Manifest is for '{recorded.subcommand}', not '{args.subcommand}'")
        replayed = argparse.Namespace(**recorded.args)
        replayed.subcommand = recorded.subcommand
        replayed.manifest = args.manifest
        replayed.log_level = args.log_level
        replayed.config = None
        try:
            config = Config.from_dict(recorded.config)
        except (ValueError, TypeError) as e:
            raise UsageError(f"Manifest {args.manifest} has an invalid config: {e}") from e
        return replayed, config
    config = apply_overrides(load_config(args.config), args)
    return args, config


def run(args: argparse.Namespace) -> int:
    """サブコマンドを実行する"""
    args, config = prepare(args)
    errors = config.validate()
    if errors:
        raise UsageError(f"Config validation failed: {errors}")
    configure_logging(config.logging, args.log_level)

    output = primary_output(args, config)
    manifest = RunManifest(
        subcommand=args.subcommand,
        config=config.to_dict(),
        seed=config.training.seed if args.subcommand == 'train' else config.scene.seed,
        version=__version__,
        args=_recorded_args(args),
        inputs=[v for k, v in sorted(vars(args).items()) if k in ('input', 'data', 'val_data', 'checkpoint') and v],
        outputs=[output],
        started_at=datetime.now().isoformat(timespec='seconds'),
    )
    path = manifest_path(output)
    manifest.write(path)

    logger.info("=" * 60)
    logger.info(f"anacto {args.subcommand} 起動 (version {__version__})")
    logger.info("=" * 60)
    start = time.perf_counter()
    outputs = HANDLERS[args.subcommand](args, config)
    manifest.outputs = outputs or [output]
    manifest.wall_clock_seconds = round(time.perf_counter() - start, 3)
    manifest.write(path)
    logger.info(f"Finished {args.subcommand} in {manifest.wall_clock_seconds}s (manifest: {path})")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """エントリーポイント

    Returns:
        終了コード（0 成功, 1 使い方の誤り, 2 データエラー, 3 数値エラー）
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    try:
        return run(args)
    except AnactoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        if isinstance(e, UsageError):
            print(f"anacto {args.subcommand}: error: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, FileNotFoundError) as e:
        logger.error(f"Data error: {e}")
        return DataError.exit_code


if __name__ == '__main__':
    sys.exit(main())
