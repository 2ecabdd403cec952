"""CLI（サブコマンド・終了コード・マニフェスト再現）のテスト"""
from __future__ import annotations

import json

import pytest
import yaml
from loguru import logger

import src.main
from src.config import Config, ModelConfig
from src.errors import DataError, NumericError
from src.evaluation.evaluator import OracleModel
from src.main import main, manifest_path
from src.pipeline.annotations import curate_nao_gt
from src.world.storage import load_dataset

TINY_CONFIG = {
    'logging': {'level': 'WARNING', 'file': None, 'console': False},
    'scene': {'num_objects': 3, 'num_categories': 4},
    'model': {'image_size': 16, 'patch_size': 8, 'embed_dim': 8, 'enc_layers': 1, 'dec_layers': 1,
              'heads': 2, 'mlp_ratio': 2, 'num_categories': 4, 'num_frames': 3},
    'training': {'batch_size': 2, 'sgd': {'learning_rate': 0.001, 'epochs': 1}},
}


def run_cli(argv) -> int:
    try:
        return main([str(a) for a in argv])
    finally:
        logger.remove()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob('*')) if p.is_file()}


def test_usage_errors_exit_1(workdir):
    assert run_cli([]) == 1
    assert run_cli(['gen-data', '--no-such-flag']) == 1
    assert run_cli(['gen-data']) == 1
    assert run_cli(['eval', '--data', 'data']) == 1
    assert run_cli(['gen-data', '--out', 'd', '--config', 'missing.yaml']) == 1
    assert run_cli(['--version']) == 0


@pytest.mark.parametrize('error, code', [
    (DataError('broken clip'), 2),
    (FileNotFoundError('gone'), 2),
    (ValueError('bad value'), 2),
    (NumericError('loss is nan'), 3),
])
def test_errors_map_to_exit_codes(workdir, monkeypatch, error, code):
    def failing(args, config):
        raise error

    monkeypatch.setitem(src.main.HANDLERS, 'gen-data', failing)
    assert run_cli(['gen-data', '--out', 'data']) == code


def test_gen_data_writes_clips_and_manifest(workdir):
    assert run_cli(['gen-data', '--num-clips', 2, '--clip-len', 6, '--contact-time', 5, '--out', 'data']) == 0
    assert sorted(p.name for p in (workdir / 'data').iterdir()) == ['clip_0000', 'clip_0001']

    manifest = json.loads((workdir / 'data.manifest.json').read_text(encoding='utf-8'))
    assert manifest['subcommand'] == 'gen-data'
    assert manifest['config']['scene']['clip_len'] == 6.0
    assert [p.replace('\\', '/') for p in manifest['outputs']] == ['data/clip_0000', 'data/clip_0001']
    assert 'wall_clock_seconds' in manifest


def test_manifest_replay_reproduces_dataset(workdir):
    assert run_cli(['gen-data', '--num-clips', 2, '--clip-len', 6, '--contact-time', 5, '--seed', 4,
                    '--out', 'data']) == 0
    first = _tree_bytes(workdir / 'data')
    assert run_cli(['gen-data', '--manifest', 'data.manifest.json']) == 0
    assert _tree_bytes(workdir / 'data') == first

    assert run_cli(['eval', '--manifest', 'data.manifest.json']) == 1
    assert run_cli(['gen-data', '--manifest', 'nothing.manifest.json']) == 1


def test_manifest_path_sits_next_to_output():
    assert manifest_path('out/report.json').as_posix() == 'out/report.json.manifest.json'
    assert manifest_path('runs/a/').as_posix() == 'runs/a.manifest.json'


def test_annotate_normalizes_and_curates(workdir):
    assert run_cli(['gen-data', '--num-clips', 1, '--out', 'data']) == 0
    assert run_cli(['annotate', '--in', 'data/clip_0000', '--target-fps', 16, '--out', 'ann/clip0.jsonl']) == 0

    lines = (workdir / 'ann' / 'clip0.jsonl').read_text(encoding='utf-8').splitlines()
    assert len(lines) == 96 * 2 - 1
    nao = json.loads((workdir / 'ann' / 'clip0.nao.json').read_text(encoding='utf-8'))
    assert nao['action_start_index'] == 168
    assert nao['lookup'] == 10


def test_oracle_checkpoint_evaluates_to_one(workdir):
    OracleModel(ModelConfig()).save(str(workdir / 'oracle'), Config().to_dict())
    assert run_cli(['gen-data', '--num-clips', 3, '--out', 'data']) == 0
    assert run_cli(['eval', '--checkpoint', 'oracle', '--data', 'data', '--tau-a', 0.25,
                    '--report', 'reports/oracle.json']) == 0

    report = json.loads((workdir / 'reports' / 'oracle.json').read_text(encoding='utf-8'))
    assert report['ap_avg'] == 1.0
    assert report['model_id'] == 'oracle'
    assert list(report['ap']) == ['0.05', '0.10', '0.20', '0.50']
    assert (workdir / 'reports' / 'oracle.json.manifest.json').exists()

    assert run_cli(['compare', '--checkpoints', 'oracle', 'oracle', '--labels', 'first-oracle', 'second-oracle',
                    '--data', 'data', '--out', 'table.txt', '--csv', 'table.csv']) == 0
    table = (workdir / 'table.txt').read_text(encoding='utf-8')
    assert table.index('first-oracle') < table.index('second-oracle')
    assert (workdir / 'table.csv').read_text(encoding='utf-8').startswith('model,tau_a,AP@5')

    assert run_cli(['compare', '--checkpoints', 'oracle', '--labels', 'first-oracle', 'second-oracle',
                    '--data', 'data', '--csv', 'bad.csv']) == 1


def test_train_eval_and_attention_dump(workdir):
    (workdir / 'tiny.yaml').write_text(yaml.safe_dump(TINY_CONFIG), encoding='utf-8')
    assert run_cli(['gen-data', '--config', 'tiny.yaml', '--num-clips', 4, '--out', 'data']) == 0
    assert run_cli(['train', '--config', 'tiny.yaml', '--data', 'data', '--epochs', 1, '--max-steps', 1,
                    '--out', 'run']) == 0

    run = workdir / 'run'
    assert len((run / 'metrics.jsonl').read_text(encoding='utf-8').splitlines()) == 1
    assert (run / 'best' / 'manifest.json').exists()
    assert (run / 'epoch_1' / 'params.bin').exists()
    assert (workdir / 'run.manifest.json').exists()

    assert run_cli(['eval', '--config', 'tiny.yaml', '--checkpoint', 'run/best', '--data', 'data',
                    '--report', 'eval.json']) == 0
    report = json.loads((workdir / 'eval.json').read_text(encoding='utf-8'))
    assert 0.0 <= report['ap_avg'] <= 1.0

    clip_id = next(clip.clip_id for clip in load_dataset(str(workdir / 'data'))
                   if curate_nao_gt(clip.annotations, clip.action_start_index) is not None)
    assert run_cli(['attn-dump', '--config', 'tiny.yaml', '--checkpoint', 'run/best', '--data', 'data',
                    '--clip', clip_id, '--out', 'attn']) == 0
    names = sorted(p.name for p in (workdir / 'attn').iterdir())
    assert names == ['attn_00.json', 'attn_00.pgm', 'attn_01.json', 'attn_01.pgm', 'attn_02.json', 'attn_02.pgm']

    assert run_cli(['attn-dump', '--config', 'tiny.yaml', '--checkpoint', 'run/best', '--data', 'data',
                    '--clip', 99, '--out', 'attn2']) == 2
