"""損失関数と学習ループのテスト"""
from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from loguru import logger

from src.config import AnnotationConfig, Config, LossWeights, ModelConfig, SceneConfig, SgdConfig, TrainConfig
from src.errors import DataError
from src.evaluation.evaluator import evaluate
from src.models import BoxPair
from src.network.anacto import AnactoModel
from src.numeric.gradcheck import max_relative_error, numerical_grad
from src.numeric.tensor import Tape, Tensor, grad
from src.pipeline.dataset import build_samples
from src.training.losses import combine_loss, loss_cao, loss_feat, loss_nao, sample_loss
from src.training.trainer import Trainer, batch_loss, load_samples, run_training
from src.world.scene import generate_clips
from src.world.storage import write_dataset
from tests.anacto_test_utils import make_sample, make_samples, tiny_model_config, tiny_scene_config


def _train_config(**overrides) -> TrainConfig:
    values = dict(sgd=SgdConfig(learning_rate=1e-3, epochs=2), batch_size=2, seed=3)
    values.update(overrides)
    return TrainConfig(**values)


def test_combine_loss_weights():
    assert combine_loss(2.0, 4.0, 3.0, LossWeights()) == pytest.approx(7.0)
    assert combine_loss(2.0, 4.0, 3.0, LossWeights(lambda1=0.0, lambda2=0.0)) == pytest.approx(2.0)


def test_ablation_weights():
    nao_only = LossWeights.for_ablation('nao_only')
    assert nao_only.lambda1 == 0.0
    assert nao_only.feat_weight == 0.0
    assert nao_only.lambda2 == 1.0
    assert LossWeights.for_ablation('cao_plus_nao').feat_weight == 0.0
    assert LossWeights.for_ablation('full') == LossWeights()
    with pytest.raises(ValueError):
        LossWeights.for_ablation('everything')


def test_loss_feat_matches_shifted_squared_error():
    rng = np.random.default_rng(0)
    zhat = rng.normal(size=(4, 3))
    z = rng.normal(size=(4, 3))
    expected = float(np.sum((zhat[:-1] - z[1:]) ** 2))
    assert loss_feat(Tensor(zhat), z).item() == pytest.approx(expected)
    assert loss_feat(Tensor(zhat[:1]), z[:1]).item() == 0.0
    with pytest.raises(ValueError):
        loss_feat(Tensor(zhat), z[:3])


def test_loss_feat_does_not_differentiate_target():
    z = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
    zhat = Tensor(np.array([[0.0], [0.0]]), requires_grad=True)
    with Tape():
        loss = loss_feat(zhat, z)
        gz, gzhat = grad(loss, [z, zhat])
    np.testing.assert_array_equal(gz.data, [[0.0], [0.0]])
    np.testing.assert_array_equal(gzhat.data, [[-4.0], [0.0]])


def test_loss_cao_uses_valid_slots_only():
    yhat = np.zeros((2, 8))
    targets = [BoxPair.from_slots((16.0, 16.0, 8.0, 8.0), None), BoxPair.empty()]
    # 正規化後の目標 (1, 1, 0.5, 0.5) の二乗和
    assert loss_cao(Tensor(yhat), targets, scale=16.0).item() == pytest.approx(2.5)
    assert loss_cao(Tensor(yhat), [BoxPair.empty(), BoxPair.empty()]).item() == 0.0
    assert loss_cao(Tensor(np.zeros((0, 8))), []).item() == 0.0
    with pytest.raises(ValueError):
        loss_cao(Tensor(yhat), targets[:1])


def test_loss_nao_ignores_invalid_slot_predictions():
    target = BoxPair.from_slots((4.0, 4.0, 2.0, 2.0), None)
    rng = np.random.default_rng(1)
    yhat = rng.normal(size=8)
    base = loss_nao(Tensor(yhat), target).item()
    changed = yhat.copy()
    changed[4:] += 10.0
    assert loss_nao(Tensor(changed), target).item() == base
    assert base == pytest.approx(float(np.sum((yhat[:4] - [4.0, 4.0, 2.0, 2.0]) ** 2)))

    with pytest.raises(DataError):
        loss_nao(Tensor(yhat), None)
    with pytest.raises(DataError):
        loss_nao(Tensor(yhat), BoxPair.empty())


def test_nao_only_gradient_comes_from_nao_term_alone():
    config = tiny_model_config()
    model = AnactoModel(config, seed=1)
    sample = make_sample(config, seed=2, cao_valid=[(True, True)] * 3)
    params = model.parameters()
    with Tape():
        total = sample_loss(model, sample, LossWeights.for_ablation('nao_only')).total
        g_total = grad(total, params)
    with Tape():
        nao = sample_loss(model, sample, LossWeights()).nao
        g_nao = grad(nao, params)
    for a, b in zip(g_total, g_nao):
        np.testing.assert_allclose(a.data, b.data, rtol=1e-12, atol=1e-15)


def test_batch_loss_is_mean_over_clips():
    config = tiny_model_config()
    model = AnactoModel(config, seed=2)
    samples = make_samples(config, 2, seed=4)
    weights = LossWeights()
    single = [sample_loss(model, s, weights).total.item() for s in samples]
    assert batch_loss(model, samples, weights).total.item() == pytest.approx(np.mean(single))


def test_end_to_end_gradients_match_finite_differences():
    config = tiny_model_config(num_frames=2)
    model = AnactoModel(config, seed=3)
    sample = make_sample(config, seed=5, cao_valid=[(True, False), (False, False)], nao_valid=(True, True))
    weights = LossWeights(feat_weight=0.0)
    params = model.parameters()

    def f():
        return sample_loss(model, sample, weights).total

    with Tape():
        analytic = grad(f(), params)
    rng = np.random.default_rng(6)
    indices = [rng.choice(p.size, size=min(3, p.size), replace=False) for p in params]
    numeric = numerical_grad(f, params, indices=indices)
    for param, a, n, idx in zip(params, analytic, numeric, indices):
        error = max_relative_error(a.data.reshape(-1)[idx], n.reshape(-1)[idx])
        assert error < 1e-3, f"{param.name}: relative error {error}"


def test_training_is_deterministic():
    config = tiny_model_config()
    samples = make_samples(config, 4, seed=7)
    results = []
    for _ in range(2):
        model = AnactoModel(config, seed=0)
        results.append(Trainer(model, _train_config(), samples, show_progress=False).run())
    assert results[0].step_losses == results[1].step_losses
    assert len(results[0].step_losses) == 4
    assert [m.val_ap_avg for m in results[0].history] == [m.val_ap_avg for m in results[1].history]


def test_training_writes_metrics_and_checkpoints(tmp_path):
    config = tiny_model_config()
    out = tmp_path / 'run'
    trainer = Trainer(AnactoModel(config, seed=0), _train_config(), make_samples(config, 4),
                      out_dir=str(out), show_progress=False)
    result = trainer.run()

    lines = (out / 'metrics.jsonl').read_text(encoding='utf-8').splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first['epoch'] == 1
    assert set(first) == {'epoch', 'loss_feat', 'loss_cao', 'loss_nao', 'loss_total', 'val_ap_avg'}
    for name in ('epoch_1', 'epoch_2', 'best'):
        assert (out / name / 'manifest.json').exists()
        assert (out / name / 'params.bin').exists()
    assert result.best_epoch in (1, 2)

    loaded = AnactoModel.load(str(out / 'best'))
    assert loaded.config == config


def test_max_steps_stops_training():
    config = tiny_model_config()
    trainer = Trainer(AnactoModel(config, seed=0),
                      _train_config(sgd=SgdConfig(learning_rate=1e-3, epochs=5), batch_size=1, max_steps=3),
                      make_samples(config, 4), show_progress=False)
    result = trainer.run()
    assert result.steps == 3
    assert len(result.step_losses) == 3
    assert len(result.history) == 1


def test_epoch_order_is_seeded_permutation():
    config = tiny_model_config()
    samples = make_samples(config, 8)
    a = Trainer(AnactoModel(config), _train_config(seed=5), samples, show_progress=False)
    b = Trainer(AnactoModel(config), _train_config(seed=5), samples, show_progress=False)
    assert sorted(a.epoch_order(1)) == list(range(8))
    assert a.epoch_order(1) == b.epoch_order(1)
    assert len({tuple(a.epoch_order(e)) for e in range(1, 6)}) > 1


def test_trainer_rejects_bad_samples():
    config = tiny_model_config()
    model = AnactoModel(config)
    with pytest.raises(DataError):
        Trainer(model, _train_config(), [], show_progress=False)
    short = make_sample(tiny_model_config(num_frames=2))
    with pytest.raises(DataError, match="num_frames"):
        Trainer(model, _train_config(), [short], show_progress=False)


def test_run_training_requires_data_dir():
    with pytest.raises(DataError):
        run_training(Config(), show_progress=False)


def test_loss_decreases_on_single_clip():
    config = tiny_model_config()
    sample = make_sample(config, seed=8, cao_valid=[(True, False)] * 3)
    trainer = Trainer(
        AnactoModel(config, seed=1),
        _train_config(sgd=SgdConfig(learning_rate=5e-3, epochs=40), batch_size=1, ablation='cao_plus_nao'),
        [sample],
        show_progress=False,
    )
    result = trainer.run()
    losses = [metrics.loss_total for metrics in result.history]
    assert len(losses) == 40
    assert losses[-1] < losses[0]
    non_increasing = sum(1 for a, b in zip(losses, losses[1:]) if b <= a)
    assert non_increasing >= 0.9 * (len(losses) - 1)


def test_invalid_slot_coordinates_never_change_the_loss():
    config = tiny_model_config()
    rng = np.random.default_rng(11)

    def scrambled(pair: BoxPair) -> BoxPair:
        copy = BoxPair(pair.boxes.copy(), pair.valid.copy())
        copy.boxes[~copy.valid] = rng.uniform(-1e6, 1e6, size=(int((~copy.valid).sum()), 4))
        return copy

    for kind in ('tanacto', 'recurrent', 'framewise'):
        model = AnactoModel(config, kind=kind, seed=4)
        sample = make_sample(config, seed=12)
        noisy = replace(sample, cao=[scrambled(pair) for pair in sample.cao], nao=scrambled(sample.nao))
        for teacher_forcing in (True, False):
            base = sample_loss(model, sample, LossWeights(), teacher_forcing).values()
            changed = sample_loss(model, noisy, LossWeights(), teacher_forcing).values()
            assert changed == base


@pytest.mark.slow
def test_overfits_small_training_set():
    scene = SceneConfig(seed=0)
    config = ModelConfig.desk()
    clips = generate_clips(scene, 8)
    samples, _ = build_samples(clips, config.image_size, config.num_categories, tau_a=0.25,
                               num_frames=config.num_frames, annotation=AnnotationConfig())
    assert len(samples) >= 6
    model = AnactoModel(config, seed=2)
    trainer = Trainer(
        model,
        _train_config(sgd=SgdConfig(learning_rate=1e-2, epochs=300), batch_size=len(samples),
                      ablation='full'),
        samples,
        show_progress=False,
    )
    losses = trainer.run().step_losses
    assert len(losses) == 300
    # 全クリップで1バッチなので losses[1] が1ステップ後の損失
    assert losses[-1] <= 0.1 * losses[1]
    report = evaluate(model, samples, tau_a=0.25, thresholds=(0.5,))
    assert report.ap[0.5] >= 0.8


def test_load_samples_warns_when_target_fps_is_ignored(tmp_path):
    write_dataset(generate_clips(tiny_scene_config(seed=1), 2), str(tmp_path / 'data'))
    config = Config()
    config.model = tiny_model_config()
    messages = []
    handler = logger.add(messages.append, level='WARNING', format='{message}')
    try:
        _, stats = load_samples(config, str(tmp_path / 'data'))
        assert stats.total == 2
        assert messages == []

        config.annotation = AnnotationConfig(target_fps=16.0)
        _, stats = load_samples(config, str(tmp_path / 'data'))
        assert stats.total == 2
    finally:
        logger.remove(handler)
    assert len(messages) == 1
    assert 'target_fps=16.0' in messages[0]
