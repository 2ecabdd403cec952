"""エンコーダ・因果デコーダ・ベースライン・注意マップのテスト"""
from __future__ import annotations

import json

import numpy as np
import pytest

from src.config import LossWeights, ModelConfig
from src.models import DetectionSet
from src.network.anacto import AnactoModel
from src.network.attention_map import export_attention_maps, rollout, spatial_attention_map
from src.network.decoder import CausalDecoder
from src.network.encoder import FrameEncoder, patchify, unpatchify
from src.numeric.params import ParameterStore
from src.numeric.tensor import Tape, Tensor, grad
from src.training.losses import sample_loss
from tests.anacto_test_utils import make_sample, tiny_model_config

MODEL_KINDS = ('tanacto', 'recurrent', 'framewise')


def test_patchify_layout():
    frame = np.arange(32 * 32 * 3, dtype=np.float64).reshape(32, 32, 3)
    patches = patchify(frame, 8)
    assert patches.shape == (16, 192)
    np.testing.assert_array_equal(patches[1][:3], frame[0, 8])
    np.testing.assert_array_equal(patches[4][:3], frame[8, 0])
    np.testing.assert_array_equal(unpatchify(patches, (32, 32), 8), frame)
    assert patchify(np.zeros((224, 224, 3)), 16).shape == (196, 768)

    with pytest.raises(ValueError):
        patchify(np.zeros((30, 30, 3)), 8)


def test_model_presets():
    base = ModelConfig.vit_base()
    assert (base.image_size, base.patch_size, base.embed_dim) == (224, 16, 768)
    assert base.num_patches == 196
    assert base.det_dim == 8 * 5
    assert ModelConfig.desk().grid == 4
    assert ModelConfig(image_size=30).errors()
    assert ModelConfig(embed_dim=10, heads=4).errors()


def test_detection_fusion_is_additive():
    config = tiny_model_config()
    encoder = FrameEncoder(ParameterStore(np.random.default_rng(0)), config)
    sample = make_sample(config, seed=1)
    empty = [DetectionSet.empty(config.num_categories) for _ in range(config.num_frames)]
    fused = encoder(sample.frames, empty).data
    plain = encoder(sample.frames, empty, fusion=False).data
    offsets = fused - plain
    np.testing.assert_allclose(offsets, np.repeat(offsets[:1], config.num_frames, axis=0), atol=1e-12)

    with pytest.raises(ValueError):
        encoder(sample.frames, [DetectionSet.empty(3) for _ in range(config.num_frames)])


def test_detection_change_is_local_to_its_frame():
    config = tiny_model_config()
    encoder = FrameEncoder(ParameterStore(np.random.default_rng(0)), config)
    sample = make_sample(config, seed=2)
    base = encoder(sample.frames, sample.detections).data

    changed = [DetectionSet(d.boxes.copy(), d.scores.copy()) for d in sample.detections]
    changed[1].boxes[0] = (4.0, 4.0, 3.0, 3.0)
    changed[1].scores[0] = 0.9
    out = encoder(sample.frames, changed).data
    assert not np.allclose(out[1], base[1])
    np.testing.assert_allclose(out[0], base[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out[2], base[2], rtol=0, atol=1e-12)


def test_decoder_is_causal():
    config = tiny_model_config(num_frames=5)
    decoder = CausalDecoder(ParameterStore(np.random.default_rng(3)), config)
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, config.embed_dim))
    base = decoder(Tensor(z))
    for j in range(1, 5):
        perturbed = z.copy()
        perturbed[j:] += rng.normal(size=(5 - j, config.embed_dim))
        out = decoder(Tensor(perturbed))
        np.testing.assert_array_equal(out.yhat.data[:j], base.yhat.data[:j])
        np.testing.assert_array_equal(out.zhat.data[:j], base.zhat.data[:j])

    with pytest.raises(ValueError):
        decoder(Tensor(np.zeros((0, config.embed_dim))))


@pytest.mark.parametrize('kind', MODEL_KINDS)
def test_model_is_causal_end_to_end(kind):
    config = tiny_model_config(num_frames=4)
    model = AnactoModel(config, kind=kind, seed=0)
    rng = np.random.default_rng(5)
    for trial in range(100):
        sample = make_sample(config, seed=10 + trial)
        base = model.forward(sample).yhat.data
        j = int(rng.integers(1, config.num_frames))
        frames = sample.frames.copy()
        frames[j:] = rng.integers(0, 256, size=frames[j:].shape, dtype=np.uint8)
        detections = list(sample.detections)
        for t in range(j, config.num_frames):
            detections[t] = DetectionSet.empty(config.num_categories)
        out = model.forward_frames(frames, detections).yhat.data
        assert np.array_equal(out[:j], base[:j])


@pytest.mark.parametrize('kind', MODEL_KINDS)
@pytest.mark.parametrize('fusion_mode', ('sum', 'concat_project'))
def test_output_shapes_match_across_models(kind, fusion_mode):
    config = tiny_model_config(fusion_mode=fusion_mode)
    model = AnactoModel(config, kind=kind, seed=1)
    out = model.forward(make_sample(config, seed=3), teacher_forcing=True)
    assert out.z.shape == (config.num_frames, config.embed_dim)
    assert out.zhat.shape == (config.num_frames, config.embed_dim)
    assert out.yhat.shape == (config.num_frames, 8)


def test_single_frame_decoding():
    config = tiny_model_config(num_frames=1)
    model = AnactoModel(config, seed=2)
    out = model.forward(make_sample(config, seed=4, cao_valid=[(True, False)]))
    assert out.yhat.shape == (1, 8)
    assert np.all(np.isfinite(out.yhat.data))


def test_predict_nao_is_clamped_to_frame():
    config = tiny_model_config()
    model = AnactoModel(config, seed=3)
    model.decoder.head.weight.data[:] = 0.0
    model.decoder.head.bias.data[:] = [0.5, 0.5, 0.25, 0.25, 0.9, 0.9, 0.5, 0.5]
    prediction = model.predict_nao(make_sample(config, seed=5))
    assert prediction.valid.all()
    assert prediction.within(config.image_size, config.image_size)
    np.testing.assert_allclose(prediction.boxes[0], [8.0, 8.0, 4.0, 4.0])
    assert prediction.boxes[1][2] < 8.0


def test_recurrent_zero_input_gives_constant_outputs():
    config = tiny_model_config(num_frames=4)
    model = AnactoModel(config, kind='recurrent', seed=4)
    out = model.aggregator(Tensor(np.zeros((4, config.embed_dim))))
    np.testing.assert_allclose(out.yhat.data, np.repeat(out.yhat.data[:1], 4, axis=0), atol=1e-15)


def test_recurrent_ignores_teacher_forcing_and_temporal_embedding():
    config = tiny_model_config(num_frames=4)
    model = AnactoModel(config, kind='recurrent', seed=4)
    assert model.encoder.temporal_embed is None
    sample = make_sample(config, seed=9, cao_valid=[(True, True)] * 4)
    forced = model.forward(sample, teacher_forcing=True).yhat.data
    free = model.forward(sample, teacher_forcing=False).yhat.data
    assert np.array_equal(forced, free)


def test_framewise_encoder_has_no_temporal_context():
    config = tiny_model_config(num_frames=3)
    model = AnactoModel(config, kind='framewise', seed=5)
    sample = make_sample(config, seed=6)
    order = [2, 0, 1]
    frames = sample.frames[order]
    detections = [sample.detections[i] for i in order]
    base = model.embed(sample.frames, sample.detections).data
    permuted = model.embed(frames, detections).data
    np.testing.assert_allclose(permuted, base[order], rtol=0, atol=1e-12)

    probe = model.framewise.probe(sample.frames, sample.detections).data
    substituted = sample.frames.copy()
    substituted[1] = sample.frames[0]
    swapped = list(sample.detections)
    swapped[1] = sample.detections[0]
    probe2 = model.framewise.probe(substituted, swapped).data
    np.testing.assert_allclose(probe2[1], probe[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(probe2[2], probe[2], rtol=0, atol=1e-12)


@pytest.mark.parametrize('kind', MODEL_KINDS)
def test_every_parameter_group_receives_gradient(kind):
    config = tiny_model_config()
    model = AnactoModel(config, kind=kind, seed=6)
    sample = make_sample(config, seed=7, cao_valid=[(True, False), (True, True), (False, True)],
                         nao_valid=(True, True))
    params = model.parameters()
    with Tape():
        loss = sample_loss(model, sample, LossWeights(), teacher_forcing=False).total
        grads = grad(loss, params)
    by_name = {p.name: g for p, g in zip(params, grads)}
    for group, names in model.store.groups().items():
        magnitude = sum(float(np.abs(by_name[name].data).sum()) for name in names)
        assert magnitude > 0, f"no gradient reaches {group}"


def test_attention_map_contract():
    config = tiny_model_config()
    model = AnactoModel(config, seed=7)
    sample = make_sample(config, seed=8)
    attention = spatial_attention_map(model, sample.frames[0], sample.detections[0])
    assert attention.grid.shape == (config.grid, config.grid)
    assert np.all(attention.grid >= 0)
    assert len(attention.layer_rows) == config.enc_layers
    for row in attention.layer_rows:
        assert row.shape == (config.num_patches + 1,)
        assert abs(row.sum() - 1.0) < 1e-12

    with pytest.raises(ValueError):
        spatial_attention_map(AnactoModel(config, kind='framewise'), sample.frames[0])


def test_rollout_of_identity_attention_is_identity():
    eye = np.eye(5)
    np.testing.assert_allclose(rollout([eye, eye]), eye)
    uniform = np.full((4, 4), 0.25)
    joint = rollout([uniform])
    np.testing.assert_allclose(joint.sum(axis=-1), np.ones(4))


def test_export_attention_maps(tmp_path):
    config = tiny_model_config()
    model = AnactoModel(config, seed=8)
    sample = make_sample(config, seed=9, clip_id=3)
    paths = export_attention_maps(model, sample, str(tmp_path / 'attn'))
    assert [p.name for p in paths] == ['attn_00.pgm', 'attn_01.pgm', 'attn_02.pgm']
    assert paths[0].read_bytes().startswith(b'P5')
    sidecar = json.loads((tmp_path / 'attn' / 'attn_02.json').read_text(encoding='utf-8'))
    assert sidecar['clip_id'] == 3
    assert sidecar['frame'] == 2
    assert np.array(sidecar['grid']).shape == (config.grid, config.grid)


def test_checkpoint_round_trip_preserves_predictions(tmp_path):
    config = tiny_model_config()
    model = AnactoModel(config, kind='recurrent', seed=9)
    sample = make_sample(config, seed=10)
    model.save(str(tmp_path / 'ckpt'), {'model': model.config.__dict__.copy()})
    loaded = AnactoModel.load(str(tmp_path / 'ckpt'))
    assert loaded.kind == 'recurrent'
    np.testing.assert_array_equal(loaded.predict_nao(sample).boxes, model.predict_nao(sample).boxes)
