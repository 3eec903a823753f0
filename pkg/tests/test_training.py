import itertools

import pytest
import torch

from predmap.config import toy_config
from predmap.encoders import ToyEncoderPair
from predmap.errors import ArtifactError, FrozenEncoderError, NonFiniteError
from predmap.mapper import encode_triplets
from predmap.models.records import record_to_json
from predmap.repository.memory_repository import MemoryRepository
from predmap.training import (FINAL_CHECKPOINT, METRICS_LOG, check_round_trip, init_state,
                              learning_rate, load_checkpoint, metrics_repository, restore,
                              run_training, save_checkpoint, step_block, step_pairs,
                              train_step)
from predmap.world_views import forge_batch


@pytest.fixture
def cfg64(tiny_cfg):
    return toy_config(**{**tiny_cfg.to_dict(), 'float64': True})


def snapshot(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


@pytest.mark.parametrize('step, expected', [(0, 0.0), (50, 0.5e-3), (100, 1e-3),
                                            (250, 1e-3)])
def test_warmup(cfg, step, expected):
    assert learning_rate(cfg, step) == pytest.approx(expected)


def test_no_warmup(cfg):
    assert learning_rate(toy_config(warmup_steps=0), 0) == cfg.lr


def test_step_draws_are_keyed(tiny_cfg, pairs):
    assert step_block(tiny_cfg, 3) == step_block(tiny_cfg, 3)
    assert [p.id for p in step_pairs(tiny_cfg, pairs, 3)] == \
        [p.id for p in step_pairs(tiny_cfg, pairs, 3)]
    assert len(step_pairs(tiny_cfg, pairs, 0)) == tiny_cfg.batch_size
    assert len({p.id for p in step_pairs(tiny_cfg, pairs, 0)}) == tiny_cfg.batch_size


def test_entire_block_flag(tiny_cfg):
    cfg = toy_config(**{**tiny_cfg.to_dict(), 'predict_entire': True})
    assert step_block(cfg, 0).entire


def test_first_step_leaves_parameters(tiny_cfg, pairs):
    state = init_state(tiny_cfg)
    before = snapshot(state.mapper)
    metrics = train_step(state, forge_batch(pairs[:4], tiny_cfg, 0))
    assert metrics.step == 0
    assert metrics.lr == 0.0
    assert state.step == 1
    for name, value in state.mapper.state_dict().items():
        assert torch.equal(value, before[name]), name


def test_later_steps_train(tiny_cfg, pairs):
    state = init_state(tiny_cfg)
    state.step = tiny_cfg.warmup_steps
    before = snapshot(state.mapper)
    metrics = train_step(state, forge_batch(pairs[:4], tiny_cfg, 0))
    assert metrics.lr == tiny_cfg.lr
    assert metrics.gate_value == 0.0
    assert metrics.grad_norm > 0
    assert metrics.loss == pytest.approx(metrics.l_pred + metrics.l_align)
    assert not torch.equal(state.mapper.fusion.gate_alpha, before['fusion.gate_alpha'])


def test_no_gate_reports_unit_gate(tiny_cfg, pairs):
    cfg = toy_config(**{**tiny_cfg.to_dict(), 'no_gate': True})
    state = init_state(cfg)
    assert train_step(state, forge_batch(pairs[:4], cfg, 0)).gate_value == 1.0


def test_non_finite_step_names_batch(tiny_cfg, pairs):
    state = init_state(tiny_cfg)
    with torch.no_grad():
        state.mapper.predictor.input_proj.bias.fill_(float('nan'))
    triplets = forge_batch(pairs[:4], tiny_cfg, 0)
    with pytest.raises(NonFiniteError) as info:
        train_step(state, triplets)
    assert info.value.batch_ids == tuple(t.id for t in triplets)
    assert info.value.block_index == 0


def test_non_finite_token_names_batch(tiny_cfg, pairs):
    state = init_state(tiny_cfg)
    with torch.no_grad():
        state.mapper.fusion.map_source[0].bias.fill_(float('nan'))
    triplets = forge_batch(pairs[:4], tiny_cfg, 0)
    with pytest.raises(NonFiniteError, match='pseudo tokens') as info:
        train_step(state, triplets)
    assert info.value.batch_ids == tuple(t.id for t in triplets)


def test_gate_gradient_comes_from_alignment(cfg64, pairs):
    state = init_state(cfg64)
    batch = encode_triplets(state.encoders, forge_batch(pairs[:4], cfg64, 0))
    terms = state.mapper.losses(state.encoders, batch, step_block(cfg64, 0), cfg64.tau)
    alpha = state.mapper.fusion.gate_alpha
    (from_total,) = torch.autograd.grad(terms.loss, alpha, retain_graph=True)
    (from_align,) = torch.autograd.grad(terms.l_align, alpha, retain_graph=True)
    (from_pred,) = torch.autograd.grad(terms.l_pred, alpha, allow_unused=True)
    assert from_pred is None
    assert float(from_align) != 0.0
    assert torch.allclose(from_total, from_align, atol=1e-12)


def test_checkpoint_round_trip(tiny_cfg, pairs, tmp_path):
    state = init_state(tiny_cfg)
    state.step = 3
    train_step(state, forge_batch(pairs[:4], tiny_cfg, 3))
    path = save_checkpoint(state, tmp_path / 'ckpt' / 'a.pt')
    assert not path.with_name('a.pt.tmp').exists()
    ckpt = load_checkpoint(path)
    assert ckpt.step == 4
    assert ckpt.config == tiny_cfg
    reloaded = restore(ckpt)
    assert reloaded.step == 4
    for name, value in state.mapper.state_dict().items():
        assert torch.equal(value, reloaded.mapper.state_dict()[name]), name
    check_round_trip(state, path)


def test_unreadable_checkpoint(tmp_path):
    path = tmp_path / 'junk.pt'
    path.write_bytes(b'junk')
    with pytest.raises(ArtifactError):
        load_checkpoint(path)
    with pytest.raises(ArtifactError):
        load_checkpoint(tmp_path / 'absent.pt')


def test_unknown_checkpoint_format(tmp_path):
    path = tmp_path / 'future.pt'
    torch.save({'format_version': 99}, path)
    with pytest.raises(ArtifactError, match='format'):
        load_checkpoint(path)


def test_run_training_outputs(tiny_cfg, pairs, tmp_path):
    registry = MemoryRepository()
    result = run_training(tiny_cfg, pairs, tmp_path, registry=registry)
    assert result.checkpoint == tmp_path / FINAL_CHECKPOINT
    assert (tmp_path / 'checkpoint-000002.pt').exists()
    assert (tmp_path / METRICS_LOG).exists()
    assert [m.step for m in result.metrics] == [0, 1, 2, 3]
    assert [m.step for m in registry.get_all()] == [0, 1, 2, 3]
    assert result.state.step == 4
    assert load_checkpoint(result.checkpoint).step == 4


def test_run_training_needs_two_pairs(tiny_cfg, pairs, tmp_path):
    with pytest.raises(ValueError):
        run_training(tiny_cfg, pairs[:1], tmp_path)


def test_identical_seeds_identical_logs(cfg64, pairs, tmp_path):
    a = run_training(cfg64, pairs, tmp_path / 'a')
    b = run_training(cfg64, pairs, tmp_path / 'b')
    assert (tmp_path / 'a' / METRICS_LOG).read_bytes() == \
        (tmp_path / 'b' / METRICS_LOG).read_bytes()
    assert [record_to_json(m) for m in a.metrics] == [record_to_json(m) for m in b.metrics]


def test_resume_continues_the_run(cfg64, pairs, tmp_path):
    full = run_training(cfg64, pairs, tmp_path / 'full')
    short = toy_config(**{**cfg64.to_dict(), 'max_steps': 2})
    run_training(short, pairs, tmp_path / 'split')
    resumed = run_training(cfg64, pairs, tmp_path / 'split',
                           resume=tmp_path / 'split' / FINAL_CHECKPOINT)
    assert [m.step for m in resumed.metrics] == [0, 1, 2, 3]
    assert [record_to_json(m) for m in resumed.metrics] == \
        [record_to_json(m) for m in full.metrics]
    assert [m.step for m in metrics_repository(tmp_path / 'split').get_all()] == [0, 1, 2, 3]


def test_resume_drops_stale_metrics(cfg64, pairs, tmp_path):
    run_training(cfg64, pairs, tmp_path)
    run_training(cfg64, pairs, tmp_path, resume=tmp_path / 'checkpoint-000002.pt')
    steps = [m.step for m in metrics_repository(tmp_path).get_all()]
    assert steps == [0, 1, 2, 3]


def test_encoders_stay_frozen(tiny_cfg, pairs, tmp_path, monkeypatch):
    counter = itertools.count()
    monkeypatch.setattr(ToyEncoderPair, 'checksum', lambda self: str(next(counter)))
    with pytest.raises(FrozenEncoderError):
        run_training(tiny_cfg, pairs, tmp_path)


def test_no_crop_run_uses_whole_images(tiny_cfg, pairs):
    cfg = toy_config(**{**tiny_cfg.to_dict(), 'no_crop': True})
    for step in range(3):
        for t in forge_batch(step_pairs(cfg, pairs, step), cfg, step):
            assert t.source_image.shape == t.target_image.shape
            assert (t.crop_spec.x, t.crop_spec.y) == (0, 0)
