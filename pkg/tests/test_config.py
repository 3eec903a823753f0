import pytest

from predmap.config import (ABLATION_FLAGS, TrainConfig, load_config, parse_override,
                            toy_config)
from predmap.errors import ConfigError


def test_paper_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 1e-5
    assert cfg.weight_decay == 0.1
    assert cfg.warmup_steps == 10000
    assert cfg.batch_size == 1024
    assert cfg.crop_scale == (0.2, 0.25)
    assert cfg.crop_aspect == (0.75, 1.5)
    assert cfg.tau == 100.0
    assert cfg.encoder_profile().num_vectors == 257


def test_toy_preset():
    cfg = toy_config()
    assert cfg.embed_dim == 32
    assert cfg.grid == 4
    assert cfg.image_size == 64
    assert cfg.ablations() == []


def test_toy_overrides():
    cfg = toy_config(no_gate=True, crop_scale=[0.3, 0.4])
    assert cfg.crop_scale == (0.3, 0.4)
    assert cfg.ablations() == ['no_gate']


@pytest.mark.parametrize('overrides', [
    {'lr': 0.0},
    {'batch_size': 1},
    {'heads': 3},
    {'tau': -1.0},
    {'similarity': 'l2'},
    {'crop_scale': (0.5, 0.2)},
    {'crop_scale': (0.2, 1.5)},
    {'block_aspect': (0.0, 1.0)},
    {'grid': 5},
    {'crop_scale': 0.2},
    {'log_every': 0},
])
def test_bad_values(overrides):
    with pytest.raises(ConfigError):
        toy_config(**overrides)


@pytest.mark.parametrize('overrides, key', [
    ({'lr': 'abc'}, 'lr'),
    ({'no_gate': 'yes'}, 'no_gate'),
    ({'depth': 2.5}, 'depth'),
    ({'max_steps': True}, 'max_steps'),
    ({'crop_scale': ['a', 0.3]}, 'crop_scale'),
    ({'betas': [0.9]}, 'betas'),
])
def test_wrong_types_name_the_key(overrides, key):
    with pytest.raises(ConfigError, match=key):
        load_config(None, overrides)


def test_ints_widen_to_floats():
    cfg = load_config(None, {'lr': 1, 'tau': 50})
    assert cfg.lr == 1.0 and isinstance(cfg.lr, float)
    assert isinstance(cfg.tau, float)


def test_unknown_key_suggests():
    with pytest.raises(ConfigError, match='warmup_steps'):
        toy_config(warmup_step=10)


def test_dict_round_trip():
    cfg = toy_config(no_crop=True, betas=(0.8, 0.9))
    data = cfg.to_dict()
    assert data['betas'] == [0.8, 0.9]
    assert TrainConfig.from_dict(data) == cfg


@pytest.mark.parametrize('item, expected', [
    ('lr=0.01', ('lr', 0.01)),
    ('no_gate=true', ('no_gate', True)),
    ('crop_scale=[0.1, 0.2]', ('crop_scale', [0.1, 0.2])),
    ('similarity=dot', ('similarity', 'dot')),
    (' depth = 2 ', ('depth', 2)),
])
def test_parse_override(item, expected):
    assert parse_override(item) == expected


def test_parse_override_needs_equals():
    with pytest.raises(ConfigError):
        parse_override('lr')


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('lr = 0.002\ndepth = 2\nblock_scale = [0.3, 0.35]\n', encoding='utf-8')
    cfg = load_config(path, {'depth': 3})
    assert cfg.lr == 0.002
    assert cfg.depth == 3
    assert cfg.block_scale == (0.3, 0.35)
    assert cfg.embed_dim == 32


def test_load_config_paper_preset(tmp_path):
    path = tmp_path / 'paper.toml'
    path.write_text('preset = "paper"\n', encoding='utf-8')
    assert load_config(path) == TrainConfig()


@pytest.mark.parametrize('text', [
    'preset = "huge"\n',
    '[optimizer]\nlr = 0.1\n',
    'lr = \n',
])
def test_load_config_rejects(tmp_path, text):
    path = tmp_path / 'bad.toml'
    path.write_text(text, encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.toml')


def test_ablation_flags_are_fields():
    cfg = toy_config(**{flag: True for flag in ABLATION_FLAGS})
    assert cfg.ablations() == list(ABLATION_FLAGS)
