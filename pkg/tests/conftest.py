import numpy as np
import pytest
import torch

from predmap.config import toy_config
from predmap.encoders import build_encoders
from predmap.repository.sqlite_repository import SQLiteRepository
from predmap.utils import derive_rng
from predmap.world_views import synth_dataset, write_dataset


torch.set_num_threads(1)


@pytest.fixture
def cfg():
    return toy_config()


@pytest.fixture
def tiny_cfg():
    """ Smallest trainable toy run """
    return toy_config(depth=1, width=16, heads=2, batch_size=4, max_steps=4, warmup_steps=2,
                      checkpoint_every=2, log_every=1)


@pytest.fixture(scope='session')
def encoders():
    return build_encoders(toy_config().encoder_profile())


@pytest.fixture(scope='session')
def encoders64():
    return build_encoders(toy_config().encoder_profile(), torch.float64)


@pytest.fixture
def pairs():
    return synth_dataset(8, derive_rng(0))


@pytest.fixture
def dataset_dir(tmp_path, pairs):
    write_dataset(pairs, tmp_path / 'data')
    return tmp_path / 'data'


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def registry_db(tmp_path_factory):
    """ The pony registry binds once per process """
    path = tmp_path_factory.mktemp('registry') / 'registry.db'
    SQLiteRepository.bind_database(path)
    return path
