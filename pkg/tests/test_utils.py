import numpy as np
import pytest
import torch

from predmap.utils import (Stream, derive_rng, module_checksum, py2sqlite_type_converter,
                           round_half_up, version_string)


@pytest.mark.parametrize('value, expected', [
    (0.5, 1), (1.5, 2), (2.5, 3), (2.49, 2), (12.8, 13), (0.0, 0),
])
def test_round_half_up(value, expected):
    assert round_half_up(value) == expected


def test_same_key_same_stream():
    a = derive_rng(7, Stream.FORGE, 3, 1).random(4)
    b = derive_rng(7, Stream.FORGE, 3, 1).random(4)
    assert np.array_equal(a, b)


def test_streams_are_independent():
    a = derive_rng(7, Stream.FORGE, 3).random(4)
    b = derive_rng(7, Stream.MASK, 3).random(4)
    c = derive_rng(8, Stream.FORGE, 3).random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_module_checksum_tracks_weights():
    lin = torch.nn.Linear(3, 2)
    before = module_checksum(lin)
    assert module_checksum(lin) == before
    with torch.no_grad():
        lin.bias.add_(1.0)
    assert module_checksum(lin) != before


def test_version_string_is_not_empty():
    assert version_string()


def test_py2sqlite_type_converter():
    assert py2sqlite_type_converter(3) == 3
    assert py2sqlite_type_converter(0.25) == 0.25
    assert py2sqlite_type_converter('train') == 'train'
    assert py2sqlite_type_converter(Stream.SYNTH) == str(Stream.SYNTH)
