import numpy as np
import pytest

from predmap.models.pair import RawPair


def test_create_with_full_args_list():
    p = RawPair(image=np.zeros((40, 50, 3)), caption='a red circle', id='x1')
    assert p.caption == 'a red circle'
    assert p.id == 'x1'
    assert p.width == 50
    assert p.height == 40


def test_small_image_rejected():
    with pytest.raises(ValueError):
        RawPair(image=np.zeros((31, 64, 3)), caption='c', id='x')


def test_channels_checked():
    with pytest.raises(ValueError):
        RawPair(image=np.zeros((64, 64)), caption='c', id='x')
    with pytest.raises(ValueError):
        RawPair(image=np.zeros((64, 64, 4)), caption='c', id='x')


def test_empty_caption_rejected():
    with pytest.raises(ValueError):
        RawPair(image=np.zeros((64, 64, 3)), caption='   ', id='x')
