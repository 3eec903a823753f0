import numpy as np
import pytest

from predmap.models.views import CropSpec, MaskBlock, ViewTriplet


@pytest.fixture
def image():
    return np.arange(10 * 12 * 3, dtype=float).reshape(10, 12, 3)


def test_crop_cut_is_pixel_exact(image):
    spec = CropSpec(x=2, y=3, crop_scale=0.2, aspect=1.0, width=4, height=5)
    cut = spec.cut(image)
    assert cut.shape == (5, 4, 3)
    assert np.array_equal(cut, image[3:8, 2:6])
    cut[...] = -1
    assert image[3, 2, 0] != -1


def test_crop_fits():
    spec = CropSpec(x=8, y=0, crop_scale=0.2, aspect=1.0, width=4, height=4)
    assert spec.fits(12, 4)
    assert not spec.fits(11, 4)


def test_empty_crop_rejected():
    with pytest.raises(ValueError):
        CropSpec(x=0, y=0, crop_scale=0.2, aspect=1.0, width=0, height=4)


def test_triplet_shape_matches_crop(image):
    spec = CropSpec(x=0, y=0, crop_scale=0.2, aspect=1.0, width=4, height=5)
    t = ViewTriplet(source_image=spec.cut(image), target_image=image,
                    action_text='a', crop_spec=spec, id='t')
    assert t.source_image.shape[:2] == (5, 4)
    with pytest.raises(ValueError):
        ViewTriplet(source_image=image, target_image=image, action_text='a',
                    crop_spec=spec, id='t')


def test_masked_triplet_keeps_full_size(image):
    spec = CropSpec(x=0, y=0, crop_scale=0.2, aspect=1.0, width=4, height=5)
    t = ViewTriplet(source_image=np.zeros_like(image), target_image=image,
                    action_text='a', crop_spec=spec, id='t', masked=True)
    assert t.masked


def test_mask_block_rectangle():
    block = MaskBlock.rectangle(4, 1, 1, 2, 2)
    assert len(block) == 4
    assert block.indices == ((1, 1), (1, 2), (2, 1), (2, 2))
    assert block.flat == (5, 6, 9, 10)
    assert not block.entire


def test_mask_block_full_grid():
    block = MaskBlock.full(4)
    assert block.entire
    assert len(block) == 16
    with pytest.raises(ValueError):
        MaskBlock(indices=block.indices, grid=4)


@pytest.mark.parametrize('indices', [
    (),
    ((0, 0), (0, 2)),
    ((1, 0), (0, 0)),
    ((0, 4),),
])
def test_bad_mask_blocks(indices):
    with pytest.raises(ValueError):
        MaskBlock(indices=indices, grid=4)
