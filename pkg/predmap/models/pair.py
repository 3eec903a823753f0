"""
Image-caption pair, the raw unit every training triplet is forged from
"""

from dataclasses import dataclass

import numpy as np


MIN_IMAGE_SIDE = 32


@dataclass(slots=True, eq=False)
class RawPair:
    """
    Image-caption pair.
    image - float raster of shape (H, W, 3) with values in [0, 1]
    caption - non-empty text describing the image
    id - unique identifier of the pair
    """
    image: np.ndarray
    caption: str
    id: str

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f'pair {self.id}: expected (H, W, 3) raster, '
                             f'got shape {self.image.shape}')
        height, width = self.image.shape[:2]
        if height < MIN_IMAGE_SIDE or width < MIN_IMAGE_SIDE:
            raise ValueError(f'pair {self.id}: image {width}x{height} is smaller than '
                             f'{MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}')
        if not self.caption.strip():
            raise ValueError(f'pair {self.id}: empty caption')

    @property
    def width(self) -> int:
        """ Image width in pixels """
        return int(self.image.shape[1])

    @property
    def height(self) -> int:
        """ Image height in pixels """
        return int(self.image.shape[0])
